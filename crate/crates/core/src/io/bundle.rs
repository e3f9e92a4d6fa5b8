//! Frame bundle: a directory holding `meta.txt` and `frames.bin`.
//!
//! `frames.bin` is `nt * ny * nx` little-endian `f32` values, frame-major,
//! rows within a frame, x fastest. Bundles carry surface data only, so a read
//! stack has a one-voxel-deep grid whose time step is the frame interval.

use std::path::Path;

use super::{atomic_write, create_dir, read_file, read_text};
use crate::domain::{CaptureConfig, GridSpec, Map2, TempMode, TsfStack};
use crate::error::{Result, TsfError};

pub const FORMAT_VERSION: u32 = 1;

const META_FILE: &str = "meta.txt";
const FRAMES_FILE: &str = "frames.bin";
const KEYS: [&str; 9] = [
    "format_version",
    "nx",
    "ny",
    "nt",
    "dt_s",
    "dx_m",
    "t_on_s",
    "ambient_K",
    "temp_mode",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleMeta {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    /// Frame interval, seconds.
    pub dt_s: f64,
    pub dx_m: f64,
    pub t_on_s: f64,
    pub ambient_k: f64,
    pub temp_mode: TempMode,
}

impl BundleMeta {
    pub fn of(stack: &TsfStack) -> Self {
        BundleMeta {
            nx: stack.nx(),
            ny: stack.ny(),
            nt: stack.frames.len(),
            dt_s: stack.capture.frame_dt_s,
            dx_m: stack.grid.dx,
            t_on_s: stack.capture.t_on_s,
            ambient_k: stack.capture.ambient_k,
            temp_mode: stack.temp_mode,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "format_version={FORMAT_VERSION}\nnx={}\nny={}\nnt={}\ndt_s={}\ndx_m={}\nt_on_s={}\nambient_K={}\ntemp_mode={}\n",
            self.nx,
            self.ny,
            self.nt,
            self.dt_s,
            self.dx_m,
            self.t_on_s,
            self.ambient_k,
            self.temp_mode.as_str()
        )
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let err = |msg: String| TsfError::format(context, msg);
        let mut values: [Option<&str>; 9] = [None; 9];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line {} is not key=value: '{line}'", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let slot = KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| err(format!("unknown key '{key}' on line {}", n + 1)))?;
            if values[slot].replace(value).is_some() {
                return Err(err(format!("duplicate key '{key}' on line {}", n + 1)));
            }
        }
        let get = |i: usize| values[i].ok_or_else(|| err(format!("missing key '{}'", KEYS[i])));
        let version = get(0)?;
        if version != FORMAT_VERSION.to_string() {
            return Err(err(format!(
                "unsupported format_version '{version}' (expected {FORMAT_VERSION})"
            )));
        }
        let count = |i: usize| -> Result<usize> {
            match get(i)?.parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(err(format!("{} must be a positive integer, got '{}'", KEYS[i], get(i)?))),
            }
        };
        let real = |i: usize| -> Result<f64> {
            match get(i)?.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(format!("{} must be a finite number, got '{}'", KEYS[i], get(i)?))),
            }
        };
        let positive = |i: usize| -> Result<f64> {
            let v = real(i)?;
            if v > 0.0 {
                Ok(v)
            } else {
                Err(err(format!("{} must be > 0, got {v}", KEYS[i])))
            }
        };
        let t_on_s = real(6)?;
        if t_on_s < 0.0 {
            return Err(err(format!("t_on_s must be >= 0, got {t_on_s}")));
        }
        let mode = get(8)?;
        let temp_mode = TempMode::parse(mode).ok_or_else(|| err(format!("temp_mode must be kelvin or normalized, got '{mode}'")))?;
        Ok(BundleMeta {
            nx: count(1)?,
            ny: count(2)?,
            nt: count(3)?,
            dt_s: positive(4)?,
            dx_m: positive(5)?,
            t_on_s,
            ambient_k: positive(7)?,
            temp_mode,
        })
    }

    pub fn frame_bytes(&self) -> usize {
        4 * self.nt * self.ny * self.nx
    }
}

pub fn write_bundle(stack: &TsfStack, dir: &Path) -> Result<()> {
    stack.validate()?;
    let meta = BundleMeta::of(stack);
    let mut bytes = Vec::with_capacity(meta.frame_bytes());
    for (t, frame) in stack.frames.iter().enumerate() {
        for (i, &v) in frame.data.iter().enumerate() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(TsfError::invalid(format!(
                    "frame {t} pixel {i} value {v} does not fit in 32-bit float"
                )));
            }
            bytes.extend_from_slice(&f.to_le_bytes());
        }
    }
    create_dir(dir)?;
    atomic_write(&dir.join(FRAMES_FILE), &bytes)?;
    atomic_write(&dir.join(META_FILE), meta.render().as_bytes())
}

pub fn read_bundle(dir: &Path) -> Result<TsfStack> {
    let meta_path = dir.join(META_FILE);
    let meta = BundleMeta::parse(&read_text(&meta_path)?, &meta_path.display().to_string())?;
    let frames_path = dir.join(FRAMES_FILE);
    let ctx = frames_path.display().to_string();
    let bytes = read_file(&frames_path)?;
    if bytes.len() != meta.frame_bytes() {
        return Err(TsfError::format(
            &ctx,
            format!(
                "expected {} bytes for {}x{}x{} frames, found {}",
                meta.frame_bytes(),
                meta.nt,
                meta.ny,
                meta.nx,
                bytes.len()
            ),
        ));
    }
    let plane = meta.nx * meta.ny;
    let mut frames = Vec::with_capacity(meta.nt);
    for (t, chunk) in bytes.chunks_exact(4 * plane).enumerate() {
        let mut data = Vec::with_capacity(plane);
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(TsfError::format(
                    &ctx,
                    format!("non-finite value at byte offset {}", 4 * (t * plane + i)),
                ));
            }
            data.push(v as f64);
        }
        frames.push(Map2 {
            nx: meta.nx,
            ny: meta.ny,
            data,
        });
    }
    let capture = CaptureConfig {
        t_on_s: meta.t_on_s,
        frame_dt_s: meta.dt_s,
        n_frames: meta.nt,
        ambient_k: meta.ambient_k,
    };
    let grid = GridSpec::new(meta.nx, meta.ny, 1, meta.dx_m, meta.dt_s, meta.nt - 1)?;
    TsfStack::new(frames, capture, grid, meta.temp_mode).map_err(|e| TsfError::format(meta_path.display().to_string(), e.to_string()))
}
