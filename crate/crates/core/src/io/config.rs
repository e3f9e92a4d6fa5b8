//! `key = value` run configuration. `#` starts a comment. Unknown and repeated
//! keys are errors; absent keys take their defaults with a logged notice.

use std::collections::HashMap;
use std::path::Path;

use super::{atomic_write, read_text};
use crate::adjoint::LossMode;
use crate::domain::{CaptureConfig, GridSpec, Map2, ParamMaps, SourceModel};
use crate::error::{Result, TsfError};
use crate::forward::{Medium, StabilityReport};
use crate::inverse::{OptimConfig, Roi};

/// Known keys with their default values, in file order.
const KEYS: &[(&str, &str)] = &[
    ("nx", "100"),
    ("ny", "100"),
    ("nz", "60"),
    ("pitch_m", "0.0005"),
    ("dt_s", "0.25"),
    ("t_on_s", "20"),
    ("frame_dt_s", "0.25"),
    ("n_frames", "161"),
    ("ambient_K", "300"),
    ("amplitude", "1"),
    ("center_x", "50"),
    ("center_y", "50"),
    ("sigma_px", "4"),
    ("k_true", "1.069e-7"),
    ("eps_prime_true", "2"),
    ("k_bottom_true", "1.069e-7"),
    ("top_thickness_m", "0"),
    ("gaussian_sigma_K", "0.05"),
    ("seed", "0"),
    ("epochs", "400"),
    ("lr0", "0.01"),
    ("lr_decay", "0.5"),
    ("decay_every", "100"),
    ("adam_beta1", "0.9"),
    ("adam_beta2", "0.9"),
    ("adam_eps", "1e-8"),
    ("k_min", "1e-9"),
    ("k_max", "auto"),
    ("eps_min", "0"),
    ("eps_max", "10"),
    ("loss_mode", "kelvin"),
    ("roi", "auto"),
    ("roi_floor_K", "0.05"),
    ("noise_floor_K", "0.5"),
    ("loss_threshold", "0.01"),
];

/// Parameters the `simulate` command generates data from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSpec {
    pub k: f64,
    pub eps_prime: f64,
    /// Diffusivity below `top_thickness_m`; ignored when the thickness is 0.
    pub k_bottom: f64,
    pub top_thickness_m: f64,
}

impl TruthSpec {
    pub fn is_layered(&self) -> bool {
        self.top_thickness_m > 0.0
    }

    pub fn params(&self, grid: &GridSpec) -> Result<ParamMaps> {
        ParamMaps::uniform(grid.nx, grid.ny, self.k, self.eps_prime)
    }

    pub fn medium(&self, grid: &GridSpec) -> Result<Medium> {
        if self.is_layered() {
            let layers = grid.layers_for_thickness(self.top_thickness_m)?;
            Medium::layered(grid, layers, self.k, self.k_bottom, Map2::filled(grid.nx, grid.ny, self.eps_prime))
        } else {
            Medium::from_maps(&self.params(grid)?, grid)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub capture: CaptureConfig,
    pub source: SourceModel,
    pub truth: TruthSpec,
    pub optim: OptimConfig,
    pub noise_sigma_k: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::parse("", "defaults").expect("built-in defaults are valid")
    }
}

struct Values<'a> {
    map: HashMap<&'a str, &'a str>,
    context: &'a str,
}

impl Values<'_> {
    fn raw(&self, key: &str) -> &str {
        self.map.get(key).copied().expect("every key is filled")
    }

    fn err(&self, key: &str, what: &str) -> TsfError {
        TsfError::format(self.context, format!("{key} must be {what}, got '{}'", self.raw(key)))
    }

    fn real(&self, key: &str) -> Result<f64> {
        self.raw(key)
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(key, "a finite number"))
    }

    fn count(&self, key: &str) -> Result<usize> {
        self.raw(key).parse::<usize>().map_err(|_| self.err(key, "a non-negative integer"))
    }

    fn seed(&self, key: &str) -> Result<u64> {
        self.raw(key).parse::<u64>().map_err(|_| self.err(key, "a 64-bit unsigned integer"))
    }
}

fn fmt_roi(roi: Roi) -> String {
    match roi {
        Roi::Auto => "auto".into(),
        Roi::Full => "full".into(),
        Roi::Radius(r) => r.to_string(),
    }
}

impl RunConfig {
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut given: HashMap<&str, &str> = HashMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = format!("{context}:{}", n + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TsfError::format(&at, format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(TsfError::format(&at, format!("unknown key '{key}'")));
            }
            if given.insert(key, value).is_some() {
                return Err(TsfError::format(&at, format!("duplicate key '{key}'")));
            }
        }
        let mut map = given.clone();
        for (key, default) in KEYS {
            if !given.contains_key(key) {
                if !text.is_empty() {
                    log::info!("{context}: '{key}' not set, using default {default}");
                }
                map.insert(key, default);
            }
        }
        let v = Values { map, context };

        let capture = CaptureConfig {
            t_on_s: v.real("t_on_s")?,
            frame_dt_s: v.real("frame_dt_s")?,
            n_frames: v.count("n_frames")?,
            ambient_k: v.real("ambient_K")?,
        };
        let wrap = |e: TsfError| TsfError::format(context, e.to_string());
        let pitch = v.real("pitch_m")?;
        let mut grid = GridSpec::new(v.count("nx")?, v.count("ny")?, v.count("nz")?, pitch, v.real("dt_s")?, 0)
            .map_err(wrap)?;
        capture.validate().map_err(wrap)?;
        grid.n_steps = (capture.n_frames - 1) * capture.substeps(&grid).map_err(wrap)?;

        let source = SourceModel {
            amplitude: v.real("amplitude")?,
            center_x: v.real("center_x")?,
            center_y: v.real("center_y")?,
            sigma_px: v.real("sigma_px")?,
            t_on_s: capture.t_on_s,
        };
        source.validate().map_err(wrap)?;

        let truth = TruthSpec {
            k: v.real("k_true")?,
            eps_prime: v.real("eps_prime_true")?,
            k_bottom: v.real("k_bottom_true")?,
            top_thickness_m: v.real("top_thickness_m")?,
        };

        let k_max = match v.raw("k_max") {
            "auto" => StabilityReport::max_stable_k(&grid),
            _ => v.real("k_max")?,
        };
        let loss_mode = LossMode::parse(v.raw("loss_mode")).ok_or_else(|| v.err("loss_mode", "kelvin or normalized"))?;
        let roi = match v.raw("roi") {
            "auto" => Roi::Auto,
            "full" => Roi::Full,
            _ => Roi::Radius(v.real("roi").map_err(|_| v.err("roi", "auto, full or a radius in pixels"))?),
        };
        let optim = OptimConfig {
            epochs: v.count("epochs")?,
            lr0: v.real("lr0")?,
            lr_decay: v.real("lr_decay")?,
            decay_every: v.count("decay_every")?,
            adam_beta1: v.real("adam_beta1")?,
            adam_beta2: v.real("adam_beta2")?,
            adam_eps: v.real("adam_eps")?,
            k_bounds: (v.real("k_min")?, k_max),
            eps_bounds: (v.real("eps_min")?, v.real("eps_max")?),
            loss_mode,
            roi,
            roi_floor_k: v.real("roi_floor_K")?,
            noise_floor_k: v.real("noise_floor_K")?,
            loss_threshold: v.real("loss_threshold")?,
            ..OptimConfig::default()
        };
        optim.validate().map_err(wrap)?;

        let noise_sigma_k = v.real("gaussian_sigma_K")?;
        if noise_sigma_k < 0.0 {
            return Err(v.err("gaussian_sigma_K", ">= 0"));
        }
        Ok(RunConfig {
            grid,
            capture,
            source,
            truth,
            optim,
            noise_sigma_k,
            seed: v.seed("seed")?,
        })
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn render(&self) -> String {
        let o = &self.optim;
        let values: Vec<String> = vec![
            self.grid.nx.to_string(),
            self.grid.ny.to_string(),
            self.grid.nz.to_string(),
            self.grid.dx.to_string(),
            self.grid.dt.to_string(),
            self.capture.t_on_s.to_string(),
            self.capture.frame_dt_s.to_string(),
            self.capture.n_frames.to_string(),
            self.capture.ambient_k.to_string(),
            self.source.amplitude.to_string(),
            self.source.center_x.to_string(),
            self.source.center_y.to_string(),
            self.source.sigma_px.to_string(),
            self.truth.k.to_string(),
            self.truth.eps_prime.to_string(),
            self.truth.k_bottom.to_string(),
            self.truth.top_thickness_m.to_string(),
            self.noise_sigma_k.to_string(),
            self.seed.to_string(),
            o.epochs.to_string(),
            o.lr0.to_string(),
            o.lr_decay.to_string(),
            o.decay_every.to_string(),
            o.adam_beta1.to_string(),
            o.adam_beta2.to_string(),
            o.adam_eps.to_string(),
            o.k_bounds.0.to_string(),
            o.k_bounds.1.to_string(),
            o.eps_bounds.0.to_string(),
            o.eps_bounds.1.to_string(),
            o.loss_mode.as_str().to_string(),
            fmt_roi(o.roi),
            o.roi_floor_k.to_string(),
            o.noise_floor_k.to_string(),
            o.loss_threshold.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|((k, _), v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::parse(&read_text(path)?, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.render().as_bytes())
    }
}
