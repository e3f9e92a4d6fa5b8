//! Explicit forward-time centered-space heat stepping.
//!
//! The update is `u <- u + dt * (k * lap(u) + eps' * f)`, with `k` and `eps'`
//! given per surface pixel and extruded along depth, and the source depositing
//! only into the `z = 0` layer while it is on. Boundaries are insulated: every
//! missing neighbour is a ghost cell replicating the boundary voxel, which makes
//! the discrete Laplacian a symmetric graph Laplacian and conserves the total
//! temperature sum exactly when `k` is uniform.

use rayon::prelude::*;

use crate::domain::{
    CaptureConfig, Field3, GridSpec, Map2, ParamMaps, SourceModel, TemperatureField, TempMode, TsfStack,
};
use crate::error::{Result, TsfError};

/// Below this many voxels a sweep stays on the calling thread.
const PARALLEL_MIN_VOXELS: usize = 1 << 15;

/// Explicit-scheme stability verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// `max(k) * dt * (2/dx^2 + 2/dy^2 + 2/dz^2)`
    pub cfl_factor: f64,
    pub stable: bool,
}

impl StabilityReport {
    pub fn for_max_k(k_max: f64, grid: &GridSpec) -> Self {
        let cfl_factor = k_max
            * grid.dt
            * (2.0 / (grid.dx * grid.dx) + 2.0 / (grid.dy * grid.dy) + 2.0 / (grid.dz * grid.dz));
        StabilityReport {
            cfl_factor,
            stable: cfl_factor <= 1.0,
        }
    }

    /// Largest diffusivity that keeps the scheme stable on `grid`.
    pub fn max_stable_k(grid: &GridSpec) -> f64 {
        1.0 / (grid.dt * (2.0 / (grid.dx * grid.dx) + 2.0 / (grid.dy * grid.dy) + 2.0 / (grid.dz * grid.dz)))
    }

    pub fn into_result(self) -> Result<Self> {
        if self.stable {
            Ok(self)
        } else {
            Err(TsfError::Unstable(self))
        }
    }
}

pub fn stability_check(params: &ParamMaps, grid: &GridSpec) -> StabilityReport {
    StabilityReport::for_max_k(params.k.max().max(0.0), grid)
}

/// Volumetric material description used by the solver: diffusivity per voxel
/// and absorption factor per surface pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    pub k: Field3,
    pub eps_prime: Map2,
}

impl Medium {
    /// Extrudes the surface maps uniformly along depth.
    pub fn from_maps(params: &ParamMaps, grid: &GridSpec) -> Result<Self> {
        params.validate()?;
        params.check_grid(grid)?;
        let mut values = Vec::with_capacity(grid.voxel_count());
        for _ in 0..grid.nz {
            values.extend_from_slice(&params.k.data);
        }
        Ok(Medium {
            k: Field3 {
                nx: grid.nx,
                ny: grid.ny,
                nz: grid.nz,
                values,
            },
            eps_prime: params.eps_prime.clone(),
        })
    }

    /// Two stacked slabs: `k_top` in the first `top_layers` voxel layers and
    /// `k_bottom` below.
    pub fn layered(grid: &GridSpec, top_layers: usize, k_top: f64, k_bottom: f64, eps_prime: Map2) -> Result<Self> {
        if eps_prime.nx != grid.nx || eps_prime.ny != grid.ny {
            return Err(TsfError::invalid("eps_prime map does not match the grid surface"));
        }
        if top_layers > grid.nz {
            return Err(TsfError::invalid(format!(
                "top layer of {top_layers} voxels is deeper than the grid ({} voxels)",
                grid.nz
            )));
        }
        let plane = grid.plane_len();
        let mut values = vec![k_bottom; grid.voxel_count()];
        values[..top_layers * plane].fill(k_top);
        let medium = Medium {
            k: Field3 {
                nx: grid.nx,
                ny: grid.ny,
                nz: grid.nz,
                values,
            },
            eps_prime,
        };
        medium.validate(grid)?;
        Ok(medium)
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !self.k.matches(grid) {
            return Err(TsfError::invalid("diffusivity field does not match the grid"));
        }
        if self.eps_prime.nx != grid.nx || self.eps_prime.ny != grid.ny {
            return Err(TsfError::invalid("eps_prime map does not match the grid surface"));
        }
        let bad = |v: &f64| !(v.is_finite() && *v >= 0.0);
        if self.k.values.iter().any(bad) || self.eps_prime.data.iter().any(bad) {
            return Err(TsfError::invalid("diffusivity and eps_prime must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn stability(&self, grid: &GridSpec) -> StabilityReport {
        let k_max = self.k.values.iter().copied().fold(0.0, f64::max);
        StabilityReport::for_max_k(k_max, grid)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub plane: usize,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
}

impl Dims {
    pub fn new(grid: &GridSpec) -> Self {
        Dims {
            nx: grid.nx,
            ny: grid.ny,
            nz: grid.nz,
            plane: grid.nx * grid.ny,
            cx: 1.0 / (grid.dx * grid.dx),
            cy: 1.0 / (grid.dy * grid.dy),
            cz: 1.0 / (grid.dz * grid.dz),
        }
    }

    pub fn len(&self) -> usize {
        self.plane * self.nz
    }

    /// Replicate-ghost Laplacian at voxel `i = (x, y, z)`.
    #[inline(always)]
    pub fn lap_at(&self, u: &[f64], x: usize, y: usize, z: usize, i: usize) -> f64 {
        let c = u[i];
        let xm = if x > 0 { u[i - 1] } else { c };
        let xp = if x + 1 < self.nx { u[i + 1] } else { c };
        let ym = if y > 0 { u[i - self.nx] } else { c };
        let yp = if y + 1 < self.ny { u[i + self.nx] } else { c };
        let zm = if z > 0 { u[i - self.plane] } else { c };
        let zp = if z + 1 < self.nz { u[i + self.plane] } else { c };
        (xm + xp - 2.0 * c) * self.cx + (ym + yp - 2.0 * c) * self.cy + (zm + zp - 2.0 * c) * self.cz
    }

    /// Runs `f(z, plane_out)` over every depth plane of `out`, in parallel on
    /// large grids.
    pub fn for_each_plane<F>(&self, out: &mut [f64], f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        if self.len() >= PARALLEL_MIN_VOXELS {
            out.par_chunks_mut(self.plane).enumerate().for_each(|(z, o)| f(z, o));
        } else {
            out.chunks_mut(self.plane).enumerate().for_each(|(z, o)| f(z, o));
        }
    }

    /// `out = lap(u)`.
    pub fn laplacian(&self, u: &[f64], out: &mut [f64]) {
        self.for_each_plane(out, |z, o| {
            let base = z * self.plane;
            for y in 0..self.ny {
                for x in 0..self.nx {
                    let j = y * self.nx + x;
                    o[j] = self.lap_at(u, x, y, z, base + j);
                }
            }
        });
    }
}

pub fn laplacian3d(u: &TemperatureField, grid: &GridSpec) -> Result<Field3> {
    grid.validate()?;
    if !u.field().matches(grid) {
        return Err(TsfError::invalid(format!(
            "field is {}x{}x{}, grid is {}x{}x{}",
            u.field().nx,
            u.field().ny,
            u.field().nz,
            grid.nx,
            grid.ny,
            grid.nz
        )));
    }
    let dims = Dims::new(grid);
    let mut out = vec![0.0; dims.len()];
    dims.laplacian(u.values(), &mut out);
    Ok(Field3 {
        nx: grid.nx,
        ny: grid.ny,
        nz: grid.nz,
        values: out,
    })
}

/// One explicit step of absolute temperature from time `t` to `t + dt`.
pub fn step(
    u: &TemperatureField,
    params: &ParamMaps,
    src: &SourceModel,
    t: f64,
    grid: &GridSpec,
) -> Result<TemperatureField> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(TsfError::invalid(format!("step time must be >= 0, got {t}")));
    }
    src.validate()?;
    let medium = Medium::from_maps(params, grid)?;
    medium.stability(grid).into_result()?;
    let lap = laplacian3d(u, grid)?;
    let dt = grid.dt;
    let plane = grid.plane_len();
    let mut values: Vec<f64> = u
        .values()
        .iter()
        .zip(&lap.values)
        .zip(&medium.k.values)
        .map(|((u, l), k)| u + dt * k * l)
        .collect();
    if src.is_active(t, dt) {
        let fs = src.profile(grid.nx, grid.ny);
        for i in 0..plane {
            values[i] += dt * medium.eps_prime.data[i] * fs.data[i];
        }
    }
    Ok(TemperatureField::from_raw(Field3 {
        nx: grid.nx,
        ny: grid.ny,
        nz: grid.nz,
        values,
    }))
}

/// Precomputed stepping data for one forward model. States are temperature
/// rises above ambient; the model is affine in `u`, and a uniform offset does
/// not diffuse, so this is exact and keeps rises free of the ambient's rounding.
#[derive(Debug, Clone)]
pub(crate) struct Scene {
    pub grid: GridSpec,
    pub dims: Dims,
    /// Diffusivity per voxel.
    pub k: Vec<f64>,
    /// Source profile per surface pixel.
    pub fs: Vec<f64>,
    /// `dt * eps' * f_s` per surface pixel.
    pub heat: Vec<f64>,
    /// Steps `n < active_steps` start while the source is on.
    pub active_steps: usize,
    pub substeps: usize,
    pub n_frames: usize,
}

impl Scene {
    pub fn new(medium: &Medium, src: &SourceModel, cap: &CaptureConfig, grid: &GridSpec) -> Result<Self> {
        src.validate()?;
        let substeps = cap.check_schedule(grid)?;
        medium.validate(grid)?;
        medium.stability(grid).into_result()?;
        let fs = src.profile(grid.nx, grid.ny).data;
        let mut scene = Scene {
            grid: *grid,
            dims: Dims::new(grid),
            k: medium.k.values.clone(),
            fs,
            heat: Vec::new(),
            active_steps: (0..grid.n_steps)
                .take_while(|&n| src.is_active(n as f64 * grid.dt, grid.dt))
                .count(),
            substeps,
            n_frames: cap.n_frames,
        };
        scene.set_eps(&medium.eps_prime.data);
        Ok(scene)
    }

    pub fn set_eps(&mut self, eps: &[f64]) {
        let dt = self.grid.dt;
        self.heat = self.fs.iter().zip(eps).map(|(f, e)| dt * e * f).collect();
    }

    /// Replaces the diffusivity with a surface map extruded along depth.
    pub fn set_k_map(&mut self, k: &[f64]) {
        let plane = self.dims.plane;
        for chunk in self.k.chunks_mut(plane) {
            chunk.copy_from_slice(&k[..plane]);
        }
    }

    /// Advances rise state `v` (time step `n`) into `out`.
    pub fn step_rise(&self, n: usize, v: &[f64], out: &mut [f64]) {
        let d = self.dims;
        let dt = self.grid.dt;
        let heat = (n < self.active_steps).then_some(self.heat.as_slice());
        let k = &self.k;
        d.for_each_plane(out, |z, o| {
            let base = z * d.plane;
            for y in 0..d.ny {
                for x in 0..d.nx {
                    let j = y * d.nx + x;
                    let i = base + j;
                    o[j] = v[i] + dt * k[i] * d.lap_at(v, x, y, z, i);
                }
            }
            if z == 0 {
                if let Some(h) = heat {
                    for (o, h) in o.iter_mut().zip(h) {
                        *o += h;
                    }
                }
            }
        });
    }

    /// Runs the whole schedule and returns the surface rise at each frame.
    pub fn surface_rises(&self) -> Vec<Vec<f64>> {
        let n = self.dims.len();
        let plane = self.dims.plane;
        let mut v = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut frames = Vec::with_capacity(self.n_frames);
        frames.push(v[..plane].to_vec());
        for step in 0..self.grid.n_steps {
            self.step_rise(step, &v, &mut next);
            std::mem::swap(&mut v, &mut next);
            if (step + 1) % self.substeps == 0 {
                frames.push(v[..plane].to_vec());
            }
        }
        frames
    }
}

/// Surface rise above ambient at each frame, without the ambient offset that
/// the kelvin frames of [`simulate_medium`] carry.
pub fn simulate_rises(medium: &Medium, src: &SourceModel, cap: &CaptureConfig, grid: &GridSpec) -> Result<Vec<Map2>> {
    let scene = Scene::new(medium, src, cap, grid)?;
    Ok(scene
        .surface_rises()
        .into_iter()
        .map(|data| Map2 {
            nx: grid.nx,
            ny: grid.ny,
            data,
        })
        .collect())
}

/// Forward-simulates the surface frames for depth-uniform parameter maps,
/// starting from a uniform `ambient_k` volume.
pub fn simulate(params: &ParamMaps, src: &SourceModel, cap: &CaptureConfig, grid: &GridSpec) -> Result<TsfStack> {
    let medium = Medium::from_maps(params, grid)?;
    simulate_medium(&medium, src, cap, grid)
}

/// Like [`simulate`] for an arbitrary per-voxel diffusivity.
pub fn simulate_medium(medium: &Medium, src: &SourceModel, cap: &CaptureConfig, grid: &GridSpec) -> Result<TsfStack> {
    let mut frames = simulate_rises(medium, src, cap, grid)?;
    for f in &mut frames {
        f.data.iter_mut().for_each(|v| *v += cap.ambient_k);
    }
    TsfStack::new(frames, *cap, *grid, TempMode::Kelvin)
}
