//! Recovery of diffusivity and absorption maps from a measured stack.
//!
//! Optimization runs on normalized variables `theta = (v - lo) / (hi - lo)`,
//! so one learning rate serves both maps. Each epoch is a forward sweep, an
//! adjoint sweep, an Adam update and a clamp of `theta` into `[0, 1]`.

mod adam;
mod two_layer;

pub use adam::Adam;
pub use two_layer::{recover_two_layer, TwoLayerModel, TwoLayerResult, UNCONSTRAINED_RATIO};

use crate::adjoint::{Checkpointing, GradOptions, LossMode, LossReport, Target, DEFAULT_MEMORY_BUDGET};
use crate::domain::{GridSpec, Map2, ParamMaps, SourceModel, TsfStack};
use crate::error::{Result, TsfError};
use crate::forward::{Medium, Scene, StabilityReport};

/// Window (in epochs) over which stagnation is measured.
pub const STAGNATION_WINDOW: usize = 20;
/// Relative loss spread over the window below which the run stops.
pub const STAGNATION_REL: f64 = 1e-6;

/// Region of pixels whose parameters are updated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Roi {
    /// Disk around the beam covering every pixel whose rise, averaged over the
    /// capture, exceeds `roi_floor_k`; never narrower than two beam widths.
    Auto,
    /// Disk of fixed radius in pixels around the beam center.
    Radius(f64),
    /// Every pixel.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub k_bounds: (f64, f64),
    pub eps_bounds: (f64, f64),
    pub loss_mode: LossMode,
    pub roi: Roi,
    /// Mean rise (kelvin) that marks a pixel as observed for [`Roi::Auto`].
    pub roi_floor_k: f64,
    /// Floor for [`detect_metal`], kelvin.
    pub noise_floor_k: f64,
    /// A run that uses all its epochs counts as converged when the final loss is
    /// at most this.
    pub loss_threshold: f64,
    pub memory_budget_bytes: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            epochs: 400,
            lr0: 1e-2,
            lr_decay: 0.5,
            decay_every: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.9,
            adam_eps: 1e-8,
            k_bounds: (1e-9, 1e-5),
            eps_bounds: (0.0, 10.0),
            loss_mode: LossMode::Kelvin,
            roi: Roi::Auto,
            roi_floor_k: 0.05,
            noise_floor_k: 0.5,
            loss_threshold: 1e-2,
            memory_budget_bytes: DEFAULT_MEMORY_BUDGET,
        }
    }
}

fn check_bounds(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
        return Err(TsfError::invalid(format!(
            "{name} bounds must satisfy 0 <= min < max, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

impl OptimConfig {
    /// Defaults with the diffusivity ceiling lowered to the largest value the
    /// grid can step stably.
    pub fn stable_for(grid: &GridSpec) -> Self {
        let mut cfg = OptimConfig::default();
        cfg.k_bounds.1 = cfg.k_bounds.1.min(StabilityReport::max_stable_k(grid));
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(TsfError::invalid("epochs must be >= 1"));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(TsfError::invalid(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(TsfError::invalid(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.decay_every == 0 {
            return Err(TsfError::invalid("decay_every must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(TsfError::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(TsfError::invalid("adam_eps must be > 0"));
        }
        check_bounds("k", self.k_bounds)?;
        check_bounds("eps_prime", self.eps_bounds)?;
        if let Roi::Radius(r) = self.roi {
            if !(r.is_finite() && r >= 0.0) {
                return Err(TsfError::invalid(format!("ROI radius must be >= 0, got {r}")));
            }
        }
        if !(self.roi_floor_k >= 0.0 && self.noise_floor_k >= 0.0 && self.loss_threshold >= 0.0) {
            return Err(TsfError::invalid("floors and loss threshold must be >= 0"));
        }
        Ok(())
    }

    pub(crate) fn grad_options(&self) -> GradOptions {
        GradOptions {
            loss_mode: self.loss_mode,
            memory_budget_bytes: self.memory_budget_bytes,
            checkpointing: Checkpointing::Auto,
        }
    }

    pub(crate) fn check_stable(&self, grid: &GridSpec) -> Result<()> {
        StabilityReport::for_max_k(self.k_bounds.1, grid).into_result().map(|_| ())
    }
}

/// `lr0 * lr_decay^(epoch / decay_every)` with integer division.
pub fn lr_schedule(cfg: &OptimConfig, epoch: usize) -> f64 {
    let steps = (epoch / cfg.decay_every.max(1)) as i32;
    cfg.lr0 * cfg.lr_decay.powi(steps)
}

/// True when no pixel ever rises `noise_floor_k` or more above its first frame.
pub fn detect_metal(measured: &TsfStack, noise_floor_k: f64) -> bool {
    measured.peak_rise().data.iter().all(|&r| r < noise_floor_k)
}

/// Rise above the first frame, averaged over the remaining frames.
pub fn mean_rise(measured: &TsfStack) -> Map2 {
    let frames = &measured.frames;
    let mut out = Map2::filled(measured.nx(), measured.ny(), 0.0);
    let n = frames.len().saturating_sub(1).max(1) as f64;
    for f in &frames[1..] {
        for ((o, v), b) in out.data.iter_mut().zip(&f.data).zip(&frames[0].data) {
            *o += (v - b) / n;
        }
    }
    out
}

/// Beam region radius in units of the beam sigma: the half-maximum disk.
pub const BEAM_RADIUS_SIGMAS: f64 = 1.177_410_022_515_474_6;

/// Pixels within `BEAM_RADIUS_SIGMAS * sigma` of the beam centre, row-major.
pub fn beam_mask(src: &SourceModel, nx: usize, ny: usize) -> Vec<bool> {
    let r = BEAM_RADIUS_SIGMAS * src.sigma_px;
    (0..ny)
        .flat_map(|y| (0..nx).map(move |x| (x, y)))
        .map(|(x, y)| (x as f64 - src.center_x).hypot(y as f64 - src.center_y) <= r)
        .collect()
}

/// Mean of `map` over the pixels where `mask` is set; `None` for an empty mask.
pub fn masked_mean(map: &Map2, mask: &[bool]) -> Option<f64> {
    let (sum, n) = map
        .data
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Pixels updated during recovery, row-major.
pub fn roi_mask(measured: &TsfStack, src: &SourceModel, cfg: &OptimConfig) -> Vec<bool> {
    let (nx, ny) = (measured.nx(), measured.ny());
    let dist = |x: usize, y: usize| ((x as f64 - src.center_x).powi(2) + (y as f64 - src.center_y).powi(2)).sqrt();
    let radius = match cfg.roi {
        Roi::Full => return vec![true; nx * ny],
        Roi::Radius(r) => r,
        Roi::Auto => {
            let mean = mean_rise(measured);
            let mut r = 2.0 * src.sigma_px;
            for y in 0..ny {
                for x in 0..nx {
                    if mean.get(x, y) > cfg.roi_floor_k {
                        r = r.max(dist(x, y));
                    }
                }
            }
            r
        }
    };
    (0..ny)
        .flat_map(|y| (0..nx).map(move |x| (x, y)))
        .map(|(x, y)| dist(x, y) <= radius)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub params: ParamMaps,
    /// One entry per epoch actually run, evaluated before that epoch's update.
    pub loss_history: Vec<LossReport>,
    pub converged: bool,
    pub metal_flag: bool,
    pub roi: Vec<bool>,
}

/// Convergence bookkeeping shared by the per-pixel and two-layer loops.
pub(crate) fn stagnated(history: &[LossReport]) -> bool {
    let Some(last) = history.last() else {
        return false;
    };
    if last.mse == 0.0 {
        return true;
    }
    if history.len() <= STAGNATION_WINDOW {
        return false;
    }
    let window = &history[history.len() - STAGNATION_WINDOW - 1..];
    let hi = window.iter().map(|l| l.mse).fold(f64::MIN, f64::max);
    let lo = window.iter().map(|l| l.mse).fold(f64::MAX, f64::min);
    (hi - lo) <= STAGNATION_REL * hi
}

pub(crate) fn to_value(theta: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + theta * (hi - lo)
}

pub(crate) fn to_theta(value: f64, (lo, hi): (f64, f64)) -> f64 {
    ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Recovers per-pixel `k` and `eps'` from `measured`.
///
/// `grid` supplies geometry and time step and must match the stack's schedule.
pub fn recover(measured: &TsfStack, src: &SourceModel, grid: &GridSpec, cfg: &OptimConfig) -> Result<RecoveryResult> {
    recover_from(measured, src, grid, cfg, None)
}

/// Like [`recover`], starting from `init` instead of mid-bounds.
pub fn recover_from(
    measured: &TsfStack,
    src: &SourceModel,
    grid: &GridSpec,
    cfg: &OptimConfig,
    init: Option<&ParamMaps>,
) -> Result<RecoveryResult> {
    cfg.validate()?;
    measured.validate()?;
    cfg.check_stable(grid)?;
    let (nx, ny) = (grid.nx, grid.ny);
    let plane = grid.plane_len();
    let cap = measured.capture;

    let (mut theta_k, mut theta_e) = match init {
        Some(p) => {
            p.check_grid(grid)?;
            (
                p.k.data.iter().map(|&v| to_theta(v, cfg.k_bounds)).collect::<Vec<_>>(),
                p.eps_prime.data.iter().map(|&v| to_theta(v, cfg.eps_bounds)).collect::<Vec<_>>(),
            )
        }
        None => (vec![0.5; plane], vec![0.5; plane]),
    };
    let values = |theta: &[f64], b| theta.iter().map(|&t| to_value(t, b)).collect::<Vec<f64>>();

    let start = ParamMaps::new(
        Map2::from_vec(nx, ny, values(&theta_k, cfg.k_bounds))?,
        Map2::from_vec(nx, ny, values(&theta_e, cfg.eps_bounds))?,
    )?;
    let mut scene = Scene::new(&Medium::from_maps(&start, grid)?, src, &cap, grid)?;
    let target = Target::new(measured, &cap, grid, cfg.loss_mode)?;
    let opts = cfg.grad_options();
    let roi = roi_mask(measured, src, cfg);
    let metal_flag = detect_metal(measured, cfg.noise_floor_k);
    let k_span = cfg.k_bounds.1 - cfg.k_bounds.0;
    let e_span = cfg.eps_bounds.1 - cfg.eps_bounds.0;

    let mut adam = Adam::new(2 * plane, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut theta = vec![0.0; 2 * plane];
    let mut grad = vec![0.0; 2 * plane];
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        scene.set_k_map(&values(&theta_k, cfg.k_bounds));
        scene.set_eps(&values(&theta_e, cfg.eps_bounds));
        let g = scene.gradient(&target, &opts);
        if !g.loss.mse.is_finite() {
            return Err(TsfError::Divergence { epoch });
        }
        log::debug!("epoch {epoch}: loss {:.6e}", g.loss.mse);
        history.push(g.loss);
        if stagnated(&history) {
            stopped_early = true;
            break;
        }

        let d_k = crate::adjoint::collapse_depth(&g.d_k, plane);
        for i in 0..plane {
            let inside = roi[i];
            grad[i] = if inside { d_k[i] * k_span } else { 0.0 };
            grad[plane + i] = if inside { g.d_eps[i] * e_span } else { 0.0 };
        }
        theta[..plane].copy_from_slice(&theta_k);
        theta[plane..].copy_from_slice(&theta_e);
        adam.step(&mut theta, &grad, lr_schedule(cfg, epoch));
        for t in &mut theta {
            *t = t.clamp(0.0, 1.0);
        }
        theta_k.copy_from_slice(&theta[..plane]);
        theta_e.copy_from_slice(&theta[plane..]);
    }

    let params = ParamMaps::new(
        Map2::from_vec(nx, ny, values(&theta_k, cfg.k_bounds))?,
        Map2::from_vec(nx, ny, values(&theta_e, cfg.eps_bounds))?,
    )?;
    let final_loss = history.last().map_or(f64::INFINITY, |l| l.mse);
    Ok(RecoveryResult {
        params,
        converged: stopped_early || final_loss <= cfg.loss_threshold,
        loss_history: history,
        metal_flag,
        roi,
    })
}

#[cfg(test)]
mod tests;
