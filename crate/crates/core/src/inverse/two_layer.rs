use super::{lr_schedule, stagnated, to_value, Adam, OptimConfig};
use crate::adjoint::{LossReport, Target};
use crate::domain::{GridSpec, Map2, SourceModel, TsfStack};
use crate::error::{Result, TsfError};
use crate::forward::{Medium, Scene};

/// Ratio below which the bottom-layer gradient counts as absent.
pub const UNCONSTRAINED_RATIO: f64 = 1e-12;

/// A slab of known thickness over a substrate, both homogeneous, with one
/// absorption factor for the whole surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLayerModel {
    pub top_thickness_m: f64,
    pub k_top: f64,
    pub k_bottom: f64,
    pub eps_prime_surface: f64,
    /// False when the data carries no information about `k_bottom`.
    pub k_bottom_constrained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerResult {
    pub model: TwoLayerModel,
    pub loss_history: Vec<LossReport>,
    pub converged: bool,
    /// `|dL/dk_bottom| / |dL/dk_top|` at the starting point.
    pub initial_gradient_ratio: f64,
}

fn set_layers(scene: &mut Scene, top_voxels: usize, k_top: f64, k_bottom: f64) {
    scene.k[..top_voxels].fill(k_top);
    scene.k[top_voxels..].fill(k_bottom);
}

/// Recovers `(k_top, k_bottom, eps')` for a two-layer sample.
///
/// A top layer spanning the whole grid is accepted; `k_bottom` then stays at
/// its starting value and is reported as unconstrained.
pub fn recover_two_layer(
    measured: &TsfStack,
    src: &SourceModel,
    grid: &GridSpec,
    cfg: &OptimConfig,
    top_thickness_m: f64,
) -> Result<TwoLayerResult> {
    cfg.validate()?;
    measured.validate()?;
    cfg.check_stable(grid)?;
    let layers = grid.layers_for_thickness(top_thickness_m)?;
    if layers > grid.nz {
        return Err(TsfError::invalid(format!(
            "top layer of {top_thickness_m} m is thicker than the grid depth {} m",
            grid.nz as f64 * grid.dz
        )));
    }
    let plane = grid.plane_len();
    let top_voxels = layers * plane;
    let cap = measured.capture;

    let mut theta = vec![0.5; 3];
    let k_of = |t: f64| to_value(t, cfg.k_bounds);
    let e_of = |t: f64| to_value(t, cfg.eps_bounds);
    let medium = Medium::layered(grid, layers, k_of(0.5), k_of(0.5), Map2::filled(grid.nx, grid.ny, e_of(0.5)))?;
    let mut scene = Scene::new(&medium, src, &cap, grid)?;
    let target = Target::new(measured, &cap, grid, cfg.loss_mode)?;
    let opts = cfg.grad_options();
    let k_span = cfg.k_bounds.1 - cfg.k_bounds.0;
    let e_span = cfg.eps_bounds.1 - cfg.eps_bounds.0;

    let mut adam = Adam::new(3, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut ratio = f64::NAN;
    let mut bottom_constrained = true;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        set_layers(&mut scene, top_voxels, k_of(theta[0]), k_of(theta[1]));
        let eps = e_of(theta[2]);
        scene.set_eps(&vec![eps; plane]);
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

        let g_top: f64 = g.d_k[..top_voxels].iter().sum();
        let g_bottom: f64 = g.d_k[top_voxels..].iter().sum();
        let g_eps: f64 = g.d_eps.iter().sum();
        if epoch == 0 {
            ratio = if g_top == 0.0 { 0.0 } else { (g_bottom / g_top).abs() };
            bottom_constrained = layers < grid.nz && ratio >= UNCONSTRAINED_RATIO;
        }
        let g_bottom = if bottom_constrained { g_bottom } else { 0.0 };
        adam.step(
            &mut theta,
            &[g_top * k_span, g_bottom * k_span, g_eps * e_span],
            lr_schedule(cfg, epoch),
        );
        for t in &mut theta {
            *t = t.clamp(0.0, 1.0);
        }
    }

    let model = TwoLayerModel {
        top_thickness_m,
        k_top: k_of(theta[0]),
        k_bottom: k_of(theta[1]),
        eps_prime_surface: e_of(theta[2]),
        k_bottom_constrained: bottom_constrained,
    };
    let final_loss = history.last().map_or(f64::INFINITY, |l| l.mse);
    Ok(TwoLayerResult {
        model,
        converged: stopped_early || final_loss <= cfg.loss_threshold,
        loss_history: history,
        initial_gradient_ratio: ratio,
    })
}
