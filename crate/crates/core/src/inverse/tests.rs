use super::*;
use crate::domain::CaptureConfig;
use crate::forward::{simulate, simulate_medium};

fn scene(ambient: f64) -> (GridSpec, CaptureConfig, SourceModel) {
    let grid = GridSpec::new(12, 12, 6, 5e-4, 0.25, 24).unwrap();
    let cap = CaptureConfig {
        t_on_s: 3.0,
        frame_dt_s: 0.25,
        n_frames: 25,
        ambient_k: ambient,
    };
    let src = SourceModel {
        amplitude: 2.0,
        center_x: 5.5,
        center_y: 5.5,
        sigma_px: 2.0,
        t_on_s: 3.0,
    };
    (grid, cap, src)
}

fn truth() -> ParamMaps {
    ParamMaps::uniform(12, 12, 8e-8, 2.0).unwrap()
}

fn small_cfg(grid: &GridSpec, epochs: usize) -> OptimConfig {
    OptimConfig {
        epochs,
        roi: Roi::Full,
        ..OptimConfig::stable_for(grid)
    }
}

#[test]
fn lr_schedule_halves_every_hundred_epochs() {
    let cfg = OptimConfig::default();
    assert_eq!(lr_schedule(&cfg, 0), 0.01);
    assert_eq!(lr_schedule(&cfg, 99), 0.01);
    assert_eq!(lr_schedule(&cfg, 100), 0.005);
    assert_eq!(lr_schedule(&cfg, 399), 0.00125);
}

#[test]
fn metal_detection_uses_a_strict_floor() {
    let (grid, cap, src) = scene(300.0);
    let flat = simulate(&ParamMaps::uniform(12, 12, 8e-8, 0.0).unwrap(), &src, &cap, &grid).unwrap();
    assert!(detect_metal(&flat, 0.5));
    let hot = simulate(&truth(), &src, &cap, &grid).unwrap();
    let peak = hot.peak_rise().max();
    assert!(peak > 0.5);
    assert!(!detect_metal(&hot, 0.5));
    // a pixel rising exactly to the floor is not below it
    assert!(!detect_metal(&hot, peak));
    assert!(detect_metal(&hot, peak * (1.0 + 1e-12)));
}

#[test]
fn beam_mask_is_the_half_maximum_disk() {
    let (_, _, src) = scene(300.0);
    let mask = beam_mask(&src, 12, 12);
    let profile = src.profile(12, 12);
    for (inside, v) in mask.iter().zip(&profile.data) {
        assert_eq!(*inside, *v >= 0.5 * src.amplitude * (1.0 - 1e-12));
    }
    let m = Map2::from_fn(12, 12, |x, _| x as f64);
    assert!((masked_mean(&m, &mask).unwrap() - 5.5).abs() < 1e-12);
    assert_eq!(masked_mean(&m, &[false; 144]), None);
}

#[test]
fn auto_roi_covers_the_beam_and_grows_with_the_signal() {
    let (grid, cap, src) = scene(300.0);
    let s = simulate(&truth(), &src, &cap, &grid).unwrap();
    let cfg = OptimConfig::default();
    let roi = roi_mask(&s, &src, &cfg);
    let beam = beam_mask(&src, 12, 12);
    assert!(beam.iter().zip(&roi).all(|(b, r)| !b || *r));
    let full = roi_mask(&s, &src, &OptimConfig { roi: Roi::Full, ..cfg.clone() });
    assert!(full.iter().all(|&r| r));
    let none = roi_mask(&s, &src, &OptimConfig { roi: Roi::Radius(0.0), ..cfg });
    assert_eq!(none.iter().filter(|&&r| r).count(), 0);
}

#[test]
fn estimates_stay_inside_bounds() {
    let (grid, cap, src) = scene(300.0);
    let measured = simulate(&truth(), &src, &cap, &grid).unwrap();
    let mut cfg = small_cfg(&grid, 30);
    cfg.lr0 = 0.3;
    cfg.k_bounds = (5e-8, 9e-8);
    cfg.eps_bounds = (1.0, 1.5);
    let r = recover(&measured, &src, &grid, &cfg).unwrap();
    assert!(r.params.k.data.iter().all(|&k| (5e-8..=9e-8).contains(&k)));
    assert!(r.params.eps_prime.data.iter().all(|&e| (1.0..=1.5).contains(&e)));
    // eps' ceiling sits below the truth, so the fit presses against it
    assert!(r.params.eps_prime.max() == 1.5);
}

#[test]
fn loss_decreases_over_fifty_epoch_windows() {
    let (grid, cap, src) = scene(300.0);
    let measured = simulate(&truth(), &src, &cap, &grid).unwrap();
    let r = recover(&measured, &src, &grid, &small_cfg(&grid, 200)).unwrap();
    let means: Vec<f64> = r
        .loss_history
        .chunks(50)
        .filter(|c| c.len() == 50)
        .map(|c| c.iter().map(|l| l.mse).sum::<f64>() / 50.0)
        .collect();
    assert!(means.len() >= 2, "{} epochs run", r.loss_history.len());
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
}

#[test]
fn recovery_reproduces_its_own_data() {
    let (grid, cap, src) = scene(300.0);
    let measured = simulate(&truth(), &src, &cap, &grid).unwrap();
    let r = recover(&measured, &src, &grid, &small_cfg(&grid, 400)).unwrap();
    let rises: Vec<f64> = measured.frames[1..]
        .iter()
        .flat_map(|f| f.data.iter().zip(&measured.frames[0].data).map(|(v, b)| v - b))
        .collect();
    let mean = rises.iter().sum::<f64>() / rises.len() as f64;
    let var = rises.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rises.len() as f64;
    let fitted = simulate(&r.params, &src, &cap, &grid).unwrap();
    let mse = crate::adjoint::loss_mse(&fitted, &measured).unwrap().mse;
    assert!(mse < 1e-6 * var, "mse {mse:e} vs variance {var:e}");
    assert!(r.converged);
    assert!(!r.metal_flag);
}

#[test]
fn starting_at_the_truth_stops_immediately() {
    let (grid, cap, src) = scene(300.0);
    let p = truth();
    let measured = simulate(&p, &src, &cap, &grid).unwrap();
    let cfg = small_cfg(&grid, 50);
    let r = recover_from(&measured, &src, &grid, &cfg, Some(&p)).unwrap();
    assert_eq!(r.loss_history.len(), 1);
    assert!(r.converged);
    for (a, b) in r.params.k.data.iter().zip(&p.k.data) {
        assert!((a / b - 1.0).abs() < 1e-12);
    }
}

#[test]
fn gradient_vanishes_at_the_minimum() {
    let (grid, cap, src) = scene(300.0);
    let p = truth();
    let measured = simulate(&p, &src, &cap, &grid).unwrap();
    let (_, at_min) = crate::adjoint::grad_params(&p, &src, &cap, &grid, &measured).unwrap();
    let start = ParamMaps::uniform(12, 12, 1.2e-7, 1.0).unwrap();
    let (_, at_start) = crate::adjoint::grad_params(&start, &src, &cap, &grid, &measured).unwrap();
    let norm = |m: &Map2| m.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(norm(&at_min.d_k) <= 1e-8 * norm(&at_start.d_k));
    assert!(norm(&at_min.d_eps_prime) <= 1e-8 * norm(&at_start.d_eps_prime));
}

#[test]
fn ambient_offset_does_not_change_the_estimate() {
    let mut out = Vec::new();
    for ambient in [290.0, 310.0] {
        let (grid, cap, src) = scene(ambient);
        let measured = simulate(&truth(), &src, &cap, &grid).unwrap();
        out.push(recover(&measured, &src, &grid, &small_cfg(&grid, 40)).unwrap());
    }
    for (a, b) in out[0].params.k.data.iter().zip(&out[1].params.k.data) {
        assert!((a / b - 1.0).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn unstable_bounds_are_rejected_before_solving() {
    let (grid, cap, src) = scene(300.0);
    let measured = simulate(&truth(), &src, &cap, &grid).unwrap();
    let cfg = OptimConfig {
        k_bounds: (1e-9, 2.0 * crate::forward::StabilityReport::max_stable_k(&grid)),
        ..small_cfg(&grid, 5)
    };
    let err = recover(&measured, &src, &grid, &cfg).unwrap_err();
    assert!(matches!(err, TsfError::Unstable(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn non_finite_loss_is_divergence() {
    let (grid, cap, src) = scene(300.0);
    let mut measured = simulate(&truth(), &src, &cap, &grid).unwrap();
    measured.frames[3].data[0] = 1e200;
    let err = recover(&measured, &src, &grid, &small_cfg(&grid, 5)).unwrap_err();
    assert!(matches!(err, TsfError::Divergence { epoch: 0 }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn flat_stack_is_flagged_as_metal() {
    let (grid, cap, src) = scene(300.0);
    let measured = simulate(&ParamMaps::uniform(12, 12, 8e-8, 0.0).unwrap(), &src, &cap, &grid).unwrap();
    let r = recover(&measured, &src, &grid, &small_cfg(&grid, 100)).unwrap();
    assert!(r.metal_flag);
    let beam = beam_mask(&src, 12, 12);
    assert!(masked_mean(&r.params.eps_prime, &beam).unwrap() < 0.05);
}

#[test]
fn stagnation_needs_a_full_window() {
    let flat = |n: usize| {
        vec![
            LossReport {
                mse: 1.0,
                per_frame: vec![],
                mode: crate::adjoint::LossMode::Kelvin,
            };
            n
        ]
    };
    assert!(!stagnated(&flat(STAGNATION_WINDOW)));
    assert!(stagnated(&flat(STAGNATION_WINDOW + 1)));
    let mut h = flat(STAGNATION_WINDOW + 1);
    h[0].mse = 2.0;
    assert!(!stagnated(&h));
    h.last_mut().unwrap().mse = 0.0;
    assert!(stagnated(&h));
}

#[test]
fn two_layer_recovers_a_uniform_slab() {
    let (grid, cap, src) = scene(300.0);
    let measured = simulate(&truth(), &src, &cap, &grid).unwrap();
    let r = recover_two_layer(&measured, &src, &grid, &small_cfg(&grid, 400), 1.0e-3).unwrap();
    let m = r.model;
    assert!(m.k_bottom_constrained);
    assert!(r.initial_gradient_ratio > UNCONSTRAINED_RATIO);
    assert!((m.k_top / 8e-8 - 1.0).abs() < 0.02, "{m:?}");
    assert!((m.eps_prime_surface / 2.0 - 1.0).abs() < 0.02, "{m:?}");
}

#[test]
fn full_depth_top_layer_leaves_the_bottom_unconstrained() {
    let (grid, cap, src) = scene(300.0);
    let medium = crate::forward::Medium::from_maps(&truth(), &grid).unwrap();
    let measured = simulate_medium(&medium, &src, &cap, &grid).unwrap();
    let cfg = small_cfg(&grid, 20);
    let depth = grid.nz as f64 * grid.dz;
    let r = recover_two_layer(&measured, &src, &grid, &cfg, depth).unwrap();
    assert!(!r.model.k_bottom_constrained);
    assert_eq!(r.model.k_bottom, to_value(0.5, cfg.k_bounds));
    assert!(recover_two_layer(&measured, &src, &grid, &cfg, 2.0 * depth).is_err());
}
