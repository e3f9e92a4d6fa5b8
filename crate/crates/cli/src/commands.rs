use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use tsf_core::adjoint::gradient_check;
use tsf_core::baseline2d::fit_pixelwise;
use tsf_core::classify::{classify_sample, loo_cv, train, ClassifierKind, ConfusionMatrix, MlpConfig};
use tsf_core::domain::{ParamMaps, TsfStack};
use tsf_core::error::{Result, TsfError};
use tsf_core::forward::{simulate, simulate_medium, StabilityReport};
use tsf_core::inverse::{beam_mask, masked_mean, recover, recover_two_layer, Roi};
use tsf_core::io::{
    atomic_write, load_dataset, read_bundle, read_predictions_csv, write_bundle, write_confusion_csv, write_curve_csv,
    write_loss_csv, write_map_csv, write_map_pgm, BundleMeta, RunConfig,
};
use tsf_core::rng::add_gaussian_noise;

use crate::args::{Command, Model};

const RUN_CONFIG: &str = "run.cfg";

pub enum Outcome {
    Ok,
    /// The command ran but its check did not pass.
    CheckFailed,
}

pub fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Simulate {
            config,
            out,
            noise_sigma,
            seed,
        } => simulate_cmd(&config, &out, noise_sigma, seed),
        Command::Recover {
            input,
            out,
            config,
            epochs,
            lr0,
            roi_radius,
        } => recover_cmd(&input, &out, config, epochs, lr0, roi_radius),
        Command::Recover2 {
            input,
            thickness_m,
            out,
            config,
            epochs,
        } => recover2_cmd(&input, thickness_m, &out, config, epochs),
        Command::Baseline2d { input, out, config } => baseline_cmd(&input, &out, config),
        Command::Gradcheck { config, probes, rel_tol } => gradcheck_cmd(&config, probes, rel_tol),
        Command::Classify {
            manifest,
            window,
            model,
            loo,
            out,
            seed,
            mlp_epochs,
            mlp_lr,
            predictions,
        } => {
            let mut mlp = MlpConfig::with_seed(seed);
            if let Some(e) = mlp_epochs {
                mlp.epochs = e;
            }
            if let Some(lr) = mlp_lr {
                mlp.lr = lr;
            }
            let kind = match model {
                Model::Centroid => ClassifierKind::Centroid,
                Model::Mlp => ClassifierKind::Mlp(mlp),
            };
            match (manifest, predictions) {
                (_, Some(p)) => score_predictions(&p, &out),
                (Some(m), None) => classify_cmd(&m, window, &kind, loo, &out),
                (None, None) => Err(TsfError::InvalidArgument("pass --manifest or --predictions".into())),
            }
        }
        Command::Info { input, config } => info_cmd(&input, config),
    }
}

fn out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| TsfError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Config named on the command line, else `run.cfg` beside the frames.
fn load_config(bundle: &Path, explicit: Option<PathBuf>) -> Result<RunConfig> {
    match explicit {
        Some(p) => RunConfig::load(&p),
        None => {
            let p = bundle.join(RUN_CONFIG);
            if !p.is_file() {
                return Err(TsfError::InvalidArgument(format!(
                    "{} has no {RUN_CONFIG}; pass --config",
                    bundle.display()
                )));
            }
            RunConfig::load(&p)
        }
    }
}

/// Reads a bundle and checks it against the capture and grid in `cfg`.
fn load_matching(bundle: &Path, cfg: &RunConfig) -> Result<TsfStack> {
    let stack = read_bundle(bundle)?;
    let meta = BundleMeta::of(&stack);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12);
    let mut problems = Vec::new();
    if (meta.nx, meta.ny) != (cfg.grid.nx, cfg.grid.ny) {
        problems.push(format!("frames are {}x{}, config grid is {}x{}", meta.nx, meta.ny, cfg.grid.nx, cfg.grid.ny));
    }
    if meta.nt != cfg.capture.n_frames {
        problems.push(format!("bundle has {} frames, config expects {}", meta.nt, cfg.capture.n_frames));
    }
    if !close(meta.dt_s, cfg.capture.frame_dt_s) {
        problems.push(format!("frame interval {} s vs {} s", meta.dt_s, cfg.capture.frame_dt_s));
    }
    if !close(meta.t_on_s, cfg.capture.t_on_s) {
        problems.push(format!("t_on {} s vs {} s", meta.t_on_s, cfg.capture.t_on_s));
    }
    if !close(meta.dx_m, cfg.grid.dx) {
        problems.push(format!("pixel pitch {} m vs {} m", meta.dx_m, cfg.grid.dx));
    }
    if problems.is_empty() {
        Ok(stack)
    } else {
        Err(TsfError::FrameMismatch(format!("{}: {}", bundle.display(), problems.join("; "))))
    }
}

fn simulate_cmd(config: &Path, out: &Path, noise: Option<f64>, seed: Option<u64>) -> Result<Outcome> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(n) = noise {
        cfg.noise_sigma_k = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let medium = cfg.truth.medium(&cfg.grid)?;
    medium.stability(&cfg.grid).into_result()?;
    let mut stack = simulate_medium(&medium, &cfg.source, &cfg.capture, &cfg.grid)?;
    add_gaussian_noise(&mut stack, cfg.noise_sigma_k, cfg.seed)?;
    write_bundle(&stack, out)?;
    cfg.save(&out.join(RUN_CONFIG))?;

    let (cx, cy) = (cfg.source.center_x.round().max(0.0) as usize, cfg.source.center_y.round().max(0.0) as usize);
    let mut pixels = Vec::new();
    for m in [0.0, 1.0, 2.0] {
        let x = (cfg.source.center_x + m * cfg.source.sigma_px).round();
        if x >= 0.0 && (x as usize) < cfg.grid.nx && cy < cfg.grid.ny && !pixels.contains(&(x as usize, cy)) {
            pixels.push((x as usize, cy));
        }
    }
    write_curve_csv(&stack, &pixels, &out.join("curves.csv"))?;
    let peak = stack.peak_rise();
    println!(
        "wrote {} frames of {}x{} to {} (peak rise {:.4} K, centre pixel ({cx}, {cy}))",
        stack.frames.len(),
        stack.nx(),
        stack.ny(),
        out.display(),
        peak.max()
    );
    Ok(Outcome::Ok)
}

fn recover_cmd(
    input: &Path,
    out: &Path,
    config: Option<PathBuf>,
    epochs: Option<usize>,
    lr0: Option<f64>,
    roi_radius: Option<f64>,
) -> Result<Outcome> {
    let mut cfg = load_config(input, config)?;
    if let Some(e) = epochs {
        cfg.optim.epochs = e;
    }
    if let Some(l) = lr0 {
        cfg.optim.lr0 = l;
    }
    if let Some(r) = roi_radius {
        cfg.optim.roi = Roi::Radius(r);
    }
    cfg.optim.validate()?;
    let stack = load_matching(input, &cfg)?;
    let res = recover(&stack, &cfg.source, &cfg.grid, &cfg.optim)?;

    out_dir(out)?;
    let p = &res.params;
    write_map_csv(&p.k, &out.join("k.csv"))?;
    write_map_csv(&p.eps_prime, &out.join("eps_prime.csv"))?;
    write_map_pgm(&p.k, &out.join("k.pgm"), cfg.optim.k_bounds.0, cfg.optim.k_bounds.1)?;
    write_map_pgm(&p.eps_prime, &out.join("eps_prime.pgm"), cfg.optim.eps_bounds.0, cfg.optim.eps_bounds.1)?;
    write_loss_csv(&res.loss_history, &out.join("loss.csv"))?;

    let beam = beam_mask(&cfg.source, cfg.grid.nx, cfg.grid.ny);
    let k_beam = masked_mean(&p.k, &beam).unwrap_or(f64::NAN);
    let e_beam = masked_mean(&p.eps_prime, &beam).unwrap_or(f64::NAN);
    let final_mse = res.loss_history.last().map_or(f64::NAN, |l| l.mse);
    let mut s = String::new();
    let _ = writeln!(s, "converged={}", res.converged);
    let _ = writeln!(s, "metal_flag={}", res.metal_flag);
    let _ = writeln!(s, "epochs_run={}", res.loss_history.len());
    let _ = writeln!(s, "loss_mode={}", cfg.optim.loss_mode.as_str());
    let _ = writeln!(s, "final_mse={final_mse}");
    let _ = writeln!(s, "beam_pixels={}", beam.iter().filter(|&&b| b).count());
    let _ = writeln!(s, "beam_mean_k={k_beam}");
    let _ = writeln!(s, "beam_mean_eps_prime={e_beam}");
    let _ = writeln!(s, "k_true={}", cfg.truth.k);
    let _ = writeln!(s, "beam_k_rel_err={}", k_beam / cfg.truth.k - 1.0);
    atomic_write(&out.join("summary.txt"), s.as_bytes())?;
    print!("{s}");
    if res.metal_flag {
        println!("no pixel rose above {} K: sample treated as a conductor", cfg.optim.noise_floor_k);
    }
    Ok(Outcome::Ok)
}

fn recover2_cmd(
    input: &Path,
    thickness_m: f64,
    out: &Path,
    config: Option<PathBuf>,
    epochs: Option<usize>,
) -> Result<Outcome> {
    let mut cfg = load_config(input, config)?;
    if let Some(e) = epochs {
        cfg.optim.epochs = e;
    }
    let stack = load_matching(input, &cfg)?;
    let res = recover_two_layer(&stack, &cfg.source, &cfg.grid, &cfg.optim, thickness_m)?;
    out_dir(out)?;
    write_loss_csv(&res.loss_history, &out.join("loss.csv"))?;
    let m = res.model;
    let mut s = String::new();
    let _ = writeln!(s, "converged={}", res.converged);
    let _ = writeln!(s, "top_thickness_m={}", m.top_thickness_m);
    let _ = writeln!(s, "k_top={}", m.k_top);
    let _ = writeln!(s, "k_bottom={}", m.k_bottom);
    let _ = writeln!(s, "k_bottom_constrained={}", m.k_bottom_constrained);
    let _ = writeln!(s, "eps_prime_surface={}", m.eps_prime_surface);
    let _ = writeln!(s, "initial_gradient_ratio={}", res.initial_gradient_ratio);
    atomic_write(&out.join("summary.txt"), s.as_bytes())?;
    print!("{s}");
    if !m.k_bottom_constrained {
        println!("warning: the data does not constrain k_bottom; its value is the starting guess");
    }
    Ok(Outcome::Ok)
}

fn baseline_cmd(input: &Path, out: &Path, config: Option<PathBuf>) -> Result<Outcome> {
    let cfg = load_config(input, config)?;
    let stack = load_matching(input, &cfg)?;
    let fit = fit_pixelwise(&stack, &cfg.source)?;
    out_dir(out)?;
    write_map_csv(&fit.k, &out.join("k.csv"))?;
    write_map_csv(&fit.eps_prime, &out.join("eps_prime.csv"))?;
    let mut s = String::new();
    let _ = writeln!(s, "masked_pixels={}", fit.masked_count());
    let _ = writeln!(s, "fit_frames=all");
    let _ = writeln!(s, "samples_per_pixel={}", fit.n_samples);
    let beam = beam_mask(&cfg.source, cfg.grid.nx, cfg.grid.ny);
    let _ = writeln!(s, "beam_mean_k={}", masked_mean(&fit.k, &beam).unwrap_or(f64::NAN));
    atomic_write(&out.join("summary.txt"), s.as_bytes())?;
    print!("{s}");
    Ok(Outcome::Ok)
}

fn gradcheck_cmd(config: &Path, probes: usize, rel_tol: f64) -> Result<Outcome> {
    let cfg = RunConfig::load(config)?;
    let truth = cfg.truth.params(&cfg.grid)?;
    let mut measured = simulate(&truth, &cfg.source, &cfg.capture, &cfg.grid)?;
    add_gaussian_noise(&mut measured, cfg.noise_sigma_k, cfg.seed)?;
    // Probe away from the optimum so the gradients are not all zero.
    let at = ParamMaps::uniform(cfg.grid.nx, cfg.grid.ny, 0.9 * cfg.truth.k, 1.1 * cfg.truth.eps_prime)?;
    StabilityReport::for_max_k(cfg.truth.k, &cfg.grid).into_result()?;
    let report = gradient_check(&at, &cfg.source, &cfg.capture, &cfg.grid, &measured, probes, rel_tol, cfg.seed)?;
    for p in &report.probes {
        println!(
            "{:<9} ({:>3}, {:>3}) adjoint {:>13.6e} fd {:>13.6e} rel_err {:.3e} {}",
            p.kind.as_str(),
            p.x,
            p.y,
            p.adjoint,
            p.finite_diff,
            p.rel_err,
            if p.passed { "ok" } else { "FAIL" }
        );
    }
    println!(
        "max rel err {:.3e} (tolerance {:.1e}): {}",
        report.max_rel_err,
        report.rel_tol,
        if report.passed { "PASS" } else { "FAIL" }
    );
    Ok(if report.passed { Outcome::Ok } else { Outcome::CheckFailed })
}

fn report_matrix(m: &ConfusionMatrix, out: &Path) -> Result<Outcome> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(parent)?;
    }
    write_confusion_csv(m, out)?;
    println!("accuracy {:.4} ({}/{})", m.accuracy(), m.trace(), m.total());
    Ok(Outcome::Ok)
}

fn score_predictions(path: &Path, out: &Path) -> Result<Outcome> {
    let pairs = read_predictions_csv(path)?;
    report_matrix(&ConfusionMatrix::from_label_pairs(Vec::new(), &pairs), out)
}

fn classify_cmd(manifest: &Path, window: usize, kind: &ClassifierKind, loo: bool, out: &Path) -> Result<Outcome> {
    let data = load_dataset(manifest, window, |row, stack| {
        let cfg = load_config(&row.bundle_path, None)?;
        let stack = load_matching(&row.bundle_path, &cfg).or_else(|_| Ok::<_, TsfError>(stack.clone()))?;
        let res = recover(&stack, &cfg.source, &cfg.grid, &cfg.optim)?;
        Ok((res.params, res.metal_flag))
    })?;
    println!("{} samples, {} classes, model {}", data.len(), data.n_classes(), kind.name());
    let matrix = if loo {
        loo_cv(&data, kind)?
    } else {
        let model = train(&data, kind)?;
        let pairs = (0..data.len())
            .map(|i| {
                let truth = data.label_names[data.samples[i].label.expect("dataset samples are labelled")].clone();
                Ok((truth, classify_sample(&model, &data.label_names, &data.samples[i], data.metal[i])?))
            })
            .collect::<Result<Vec<_>>>()?;
        ConfusionMatrix::from_label_pairs(data.label_names.clone(), &pairs)
    };
    report_matrix(&matrix, out)
}

fn info_cmd(input: &Path, config: Option<PathBuf>) -> Result<Outcome> {
    let stack = read_bundle(input)?;
    print!("{}", BundleMeta::of(&stack).render());
    let peak = stack.peak_rise();
    println!("peak_rise_K={}", peak.max());
    let cfg_path = config.or_else(|| Some(input.join(RUN_CONFIG)).filter(|p| p.is_file()));
    if let Some(p) = cfg_path {
        let cfg = RunConfig::load(&p)?;
        let truth = StabilityReport::for_max_k(cfg.truth.k.max(cfg.truth.k_bottom), &cfg.grid);
        let bound = StabilityReport::for_max_k(cfg.optim.k_bounds.1, &cfg.grid);
        println!("cfl_truth={:.4} stable={}", truth.cfl_factor, truth.stable);
        println!("cfl_k_max={:.4} stable={}", bound.cfl_factor, bound.stable);
        println!("max_stable_k={}", StabilityReport::max_stable_k(&cfg.grid));
    }
    Ok(Outcome::Ok)
}
