//! Per-pixel curve fitting on surface images alone.
//!
//! Each pixel's heating curve is fitted to `u_t = k * lap2d(u) + eps' * f`,
//! which ignores heat flowing into depth. On bulk samples the recovered `k`
//! map dips under the beam inside a ring of higher values.

use crate::domain::{GridSpec, Map2, ParamMaps, SourceModel, TsfStack};
use crate::error::{Result, TsfError};

/// Relative determinant below which a pixel's 2x2 system counts as singular.
pub const DEGENERATE_REL_DET: f64 = 1e-12;

/// Forward differences between consecutive frames, K/s.
pub fn temporal_derivative(stack: &TsfStack) -> Result<Vec<Map2>> {
    if stack.frames.len() < 2 {
        return Err(TsfError::invalid("temporal derivative needs at least 2 frames"));
    }
    let dt = stack.capture.frame_dt_s;
    Ok(stack
        .frames
        .windows(2)
        .map(|w| Map2 {
            nx: w[0].nx,
            ny: w[0].ny,
            data: w[1].data.iter().zip(&w[0].data).map(|(b, a)| (b - a) / dt).collect(),
        })
        .collect())
}

/// Five-point Laplacian with replicate ghosts, K/m².
pub fn laplacian2d(frame: &Map2, grid: &GridSpec) -> Result<Map2> {
    if frame.nx != grid.nx || frame.ny != grid.ny {
        return Err(TsfError::invalid(format!(
            "frame is {}x{}, grid surface is {}x{}",
            frame.nx, frame.ny, grid.nx, grid.ny
        )));
    }
    if grid.dx != grid.dy {
        return Err(TsfError::invalid(format!(
            "2D Laplacian needs square pixels, got dx={} dy={}",
            grid.dx, grid.dy
        )));
    }
    let (nx, ny) = (frame.nx, frame.ny);
    let c = 1.0 / (grid.dx * grid.dx);
    let u = |x: usize, y: usize| frame.data[y * nx + x];
    Ok(Map2::from_fn(nx, ny, |x, y| {
        let here = u(x, y);
        let left = u(x.saturating_sub(1), y);
        let right = u((x + 1).min(nx - 1), y);
        let down = u(x, y.saturating_sub(1));
        let up = u(x, (y + 1).min(ny - 1));
        (left + right + down + up - 4.0 * here) * c
    }))
}

/// Raw least-squares maps. `k` and `eps_prime` may be negative where the
/// surface-only model fits badly.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit {
    pub k: Map2,
    pub eps_prime: Map2,
    /// True where the pixel's system was singular; both values are 0 there.
    pub masked: Vec<bool>,
    /// Number of frame pairs that entered each fit.
    pub n_samples: usize,
}

impl BaselineFit {
    /// Clamps negative values to zero so the maps satisfy [`ParamMaps`].
    pub fn to_param_maps(&self) -> Result<ParamMaps> {
        let clamp = |m: &Map2| Map2 {
            nx: m.nx,
            ny: m.ny,
            data: m.data.iter().map(|v| v.max(0.0)).collect(),
        };
        ParamMaps::new(clamp(&self.k), clamp(&self.eps_prime))
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }
}

/// Fits `(k, eps')` per pixel over every consecutive frame pair.
pub fn fit_pixelwise(stack: &TsfStack, src: &SourceModel) -> Result<BaselineFit> {
    stack.validate()?;
    src.validate()?;
    if stack.frames.len() < 3 {
        return Err(TsfError::invalid("pixelwise fit needs at least 3 frames"));
    }
    let grid = stack.grid;
    let (nx, ny) = (stack.nx(), stack.ny());
    let plane = nx * ny;
    let cap = stack.capture;
    let profile = src.profile(nx, ny);
    let u_t = temporal_derivative(stack)?;

    // Accumulate the normal equations of [lap, f] . (k, eps') = u_t.
    let mut saa = vec![0.0; plane];
    let mut sab = vec![0.0; plane];
    let mut sbb = vec![0.0; plane];
    let mut say = vec![0.0; plane];
    let mut sby = vec![0.0; plane];
    for (j, (frame, y)) in stack.frames.iter().zip(&u_t).enumerate() {
        let lap = laplacian2d(frame, &grid)?;
        let on = src.is_active(cap.frame_time(j), cap.frame_dt_s);
        for i in 0..plane {
            let a = lap.data[i];
            let b = if on { profile.data[i] } else { 0.0 };
            let yv = y.data[i];
            saa[i] += a * a;
            sab[i] += a * b;
            sbb[i] += b * b;
            say[i] += a * yv;
            sby[i] += b * yv;
        }
    }

    let mut k = vec![0.0; plane];
    let mut eps = vec![0.0; plane];
    let mut masked = vec![false; plane];
    for i in 0..plane {
        let det = saa[i] * sbb[i] - sab[i] * sab[i];
        if !(det > DEGENERATE_REL_DET * saa[i] * sbb[i]) {
            masked[i] = true;
            continue;
        }
        k[i] = (sbb[i] * say[i] - sab[i] * sby[i]) / det;
        eps[i] = (saa[i] * sby[i] - sab[i] * say[i]) / det;
    }
    Ok(BaselineFit {
        k: Map2::from_vec(nx, ny, k)?,
        eps_prime: Map2::from_vec(nx, ny, eps)?,
        masked,
        n_samples: u_t.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CaptureConfig, TempMode};
    use crate::forward::simulate;

    fn stack_of(frames: Vec<Map2>, frame_dt: f64) -> TsfStack {
        let n = frames.len();
        let grid = GridSpec::new(frames[0].nx, frames[0].ny, 1, 1e-3, frame_dt, n - 1).unwrap();
        let cap = CaptureConfig {
            t_on_s: 0.0,
            frame_dt_s: frame_dt,
            n_frames: n,
            ambient_k: 300.0,
        };
        TsfStack::new(frames, cap, grid, TempMode::Kelvin).unwrap()
    }

    #[test]
    fn derivative_of_constant_and_ramp() {
        let s = stack_of(vec![Map2::filled(3, 2, 300.0); 4], 0.2);
        assert!(temporal_derivative(&s).unwrap().iter().all(|m| m.data.iter().all(|&v| v == 0.0)));

        let ramp = (0..4).map(|t| Map2::filled(3, 2, 300.0 + 0.5 * t as f64)).collect();
        let d = temporal_derivative(&stack_of(ramp, 0.2)).unwrap();
        assert_eq!(d.len(), 3);
        for m in d {
            for v in m.data {
                assert!((v - 2.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn derivative_needs_two_frames() {
        let s = stack_of(vec![Map2::filled(2, 2, 300.0)], 1.0);
        assert!(temporal_derivative(&s).is_err());
    }

    #[test]
    fn laplacian_stencil() {
        let grid = GridSpec::new(5, 5, 1, 1.0, 0.1, 1).unwrap();
        assert!(laplacian2d(&Map2::filled(5, 5, 7.0), &grid).unwrap().data.iter().all(|&v| v == 0.0));

        let mut hot = Map2::filled(5, 5, 0.0);
        hot.set(2, 2, 1.0);
        let l = laplacian2d(&hot, &grid).unwrap();
        assert_eq!(l.get(2, 2), -4.0);
        for (x, y) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(l.get(x, y), 1.0);
        }
        assert_eq!(l.get(1, 1), 0.0);
    }

    #[test]
    fn laplacian_of_gaussian_has_negative_core_and_positive_ring() {
        let grid = GridSpec::new(21, 21, 1, 1e-3, 0.1, 1).unwrap();
        let g = Map2::from_fn(21, 21, |x, y| {
            let r2 = (x as f64 - 10.0).powi(2) + (y as f64 - 10.0).powi(2);
            (-r2 / 8.0).exp()
        });
        let l = laplacian2d(&g, &grid).unwrap();
        assert!(l.get(10, 10) < 0.0);
        assert!(l.get(14, 10) > 0.0 && l.get(10, 14) > 0.0);
    }

    #[test]
    fn laplacian_rejects_anisotropic_or_mismatched() {
        let mut grid = GridSpec::new(4, 4, 1, 1.0, 0.1, 1).unwrap();
        grid.dy = 2.0;
        assert!(laplacian2d(&Map2::filled(4, 4, 0.0), &grid).is_err());
        let grid = GridSpec::new(4, 4, 1, 1.0, 0.1, 1).unwrap();
        assert!(laplacian2d(&Map2::filled(3, 4, 0.0), &grid).is_err());
    }

    fn flat_scene(nz: usize) -> (GridSpec, CaptureConfig, SourceModel) {
        let grid = GridSpec::new(24, 24, nz, 5e-4, 0.25, 40).unwrap();
        let cap = CaptureConfig {
            t_on_s: 5.0,
            frame_dt_s: 0.25,
            n_frames: 41,
            ambient_k: 300.0,
        };
        let src = SourceModel {
            amplitude: 1.0,
            center_x: 11.5,
            center_y: 12.0,
            sigma_px: 3.0,
            t_on_s: 5.0,
        };
        (grid, cap, src)
    }

    #[test]
    fn exact_on_two_dimensional_data() {
        let (grid, cap, src) = flat_scene(1);
        let truth = ParamMaps::new(
            Map2::from_fn(24, 24, |x, y| 0.8e-7 + 0.02e-7 * x as f64 + 0.01e-7 * y as f64),
            Map2::from_fn(24, 24, |x, _| 1.5 + 0.01 * x as f64),
        )
        .unwrap();
        let stack = simulate(&truth, &src, &cap, &grid).unwrap();
        let fit = fit_pixelwise(&stack, &src).unwrap();
        assert_eq!(fit.masked_count(), 0);
        assert_eq!(fit.n_samples, 40);
        for y in 6..18 {
            for x in 6..18 {
                let ek = (fit.k.get(x, y) / truth.k.get(x, y) - 1.0).abs();
                let ee = (fit.eps_prime.get(x, y) / truth.eps_prime.get(x, y) - 1.0).abs();
                assert!(ek < 1e-3, "k at ({x},{y}) off by {ek}");
                assert!(ee < 1e-3, "eps at ({x},{y}) off by {ee}");
            }
        }
    }

    /// Mean of `m` over pixels whose distance from `(cx, cy)` is within half a
    /// pixel of `r`.
    fn ring_mean(m: &Map2, cx: f64, cy: f64, r: f64) -> f64 {
        let (mut sum, mut n) = (0.0, 0);
        for y in 0..m.ny {
            for x in 0..m.nx {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if (d - r).abs() <= 0.5 {
                    sum += m.get(x, y);
                    n += 1;
                }
            }
        }
        sum / n as f64
    }

    #[test]
    fn three_dimensional_data_shows_the_donut() {
        let grid = GridSpec::new(32, 32, 12, 5e-4, 0.25, 160).unwrap();
        let cap = CaptureConfig::reference();
        let src = SourceModel {
            amplitude: 1.0,
            center_x: 16.0,
            center_y: 16.0,
            sigma_px: 4.0,
            t_on_s: 20.0,
        };
        let k_true = 1.069e-7;
        let stack = simulate(&ParamMaps::uniform(32, 32, k_true, 2.0).unwrap(), &src, &cap, &grid).unwrap();
        let fit = fit_pixelwise(&stack, &src).unwrap();
        let center = fit.k.get(16, 16);
        let ring = ring_mean(&fit.k, 16.0, 16.0, 1.5 * src.sigma_px);
        assert!(center < ring, "center {center:e} ring {ring:e}");
        assert!((center - k_true).abs() > 0.05 * k_true);
    }

    #[test]
    fn all_ambient_stack_is_fully_masked() {
        let (grid, cap, src) = flat_scene(1);
        let stack = TsfStack::new(vec![Map2::filled(24, 24, 300.0); 41], cap, grid, TempMode::Kelvin).unwrap();
        let fit = fit_pixelwise(&stack, &src).unwrap();
        assert_eq!(fit.masked_count(), 24 * 24);
        assert!(fit.k.data.iter().all(|&v| v == 0.0));
        let p = fit.to_param_maps().unwrap();
        assert_eq!(p.eps_prime.max(), 0.0);
    }

    #[test]
    fn too_few_frames_is_an_error() {
        let s = stack_of(vec![Map2::filled(4, 4, 300.0); 2], 1.0);
        let src = SourceModel {
            amplitude: 1.0,
            center_x: 2.0,
            center_y: 2.0,
            sigma_px: 1.0,
            t_on_s: 1.0,
        };
        assert!(fit_pixelwise(&s, &src).is_err());
    }

    #[test]
    fn negative_values_clamp_in_param_maps() {
        let fit = BaselineFit {
            k: Map2::from_vec(2, 1, vec![-1e-8, 2e-8]).unwrap(),
            eps_prime: Map2::from_vec(2, 1, vec![0.5, -0.1]).unwrap(),
            masked: vec![false, false],
            n_samples: 3,
        };
        let p = fit.to_param_maps().unwrap();
        assert_eq!(p.k.data, vec![0.0, 2e-8]);
        assert_eq!(p.eps_prime.data, vec![0.5, 0.0]);
    }
}
