//! Core value types shared by the solver, the inversion and the classifier.
//!
//! Everything is in SI units: kelvin, metres, seconds. Volumes are indexed
//! x fastest, then y, then z, and the `z = 0` plane is the surface facing the
//! camera. Surface images are indexed `[y][x]` (row-major).

use crate::error::{Result, TsfError};

/// Voxel geometry and time step of the explicit solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Voxel pitch along x, metres.
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    /// Simulation time step, seconds.
    pub dt: f64,
    /// Total number of simulation steps.
    pub n_steps: usize,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, nz: usize, pitch: f64, dt: f64, n_steps: usize) -> Result<Self> {
        let grid = GridSpec {
            nx,
            ny,
            nz,
            dx: pitch,
            dy: pitch,
            dz: pitch,
            dt,
            n_steps,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// 50 x 50 x 30 mm block at 0.5 mm pitch, 0.25 s steps over 40 s.
    pub fn reference() -> Self {
        GridSpec {
            nx: 100,
            ny: 100,
            nz: 60,
            dx: 5e-4,
            dy: 5e-4,
            dz: 5e-4,
            dt: 0.25,
            n_steps: 160,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(TsfError::invalid(format!(
                "voxel counts must be >= 1, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        for (name, v) in [("dx", self.dx), ("dy", self.dy), ("dz", self.dz), ("dt", self.dt)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TsfError::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn plane_len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    /// Number of voxel layers covering `thickness_m` from the surface, if it
    /// is a positive whole multiple of `dz`.
    pub fn layers_for_thickness(&self, thickness_m: f64) -> Result<usize> {
        let ratio = thickness_m / self.dz;
        let layers = ratio.round();
        if !(thickness_m > 0.0) || layers < 1.0 || (ratio - layers).abs() > 1e-6 * ratio.max(1.0) {
            return Err(TsfError::invalid(format!(
                "thickness {thickness_m} m is not a positive multiple of dz = {} m",
                self.dz
            )));
        }
        Ok(layers as usize)
    }
}

/// Capture schedule of the thermal camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureConfig {
    /// How long the source stays on, seconds.
    pub t_on_s: f64,
    /// Interval between captured frames, seconds.
    pub frame_dt_s: f64,
    pub n_frames: usize,
    /// Initial uniform temperature, kelvin.
    pub ambient_k: f64,
}

impl CaptureConfig {
    /// 20 s heating, one frame per 0.25 s step, 40 s horizon, 300 K start.
    pub fn reference() -> Self {
        CaptureConfig {
            t_on_s: 20.0,
            frame_dt_s: 0.25,
            n_frames: 161,
            ambient_k: 300.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(TsfError::invalid("capture needs at least one frame"));
        }
        if !(self.frame_dt_s.is_finite() && self.frame_dt_s > 0.0) {
            return Err(TsfError::invalid(format!(
                "frame interval must be > 0, got {}",
                self.frame_dt_s
            )));
        }
        if !(self.t_on_s.is_finite() && self.t_on_s >= 0.0) {
            return Err(TsfError::invalid(format!("t_on must be >= 0, got {}", self.t_on_s)));
        }
        if self.t_on_s > self.n_frames as f64 * self.frame_dt_s * (1.0 + 1e-12) {
            return Err(TsfError::invalid(format!(
                "t_on = {} s exceeds the capture span {} x {} s",
                self.t_on_s, self.n_frames, self.frame_dt_s
            )));
        }
        if !(self.ambient_k.is_finite() && self.ambient_k > 0.0) {
            return Err(TsfError::invalid(format!(
                "ambient temperature must be > 0 K, got {}",
                self.ambient_k
            )));
        }
        Ok(())
    }

    /// Simulation steps per captured frame.
    pub fn substeps(&self, grid: &GridSpec) -> Result<usize> {
        let ratio = self.frame_dt_s / grid.dt;
        let whole = ratio.round();
        if whole < 1.0 || (ratio - whole).abs() > 1e-9 * ratio {
            return Err(TsfError::FrameMismatch(format!(
                "frame interval {} s is not an integer multiple of dt = {} s",
                self.frame_dt_s, grid.dt
            )));
        }
        Ok(whole as usize)
    }

    /// Validates both configs together and returns the substep count.
    pub fn check_schedule(&self, grid: &GridSpec) -> Result<usize> {
        grid.validate()?;
        self.validate()?;
        let sub = self.substeps(grid)?;
        let expected = (self.n_frames - 1) * sub;
        if grid.n_steps != expected {
            return Err(TsfError::FrameMismatch(format!(
                "{} frames at {} steps per frame need {} steps, grid has {}",
                self.n_frames, sub, expected, grid.n_steps
            )));
        }
        Ok(sub)
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        frame as f64 * self.frame_dt_s
    }
}

/// A dense 2D array indexed `[y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2 {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
}

impl Map2 {
    pub fn filled(nx: usize, ny: usize, value: f64) -> Self {
        Map2 {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(TsfError::invalid(format!(
                "map of {}x{} needs {} values, got {}",
                nx,
                ny,
                nx * ny,
                data.len()
            )));
        }
        Ok(Map2 { nx, ny, data })
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for y in 0..ny {
            for x in 0..nx {
                data.push(f(x, y));
            }
        }
        Map2 { nx, ny, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.nx + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.nx + x] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Map2) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }
}

/// A dense 3D array, x fastest then y then z.
#[derive(Debug, Clone, PartialEq)]
pub struct Field3 {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub values: Vec<f64>,
}

impl Field3 {
    pub fn filled(grid: &GridSpec, value: f64) -> Self {
        Field3 {
            nx: grid.nx,
            ny: grid.ny,
            nz: grid.nz,
            values: vec![value; grid.voxel_count()],
        }
    }

    pub fn matches(&self, grid: &GridSpec) -> bool {
        self.nx == grid.nx && self.ny == grid.ny && self.nz == grid.nz && self.values.len() == grid.voxel_count()
    }

    pub fn surface(&self) -> Map2 {
        let n = self.nx * self.ny;
        Map2 {
            nx: self.nx,
            ny: self.ny,
            data: self.values[..n].to_vec(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Absolute temperature in every voxel (finite and strictly positive).
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField(Field3);

impl TemperatureField {
    pub fn new(field: Field3) -> Result<Self> {
        if field.values.len() != field.nx * field.ny * field.nz {
            return Err(TsfError::invalid("temperature field size does not match its dimensions"));
        }
        if let Some(i) = field.values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(TsfError::invalid(format!(
                "temperature must be finite and > 0 K, voxel {i} holds {}",
                field.values[i]
            )));
        }
        Ok(TemperatureField(field))
    }

    pub fn uniform(grid: &GridSpec, kelvin: f64) -> Result<Self> {
        Self::new(Field3::filled(grid, kelvin))
    }

    pub(crate) fn from_raw(field: Field3) -> Self {
        TemperatureField(field)
    }

    pub fn field(&self) -> &Field3 {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn into_field(self) -> Field3 {
        self.0
    }
}

/// How the frames of a stack are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TempMode {
    /// Camera-referred temperature in kelvin.
    Kelvin,
    /// `(u - ambient) / max rise`, dimensionless.
    Normalized,
}

impl TempMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TempMode::Kelvin => "kelvin",
            TempMode::Normalized => "normalized",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kelvin" => Some(TempMode::Kelvin),
            "normalized" => Some(TempMode::Normalized),
            _ => None,
        }
    }
}

/// Time-ordered surface frames: the thermal spread function measurement.
///
/// `frames[0]` is the pre-heating state.
#[derive(Debug, Clone, PartialEq)]
pub struct TsfStack {
    pub frames: Vec<Map2>,
    pub capture: CaptureConfig,
    pub grid: GridSpec,
    pub temp_mode: TempMode,
}

impl TsfStack {
    pub fn new(frames: Vec<Map2>, capture: CaptureConfig, grid: GridSpec, temp_mode: TempMode) -> Result<Self> {
        let stack = TsfStack {
            frames,
            capture,
            grid,
            temp_mode,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        self.capture.validate()?;
        if self.frames.len() != self.capture.n_frames {
            return Err(TsfError::FrameMismatch(format!(
                "stack holds {} frames, capture declares {}",
                self.frames.len(),
                self.capture.n_frames
            )));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.nx != self.grid.nx || f.ny != self.grid.ny || f.data.len() != f.nx * f.ny {
                return Err(TsfError::invalid(format!(
                    "frame {t} is {}x{}, expected {}x{}",
                    f.nx, f.ny, self.grid.nx, self.grid.ny
                )));
            }
            if !f.all_finite() {
                return Err(TsfError::invalid(format!("frame {t} holds non-finite values")));
            }
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.grid.nx
    }

    pub fn ny(&self) -> usize {
        self.grid.ny
    }

    /// Per-pixel maximum over frames of `frame - frames[0]`.
    pub fn peak_rise(&self) -> Map2 {
        let base = &self.frames[0];
        let mut peak = Map2::filled(base.nx, base.ny, f64::NEG_INFINITY);
        for frame in &self.frames {
            for ((p, v), b) in peak.data.iter_mut().zip(&frame.data).zip(&base.data) {
                *p = p.max(v - b);
            }
        }
        peak
    }

    /// Keeps the first `n_frames` frames.
    pub fn truncated(&self, n_frames: usize) -> Result<Self> {
        if n_frames == 0 || n_frames > self.frames.len() {
            return Err(TsfError::invalid(format!(
                "cannot truncate {} frames to {n_frames}",
                self.frames.len()
            )));
        }
        let sub = self.capture.substeps(&self.grid)?;
        let mut capture = self.capture;
        capture.n_frames = n_frames;
        capture.t_on_s = capture.t_on_s.min(n_frames as f64 * capture.frame_dt_s);
        let mut grid = self.grid;
        grid.n_steps = (n_frames - 1) * sub;
        TsfStack::new(self.frames[..n_frames].to_vec(), capture, grid, self.temp_mode)
    }

    /// Temperature trace of one surface pixel over all frames.
    pub fn trace(&self, x: usize, y: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.get(x, y)).collect()
    }

    /// Converts a kelvin stack into `(u - ambient) / max rise` units.
    pub fn to_normalized(&self) -> Result<Self> {
        if self.temp_mode == TempMode::Normalized {
            return Ok(self.clone());
        }
        let ambient = self.capture.ambient_k;
        let max_rise = self
            .frames
            .iter()
            .flat_map(|f| f.data.iter())
            .map(|v| v - ambient)
            .fold(0.0, f64::max);
        if max_rise <= 0.0 {
            return Err(TsfError::invalid("stack has no temperature rise to normalize by"));
        }
        let frames = self
            .frames
            .iter()
            .map(|f| Map2 {
                nx: f.nx,
                ny: f.ny,
                data: f.data.iter().map(|v| (v - ambient) / max_rise).collect(),
            })
            .collect();
        TsfStack::new(frames, self.capture, self.grid, TempMode::Normalized)
    }

    /// Working-temperature view of the frames in kelvin.
    ///
    /// The model is linear in the rise, so a normalized stack is read as
    /// `ambient + value` kelvin and the recovered absorption factor absorbs the
    /// unknown scale.
    pub fn kelvin_frames(&self) -> Vec<Map2> {
        match self.temp_mode {
            TempMode::Kelvin => self.frames.clone(),
            TempMode::Normalized => {
                let ambient = self.capture.ambient_k;
                self.frames
                    .iter()
                    .map(|f| Map2 {
                        nx: f.nx,
                        ny: f.ny,
                        data: f.data.iter().map(|v| ambient + v).collect(),
                    })
                    .collect()
            }
        }
    }
}

/// Per-surface-pixel diffusivity and absorption factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMaps {
    /// Thermal diffusivity, m^2/s.
    pub k: Map2,
    /// Absorption factor, normalized units tied to the source amplitude.
    pub eps_prime: Map2,
}

impl ParamMaps {
    pub fn new(k: Map2, eps_prime: Map2) -> Result<Self> {
        let maps = ParamMaps { k, eps_prime };
        maps.validate()?;
        Ok(maps)
    }

    pub fn uniform(nx: usize, ny: usize, k: f64, eps_prime: f64) -> Result<Self> {
        Self::new(Map2::filled(nx, ny, k), Map2::filled(nx, ny, eps_prime))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.k.same_shape(&self.eps_prime) {
            return Err(TsfError::invalid("k and eps_prime maps differ in shape"));
        }
        for (name, m) in [("k", &self.k), ("eps_prime", &self.eps_prime)] {
            if let Some(v) = m.data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(TsfError::invalid(format!("{name} must be finite and >= 0, found {v}")));
            }
        }
        Ok(())
    }

    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.k.nx != grid.nx || self.k.ny != grid.ny {
            return Err(TsfError::invalid(format!(
                "parameter maps are {}x{}, grid surface is {}x{}",
                self.k.nx, self.k.ny, grid.nx, grid.ny
            )));
        }
        Ok(())
    }
}

/// Gaussian beam heating the surface layer for `t_on_s` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceModel {
    pub amplitude: f64,
    /// Beam centre in pixels; fractional values are allowed.
    pub center_x: f64,
    pub center_y: f64,
    pub sigma_px: f64,
    pub t_on_s: f64,
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(TsfError::invalid(format!("source amplitude must be >= 0, got {}", self.amplitude)));
        }
        if !(self.sigma_px.is_finite() && self.sigma_px > 0.0) {
            return Err(TsfError::invalid(format!("beam sigma must be > 0 px, got {}", self.sigma_px)));
        }
        if !(self.center_x.is_finite() && self.center_y.is_finite()) {
            return Err(TsfError::invalid("beam centre must be finite"));
        }
        if !(self.t_on_s.is_finite() && self.t_on_s >= 0.0) {
            return Err(TsfError::invalid(format!("t_on must be >= 0, got {}", self.t_on_s)));
        }
        Ok(())
    }

    /// Spatial profile evaluated at pixel centres.
    pub fn profile(&self, nx: usize, ny: usize) -> Map2 {
        let two_s2 = 2.0 * self.sigma_px * self.sigma_px;
        Map2::from_fn(nx, ny, |x, y| {
            let ddx = x as f64 - self.center_x;
            let ddy = y as f64 - self.center_y;
            self.amplitude * (-(ddx * ddx + ddy * ddy) / two_s2).exp()
        })
    }

    /// Whether the source is on at time `t`. The cutoff is inclusive; `dt`
    /// only sets the tolerance for accumulated step times.
    #[inline]
    pub fn is_active(&self, t: f64, dt: f64) -> bool {
        t <= self.t_on_s + 1e-9 * dt
    }
}

/// Bulk material constants behind the lumped parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissivityComponents {
    /// `1 / (c * rho)`, m^3 K / J.
    pub beta: f64,
    /// Absorptivity at the source wavelength, in [0, 1].
    pub eps_hs: f64,
    /// LWIR emissivity, in (0, 1].
    pub eps: f64,
    /// Specific heat, J/(kg K).
    pub c: f64,
    /// Density, kg/m^3.
    pub rho: f64,
    /// Thermal conductivity, W/(m K).
    pub sigma0: f64,
}

impl EmissivityComponents {
    /// Builds the components from bulk constants, deriving `beta`.
    pub fn from_bulk(sigma0: f64, c: f64, rho: f64, eps_hs: f64, eps: f64) -> Result<Self> {
        diffusivity_from_bulk(sigma0, c, rho)?;
        let comp = EmissivityComponents {
            beta: 1.0 / (c * rho),
            eps_hs,
            eps,
            c,
            rho,
            sigma0,
        };
        Ok(comp)
    }

    pub fn diffusivity(&self) -> Result<f64> {
        diffusivity_from_bulk(self.sigma0, self.c, self.rho)
    }
}

/// Thermal diffusivity `sigma0 / (c * rho)` in m^2/s.
pub fn diffusivity_from_bulk(sigma0: f64, c: f64, rho: f64) -> Result<f64> {
    for (name, v) in [("conductivity", sigma0), ("specific heat", c), ("density", rho)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(TsfError::invalid(format!("{name} must be > 0, got {v}")));
        }
    }
    Ok(sigma0 / (c * rho))
}

/// Lumped absorption factor `beta * eps_hs * eps^(1/4)`.
pub fn eps_prime_from_components(comp: &EmissivityComponents) -> Result<f64> {
    if !(comp.eps > 0.0 && comp.eps <= 1.0) {
        return Err(TsfError::invalid(format!("emissivity must lie in (0, 1], got {}", comp.eps)));
    }
    if !(comp.eps_hs >= 0.0 && comp.eps_hs <= 1.0) {
        return Err(TsfError::invalid(format!("absorptivity must lie in [0, 1], got {}", comp.eps_hs)));
    }
    if !(comp.beta.is_finite() && comp.beta >= 0.0) {
        return Err(TsfError::invalid(format!("beta must be >= 0, got {}", comp.beta)));
    }
    Ok(comp.beta * comp.eps_hs * comp.eps.powf(0.25))
}

/// True surface temperature from the black-body temperature the camera reports.
pub fn true_temp_from_camera(u_c: f64, eps: f64) -> Result<f64> {
    if !(u_c.is_finite() && u_c > 0.0) {
        return Err(TsfError::invalid(format!("camera temperature must be > 0 K, got {u_c}")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(TsfError::invalid(format!("emissivity must lie in (0, 1], got {eps}")));
    }
    Ok(eps.powf(-0.25) * u_c)
}
