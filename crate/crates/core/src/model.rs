//! Model parameters: oxygen dynamics, fluid coupling, sensitivity and
//! consumption functions, forcing, and initial data.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::dynamics::{State, StepperConfig};
use crate::error::{KsnsError, Result};
use crate::spectral::{self, GridSpec, ScalarField, VectorField};

/// `chi(c) = chi0 + chi1_lin c` and `k(c) = kap1 c + kap2 c^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivitySpec {
    pub chi0: f64,
    pub chi1_lin: f64,
    pub kap1: f64,
    pub kap2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityValues {
    pub chi: f64,
    pub chi_prime: f64,
    pub k: f64,
    pub k_prime: f64,
}

impl SensitivitySpec {
    pub fn new(chi0: f64, chi1_lin: f64, kap1: f64, kap2: f64) -> Result<Self> {
        let s = Self { chi0, chi1_lin, kap1, kap2 };
        s.validate()?;
        Ok(s)
    }

    /// Constant sensitivity with linear consumption.
    pub fn constant_chi_linear_k(chi: f64, kap1: f64) -> Result<Self> {
        Self::new(chi, 0.0, kap1, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("chi0", self.chi0),
            ("chi1", self.chi1_lin),
            ("kappa1", self.kap1),
            ("kappa2", self.kap2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(KsnsError::InvalidConfig(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn chi(&self, c: f64) -> f64 {
        self.chi0 + self.chi1_lin * c
    }
    #[inline]
    pub fn chi_prime(&self, _c: f64) -> f64 {
        self.chi1_lin
    }
    #[inline]
    pub fn k(&self, c: f64) -> f64 {
        c * (self.kap1 + self.kap2 * c)
    }
    #[inline]
    pub fn k_prime(&self, c: f64) -> f64 {
        self.kap1 + 2.0 * self.kap2 * c
    }

    /// Weight solving `phi' = phi chi`, `phi(0) = 1`, i.e.
    /// `exp(chi0 c + chi1 c^2 / 2)`.
    #[inline]
    pub fn weight_ode(&self, c: f64) -> f64 {
        (c * (self.chi0 + 0.5 * self.chi1_lin * c)).exp()
    }

    pub fn scaled_chi(&self, factor: f64) -> Self {
        Self { chi0: self.chi0 * factor, chi1_lin: self.chi1_lin * factor, ..*self }
    }
}

/// Evaluates `(chi, chi', k, k')` at a concentration `c >= 0`.
pub fn eval_sensitivity(spec: &SensitivitySpec, c: f64) -> Result<SensitivityValues> {
    if !(c >= 0.0) {
        return Err(KsnsError::OutOfDomain(format!("concentration c = {c} < 0")));
    }
    Ok(SensitivityValues {
        chi: spec.chi(c),
        chi_prime: spec.chi_prime(c),
        k: spec.k(c),
        k_prime: spec.k_prime(c),
    })
}

/// Oxygen equation type: `mu = 1` diffuses, `mu = 0` is pure transport.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Oxygen {
    Hyperbolic,
    Parabolic,
}

impl Oxygen {
    pub fn from_mu(mu: i64) -> Result<Self> {
        match mu {
            0 => Ok(Self::Hyperbolic),
            1 => Ok(Self::Parabolic),
            _ => Err(KsnsError::InvalidConfig(format!("mu = {mu} must be 0 or 1"))),
        }
    }
    pub fn mu(self) -> f64 {
        match self {
            Self::Hyperbolic => 0.0,
            Self::Parabolic => 1.0,
        }
    }
    pub fn code(self) -> u8 {
        self.mu() as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluidModel {
    NavierStokes,
    Stokes,
    None,
}

impl FluidModel {
    pub fn code(self) -> u8 {
        match self {
            Self::NavierStokes => 0,
            Self::Stokes => 1,
            Self::None => 2,
        }
    }
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Self::NavierStokes),
            1 => Ok(Self::Stokes),
            2 => Ok(Self::None),
            _ => Err(KsnsError::Format(format!("unknown fluid code {code}"))),
        }
    }
    pub fn name(self) -> &'static str {
        match self {
            Self::NavierStokes => "navier_stokes",
            Self::Stokes => "stokes",
            Self::None => "none",
        }
    }
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "navier_stokes" => Some(Self::NavierStokes),
            "stokes" => Some(Self::Stokes),
            "none" => Some(Self::None),
            _ => None,
        }
    }
}

/// Exponent and `beta` choice for the Gaussian weight recorded every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsSettings {
    pub weight_p: f64,
    /// `None` selects `beta^2 = 6 p (p - 1) chi_1^2`.
    pub weight_beta: Option<f64>,
}

impl Default for DiagnosticsSettings {
    fn default() -> Self {
        Self { weight_p: 2.0, weight_beta: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub oxygen: Oxygen,
    pub fluid: FluidModel,
    /// Constant forcing gradient; the momentum equation sees `-n grad_phi`.
    pub grad_phi: [f64; 2],
    pub sensitivity: SensitivitySpec,
    pub grid: GridSpec,
    pub t_end: f64,
    pub sample_interval: f64,
    pub stepper: StepperConfig,
    pub diagnostics: DiagnosticsSettings,
}

impl ModelConfig {
    pub fn new(oxygen: Oxygen, fluid: FluidModel, sensitivity: SensitivitySpec, grid: GridSpec) -> Self {
        Self {
            oxygen,
            fluid,
            grad_phi: [0.0, 0.0],
            sensitivity,
            grid,
            t_end: 1.0,
            sample_interval: 0.1,
            stepper: StepperConfig::default(),
            diagnostics: DiagnosticsSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_run()?;
        if !(self.t_end > 0.0) {
            return Err(KsnsError::InvalidConfig(format!("t_end = {} must be > 0", self.t_end)));
        }
        if self.sample_interval > self.t_end {
            return Err(KsnsError::InvalidConfig(format!(
                "sample_interval = {} exceeds t_end = {}",
                self.sample_interval, self.t_end
            )));
        }
        Ok(())
    }

    /// Checks everything except `t_end > 0`, so zero-length runs are allowed.
    pub(crate) fn validate_run(&self) -> Result<()> {
        self.sensitivity.validate()?;
        self.stepper.validate()?;
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(KsnsError::InvalidConfig(format!("t_end = {} must be >= 0", self.t_end)));
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return Err(KsnsError::InvalidConfig(format!(
                "sample_interval = {} must be > 0",
                self.sample_interval
            )));
        }
        if !self.grad_phi.iter().all(|g| g.is_finite()) {
            return Err(KsnsError::InvalidConfig("grad_phi must be finite".into()));
        }
        if !(self.diagnostics.weight_p >= 1.0) {
            return Err(KsnsError::InvalidConfig(format!(
                "weight_p = {} must be >= 1",
                self.diagnostics.weight_p
            )));
        }
        Ok(())
    }
}

/// Gaussian bump `amplitude * exp(-|x - center|^2 / width^2)`, periodized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub amplitude: f64,
    pub center: [f64; 2],
    pub width: f64,
}

impl Blob {
    pub fn new(amplitude: f64, center: [f64; 2], width: f64) -> Self {
        Self { amplitude, center, width }
    }

    /// Integral over the plane (and over the torus, since images are summed).
    pub fn mass(&self) -> f64 {
        PI * self.amplitude * self.width * self.width
    }

    pub fn eval(&self, grid: &GridSpec, x: f64, y: f64) -> f64 {
        let (lx, ly) = (grid.lx(), grid.ly());
        let inv_w2 = 1.0 / (self.width * self.width);
        let mut acc = 0.0;
        for sx in [-1.0, 0.0, 1.0] {
            for sy in [-1.0, 0.0, 1.0] {
                let dx = x - self.center[0] + sx * lx;
                let dy = y - self.center[1] + sy * ly;
                acc += (-(dx * dx + dy * dy) * inv_w2).exp();
            }
        }
        self.amplitude * acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityInit {
    Zero,
    /// Single-cell Taylor-Green vortex with peak speed `amplitude`.
    TaylorGreen(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialConditionSpec {
    pub n_blobs: Vec<Blob>,
    pub c_blobs: Vec<Blob>,
    pub c_background: f64,
    pub velocity: VelocityInit,
}

impl Default for InitialConditionSpec {
    fn default() -> Self {
        Self { n_blobs: vec![], c_blobs: vec![], c_background: 0.0, velocity: VelocityInit::Zero }
    }
}

impl InitialConditionSpec {
    pub fn validate(&self) -> Result<()> {
        for b in self.n_blobs.iter().chain(&self.c_blobs) {
            if !(b.amplitude >= 0.0 && b.amplitude.is_finite()) {
                return Err(KsnsError::InvalidConfig(format!(
                    "blob amplitude {} must be >= 0",
                    b.amplitude
                )));
            }
            if !(b.width > 0.0 && b.width.is_finite()) {
                return Err(KsnsError::InvalidConfig(format!("blob width {} must be > 0", b.width)));
            }
            if !b.center.iter().all(|v| v.is_finite()) {
                return Err(KsnsError::InvalidConfig("blob center must be finite".into()));
            }
        }
        if !(self.c_background >= 0.0 && self.c_background.is_finite()) {
            return Err(KsnsError::InvalidConfig(format!(
                "c_background = {} must be >= 0",
                self.c_background
            )));
        }
        if let VelocityInit::TaylorGreen(a) = self.velocity {
            if !a.is_finite() {
                return Err(KsnsError::InvalidConfig("taylor_green amplitude must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn n_mass(&self) -> f64 {
        self.n_blobs.iter().map(Blob::mass).sum()
    }
}

/// Sampled (undealiased) initial cell density.
pub fn sample_n0(grid: &GridSpec, ic: &InitialConditionSpec) -> ScalarField {
    let g = *grid;
    ScalarField::from_fn(g, |x, y| ic.n_blobs.iter().map(|b| b.eval(&g, x, y)).sum())
}

pub fn sample_c0(grid: &GridSpec, ic: &InitialConditionSpec) -> ScalarField {
    let g = *grid;
    ScalarField::from_fn(g, |x, y| {
        ic.c_background + ic.c_blobs.iter().map(|b| b.eval(&g, x, y)).sum::<f64>()
    })
}

pub fn sample_u0(grid: &GridSpec, ic: &InitialConditionSpec) -> VectorField {
    match ic.velocity {
        VelocityInit::Zero => VectorField::zeros(*grid),
        VelocityInit::TaylorGreen(a) => {
            let kx = 2.0 * PI / grid.lx();
            let ky = 2.0 * PI / grid.ly();
            let s = a / kx.max(ky);
            VectorField {
                x: ScalarField::from_fn(*grid, |x, y| s * ky * (kx * x).sin() * (ky * y).cos()),
                y: ScalarField::from_fn(*grid, |x, y| -s * kx * (kx * x).cos() * (ky * y).sin()),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub chi_k_signs_ok: bool,
    pub k_zero_ok: bool,
    /// `sup |chi(c) - mu k(c)|` over `[0, cmax]`.
    pub sup_chi_minus_mu_k: f64,
    /// `chi_1 = sup chi` over `[0, cmax]`.
    pub chi1_sup: f64,
    /// `p -> chi_1 * cmax * 24 p`; the weighted estimate needs this `<= 1`.
    pub smallness_products: BTreeMap<u32, f64>,
}

impl AssumptionReport {
    pub fn smallness_ok(&self, p: u32) -> Option<bool> {
        self.smallness_products.get(&p).map(|v| *v <= 1.0)
    }
}

pub const SUP_GRID_POINTS: usize = 10_000;

/// Grid supremum of `f` over `[0, cmax]` on [`SUP_GRID_POINTS`] points.
pub fn grid_sup(cmax: f64, f: impl Fn(f64) -> f64) -> f64 {
    let last = (SUP_GRID_POINTS - 1) as f64;
    (0..SUP_GRID_POINTS)
        .map(|i| f(cmax * i as f64 / last))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn validate_assumptions(config: &ModelConfig, c0_max: f64) -> AssumptionReport {
    let s = &config.sensitivity;
    let cmax = c0_max.max(0.0);
    let mu = config.oxygen.mu();
    let last = (SUP_GRID_POINTS - 1) as f64;
    let chi_k_signs_ok = (0..SUP_GRID_POINTS).all(|i| {
        let c = cmax * i as f64 / last;
        s.chi(c) >= 0.0 && s.chi_prime(c) >= 0.0 && s.k(c) >= 0.0 && s.k_prime(c) >= 0.0
    });
    let chi1_sup = grid_sup(cmax, |c| s.chi(c));
    let smallness_products = [2u32, 3, 4, 6, 8]
        .into_iter()
        .map(|p| (p, chi1_sup * cmax * 24.0 * p as f64))
        .collect();
    AssumptionReport {
        chi_k_signs_ok,
        k_zero_ok: s.k(0.0) == 0.0,
        sup_chi_minus_mu_k: grid_sup(cmax, |c| (s.chi(c) - mu * s.k(c)).abs()),
        chi1_sup,
        smallness_products,
    }
}

/// Dealiased copy of `f`.
fn dealiased(f: &ScalarField) -> Result<ScalarField> {
    Ok(spectral::transform_inverse(&spectral::dealias(&spectral::transform_forward(f)?)))
}

/// Builds the `t = 0` state: sampled blobs, dealiased, with projected velocity.
pub fn build_initial_state(config: &ModelConfig, ic: &InitialConditionSpec) -> Result<State> {
    ic.validate()?;
    let g = config.grid;
    let n = dealiased(&sample_n0(&g, ic))?;
    let c = dealiased(&sample_c0(&g, ic))?;
    let u = match config.fluid {
        FluidModel::None => VectorField::zeros(g),
        _ => {
            let raw = sample_u0(&g, ic);
            let sx = spectral::dealias(&spectral::transform_forward(&raw.x)?);
            let sy = spectral::dealias(&spectral::transform_forward(&raw.y)?);
            let (px, py) = spectral::leray_project_spectral(&sx, &sy);
            VectorField { x: spectral::transform_inverse(&px), y: spectral::transform_inverse(&py) }
        }
    };
    let nmax = n.max();
    if n.min() < -1e-8 * nmax {
        return Err(KsnsError::InvalidConfig(format!(
            "initial cell density under-resolved on this grid (dealiased minimum {:e})",
            n.min()
        )));
    }
    Ok(State { t: 0.0, n, c, u, flagged: false })
}
