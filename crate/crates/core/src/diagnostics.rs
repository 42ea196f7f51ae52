//! Scalar functionals of states and trajectories: norms, entropy, vorticity,
//! space-time blow-up integrals, weighted and truncated energies, level-set
//! energies and decay envelopes.

use crate::dynamics::{Eval, State, Trajectory};
use crate::error::{KsnsError, Result};
use crate::model::{self, SensitivitySpec};
use crate::par;
use crate::spectral::{self, ScalarField, SpectrumField, VectorField};

/// Floor inside the logarithm of the entropy density.
pub const ENTROPY_FLOOR: f64 = 1e-300;

/// One row of per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub l1_n: f64,
    pub l2_n: f64,
    pub l4_n: f64,
    pub linf_n: f64,
    pub l2_grad_c: f64,
    pub l2_vorticity: f64,
    pub kinetic: f64,
    pub entropy: f64,
    pub min_n: f64,
    pub max_n: f64,
    pub min_c: f64,
    pub max_c: f64,
    /// Largest divergence mode amplitude of `u`, in physical units.
    pub div_residual: f64,
    pub weighted_energy: f64,
    pub dt: f64,
}

impl DiagnosticsRecord {
    pub const HEADER: &'static str = "t,mass,l1_n,l2_n,l4_n,linf_n,l2_grad_c,l2_vorticity,kinetic,entropy,min_n,max_n,min_c,max_c,div_residual,weighted_energy,dt";

    pub fn values(&self) -> [f64; 17] {
        [
            self.t,
            self.mass,
            self.l1_n,
            self.l2_n,
            self.l4_n,
            self.linf_n,
            self.l2_grad_c,
            self.l2_vorticity,
            self.kinetic,
            self.entropy,
            self.min_n,
            self.max_n,
            self.min_c,
            self.max_c,
            self.div_residual,
            self.weighted_energy,
            self.dt,
        ]
    }

    pub fn from_values(v: &[f64; 17]) -> Self {
        Self {
            t: v[0],
            mass: v[1],
            l1_n: v[2],
            l2_n: v[3],
            l4_n: v[4],
            linf_n: v[5],
            l2_grad_c: v[6],
            l2_vorticity: v[7],
            kinetic: v[8],
            entropy: v[9],
            min_n: v[10],
            max_n: v[11],
            min_c: v[12],
            max_c: v[13],
            div_residual: v[14],
            weighted_energy: v[15],
            dt: v[16],
        }
    }

    /// Column names in CSV order.
    pub fn columns() -> Vec<&'static str> {
        Self::HEADER.split(',').collect()
    }
}

fn sum_field(f: &ScalarField, g: impl Fn(f64) -> f64 + Sync + Send) -> f64 {
    par::sum_by(f.values(), f.grid().nx(), |v| g(*v)) * f.grid().cell_area()
}

fn sum_pair(a: &ScalarField, b: &ScalarField, g: impl Fn(f64, f64) -> f64 + Sync + Send) -> f64 {
    let nx = a.grid().nx();
    let (av, bv) = (a.values(), b.values());
    let rows = par::map_chunks(av, nx, |j, row| {
        row.iter().zip(&bv[j * nx..(j + 1) * nx]).map(|(&x, &y)| g(x, y)).sum::<f64>()
    });
    rows.into_iter().sum::<f64>() * a.grid().cell_area()
}

/// `(sum |f|^p hx hy)^(1/p)`; pass `f64::INFINITY` for the max norm.
pub fn lp_norm(f: &ScalarField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(KsnsError::InvalidExponent(p));
    }
    if p.is_infinite() {
        return Ok(f.max_abs());
    }
    Ok(match p {
        1.0 => sum_field(f, f64::abs),
        2.0 => sum_field(f, |v| v * v).sqrt(),
        4.0 => sum_field(f, |v| (v * v) * (v * v)).powf(0.25),
        _ => sum_field(f, |v| v.abs().powf(p)).powf(1.0 / p),
    })
}

fn entropy_unchecked(n: &ScalarField) -> f64 {
    sum_field(n, |v| {
        let v = v.max(0.0);
        v * v.max(ENTROPY_FLOOR).ln()
    })
}

fn reject_flagged(s: &State) -> Result<()> {
    if s.flagged {
        return Err(KsnsError::StaleState);
    }
    Ok(())
}

/// `int max(n,0) ln max(n, floor)`.
pub fn entropy(s: &State) -> Result<f64> {
    reject_flagged(s)?;
    Ok(entropy_unchecked(&s.n))
}

/// Spectral curl `d_x u_y - d_y u_x`.
pub fn vorticity(u: &VectorField) -> ScalarField {
    let sx = spectral::forward_unchecked(&u.x);
    let sy = spectral::forward_unchecked(&u.y);
    spectral::transform_inverse(&spectral::curl(&sx, &sy))
}

/// `int f^2` from the spectrum (Parseval).
fn spectral_l2_sqr(s: &SpectrumField) -> f64 {
    let g = s.grid();
    s.full_power() * g.cell_area() / g.len() as f64
}

/// Source of the Gaussian weight `exp((beta c)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    Formula,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSpec {
    pub p: f64,
    pub beta: f64,
    pub source: WeightSource,
    /// Upper end of the concentration range used for `chi_1`.
    pub cmax: f64,
}

impl WeightSpec {
    /// `beta^2 = 6 p (p - 1) chi_1^2` with `chi_1 = sup chi` over `[0, cmax]`.
    pub fn formula(p: f64, sens: &SensitivitySpec, cmax: f64) -> Self {
        let chi1 = model::grid_sup(cmax.max(0.0), |c| sens.chi(c));
        Self { p, beta: (6.0 * p * (p - 1.0)).sqrt() * chi1, source: WeightSource::Formula, cmax }
    }

    pub fn manual(p: f64, beta: f64) -> Self {
        Self { p, beta, source: WeightSource::Manual, cmax: f64::NAN }
    }

    /// `exp((beta c)^2)`.
    #[inline]
    pub fn weight_gauss(&self, c: f64) -> f64 {
        (self.beta * c).powi(2).exp()
    }

    #[inline]
    pub fn weight_gauss_prime(&self, c: f64) -> f64 {
        2.0 * self.beta * self.beta * c * self.weight_gauss(c)
    }
}

fn pow_p(v: f64, p: f64) -> f64 {
    if p == 2.0 { v * v } else { v.powf(p) }
}

fn weighted_energy_fields(n: &ScalarField, c: &ScalarField, w: &WeightSpec) -> f64 {
    let p = w.p;
    sum_pair(n, c, |n, c| pow_p(n.max(0.0), p) * w.weight_gauss(c))
}

/// `int max(n,0)^p exp((beta c)^2)`.
pub fn weighted_energy(s: &State, w: &WeightSpec) -> Result<f64> {
    reject_flagged(s)?;
    Ok(weighted_energy_fields(&s.n, &s.c, w))
}

/// Diagnostics for an evaluated state; reuses its spectra.
pub(crate) fn record_from_eval(e: &Eval, w: &WeightSpec, dt: f64) -> DiagnosticsRecord {
    let s = &e.state;
    let g = s.grid();
    let (n, c) = (&s.n, &s.c);
    let vort = spectral::curl(&e.spec.ux, &e.spec.uy);
    let div = spectral::divergence(&e.spec.ux, &e.spec.uy);
    DiagnosticsRecord {
        t: s.t,
        mass: n.integral(),
        l1_n: sum_field(n, f64::abs),
        l2_n: sum_field(n, |v| v * v).sqrt(),
        l4_n: sum_field(n, |v| (v * v) * (v * v)).powf(0.25),
        linf_n: n.max_abs(),
        l2_grad_c: sum_pair(&e.cx, &e.cy, |a, b| a * a + b * b).sqrt(),
        l2_vorticity: spectral_l2_sqr(&vort).sqrt(),
        kinetic: sum_pair(&s.u.x, &s.u.y, |a, b| a * a + b * b),
        entropy: entropy_unchecked(n),
        min_n: n.min(),
        max_n: n.max(),
        min_c: c.min(),
        max_c: c.max(),
        div_residual: div.max_abs() / g.len() as f64,
        weighted_energy: weighted_energy_fields(n, c, w),
        dt,
    }
}

/// Per-step diagnostics of a state.
pub fn record(s: &State, w: &WeightSpec, dt: f64) -> Result<DiagnosticsRecord> {
    Ok(record_from_eval(&Eval::from_state(s)?, w, dt))
}

/// Exponents of a space-time norm `L^q_t L^p_x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedNormSpec {
    pub p: f64,
    pub q: f64,
    pub d: u32,
}

impl MixedNormSpec {
    pub fn new(p: f64, q: f64, d: u32) -> Result<Self> {
        if !(p > 1.0) {
            return Err(KsnsError::InvalidExponent(p));
        }
        if !(q >= 1.0) {
            return Err(KsnsError::InvalidExponent(q));
        }
        Ok(Self { p, q, d })
    }

    /// `d/p + 2/q`; equals 2 for scale-invariant pairs.
    pub fn scaling_sum(&self) -> f64 {
        self.d as f64 / self.p + 2.0 / self.q
    }

    pub fn is_critical(&self) -> bool {
        (self.scaling_sum() - 2.0).abs() <= 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedNormValue {
    pub value: f64,
    pub window: (f64, f64),
}

/// Trapezoid rule for `sum (t_{i+1} - t_i)(y_i + y_{i+1})/2`.
pub fn trapezoid(series: &[(f64, f64)]) -> f64 {
    series.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}

fn record_norm(r: &DiagnosticsRecord, p: f64) -> Option<f64> {
    match p {
        1.0 => Some(r.l1_n),
        2.0 => Some(r.l2_n),
        4.0 => Some(r.l4_n),
        p if p.is_infinite() => Some(r.linf_n),
        _ => None,
    }
}

/// Records before a flagged termination (the flagged step is excluded).
fn clean_records(traj: &Trajectory) -> &[DiagnosticsRecord] {
    let r = &traj.records;
    match traj.termination {
        crate::dynamics::Termination::FlaggedNegative | crate::dynamics::Termination::FlaggedBlowup
            if r.len() > 1 =>
        {
            &r[..r.len() - 1]
        }
        _ => r,
    }
}

/// Trapezoidal `int ||n(t)||_p^q dt`. Uses every step when `p` is one of
/// the recorded norms and the stored samples otherwise.
pub fn mixed_norm_integral(traj: &Trajectory, spec: &MixedNormSpec) -> Result<MixedNormValue> {
    let series: Vec<(f64, f64)> = match record_norm(&traj.records.first().copied().unwrap_or_default(), spec.p) {
        Some(_) => clean_records(traj)
            .iter()
            .map(|r| (r.t, record_norm(r, spec.p).expect("recorded norm").powf(spec.q)))
            .collect(),
        None => traj
            .samples
            .iter()
            .filter(|s| !s.flagged)
            .map(|s| Ok((s.t, lp_norm(&s.n, spec.p)?.powf(spec.q))))
            .collect::<Result<_>>()?,
    };
    if series.is_empty() {
        return Err(KsnsError::EmptyInput("trajectory has no records".into()));
    }
    Ok(MixedNormValue { value: trapezoid(&series), window: (series[0].0, series[series.len() - 1].0) })
}

fn ode_check(s: &State) -> Result<()> {
    reject_flagged(s)
}

/// Value of the three terms of the weighted energy equality at one state:
/// `(E, D, S)` with `E = int w^p phi`, `D = 4(p-1)/p int phi |grad w^{p/2}|^2`,
/// `S = (p-1) int phi^2 chi k w^{p+1}`, `w = n / phi`, `phi` the ODE weight.
pub fn identity_terms(s: &State, p: f64, sens: &SensitivitySpec) -> Result<(f64, f64, f64)> {
    ode_check(s)?;
    let (n, c) = (&s.n, &s.c);
    let phi = c.map(|c| sens.weight_ode(c));
    let w = n.zip_map(&phi, |n, f| n.max(0.0) / f);
    let e = sum_pair(&w, &phi, |w, f| pow_p(w, p) * f);
    let wp = w.map(|w| w.powf(0.5 * p));
    let (gx, gy) = spectral::gradient(&spectral::forward_unchecked(&wp));
    let (gx, gy) = (spectral::transform_inverse(&gx), spectral::transform_inverse(&gy));
    let grad2 = gx.zip_map(&gy, |a, b| a * a + b * b);
    let d = 4.0 * (p - 1.0) / p * sum_pair(&phi, &grad2, |f, g| f * g);
    let src = w.zip_map(c, |w, c| sens.weight_ode(c).powi(2) * sens.chi(c) * sens.k(c) * w.powf(p + 1.0));
    let src = (p - 1.0) * src.integral();
    Ok((e, d, src))
}

/// Normalized residual of `dE/dt + D - S = 0` between two states, with the
/// time derivative a centered difference and `D`, `S` averaged.
pub fn weighted_identity_residual(
    s_prev: &State,
    s_next: &State,
    w: &WeightSpec,
    m: &crate::model::ModelConfig,
) -> Result<f64> {
    if m.oxygen != crate::model::Oxygen::Hyperbolic {
        return Err(KsnsError::WrongModel("the weighted identity holds for mu = 0 only".into()));
    }
    let dt = s_next.t - s_prev.t;
    if !(dt > 0.0) {
        return Err(KsnsError::InvalidSeries(format!("states are not ordered in time (dt = {dt})")));
    }
    let (e0, d0, s0) = identity_terms(s_prev, w.p, &m.sensitivity)?;
    let (e1, d1, s1) = identity_terms(s_next, w.p, &m.sensitivity)?;
    let de = (e1 - e0) / dt;
    let d = 0.5 * (d0 + d1);
    let s = 0.5 * (s0 + s1);
    let scale = de.abs().max(d.abs()).max(s.abs());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((de + d - s).abs() / scale)
}

/// `int (n/phi - K)_+^p phi` with the ODE weight.
pub fn truncated_energy(s: &State, w: &WeightSpec, k: f64, sens: &SensitivitySpec) -> Result<f64> {
    reject_flagged(s)?;
    if !(k >= 0.0) {
        return Err(KsnsError::OutOfDomain(format!("truncation level K = {k} < 0")));
    }
    let p = w.p;
    Ok(sum_pair(&s.n, &s.c, |n, c| {
        let phi = sens.weight_ode(c);
        let v = (n / phi - k).max(0.0);
        if v == 0.0 { 0.0 } else { pow_p(v, p) * phi }
    }))
}

/// Integrand selector for the level-set energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelSetVariant {
    /// `G = n`.
    Density,
    /// `G = n` plus the same truncation of `c`.
    DensityAndOxygen,
    /// `G = n / phi(c)` with the ODE weight.
    DensityOverWeight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetSpec {
    pub nu_exponent: f64,
    pub eta_exponent: f64,
    pub xi_grid: Vec<f64>,
    pub p: f64,
    pub k: f64,
    pub variant: LevelSetVariant,
}

impl LevelSetSpec {
    /// `nu = (1+t)^-1`, `eta = (1+t)^(-d/4)`.
    pub fn parabolic(d: u32, p: f64, xi_grid: Vec<f64>) -> Self {
        Self {
            nu_exponent: -1.0,
            eta_exponent: -(d as f64) / 4.0,
            xi_grid,
            p,
            k: 0.0,
            variant: LevelSetVariant::DensityAndOxygen,
        }
    }

    pub fn nu(&self, t: f64) -> f64 {
        (1.0 + t).powf(self.nu_exponent)
    }
    pub fn eta(&self, t: f64) -> f64 {
        (1.0 + t).powf(self.eta_exponent)
    }

    pub fn theta(&self, d: u32) -> f64 {
        (d as f64 + 2.0) / (d as f64 + 2.0 * self.p)
    }
    pub fn alpha(&self, d: u32) -> f64 {
        2.0 * self.p / (d as f64 + 2.0 * self.p)
    }

    fn validate(&self) -> Result<()> {
        if self.xi_grid.is_empty() {
            return Err(KsnsError::EmptyInput("empty xi grid".into()));
        }
        if !self.xi_grid.windows(2).all(|w| w[1] > w[0]) || !(self.xi_grid[0] > 0.0) {
            return Err(KsnsError::InvalidSeries("xi grid must be positive and increasing".into()));
        }
        if !(self.p >= 1.0) {
            return Err(KsnsError::InvalidExponent(self.p));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetReport {
    /// `(xi, U(xi))` in grid order.
    pub values: Vec<(f64, f64)>,
    /// `max G(0) / eta(0)`, the smallest admissible level.
    pub xi0: f64,
    /// `sup xi eta(t)` over the grid and samples.
    pub k1: f64,
    /// `sup (phi chi^2 + chi phi')` over `[0, cmax]` with the Gaussian weight.
    pub l_sup: f64,
    pub p: f64,
    pub theta: f64,
    pub alpha: f64,
}

impl LevelSetReport {
    /// First grid level where `U <= rel * U(xi0-level)`.
    pub fn vanishing_level(&self, rel: f64) -> Option<f64> {
        let u0 = self.values.first()?.1;
        self.values.iter().find(|(_, u)| *u <= rel * u0).map(|(x, _)| *x)
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1].1 <= w[0].1)
    }
}

/// `U(xi) = int nu(t) int (G - xi eta(t))_+^p dx dt`, trapezoid over samples.
pub fn level_set_u(traj: &Trajectory, ls: &LevelSetSpec, w: &WeightSpec) -> Result<LevelSetReport> {
    ls.validate()?;
    let samples: Vec<&State> = traj.samples.iter().filter(|s| !s.flagged).collect();
    if samples.is_empty() {
        return Err(KsnsError::EmptyInput("trajectory has no samples".into()));
    }
    let sens = traj.config.sensitivity;
    let p = ls.p;
    let g_fields: Vec<Vec<ScalarField>> = samples
        .iter()
        .map(|s| match ls.variant {
            LevelSetVariant::Density => vec![s.n.clone()],
            LevelSetVariant::DensityAndOxygen => vec![s.n.clone(), s.c.clone()],
            LevelSetVariant::DensityOverWeight => {
                vec![s.n.zip_map(&s.c, |n, c| n / sens.weight_ode(c))]
            }
        })
        .collect();

    let values = par::map_jobs(&ls.xi_grid, |&xi| {
        let series: Vec<(f64, f64)> = samples
            .iter()
            .zip(&g_fields)
            .map(|(s, gs)| {
                let level = xi * ls.eta(s.t);
                let inner: f64 = gs.iter().map(|g| sum_field(g, |v| pow_p((v - level).max(0.0), p))).sum();
                (s.t, ls.nu(s.t) * inner)
            })
            .collect();
        (xi, if series.len() == 1 { 0.0 } else { trapezoid(&series) })
    });

    let xi0 = g_fields[0].iter().map(|g| g.max()).fold(0.0, f64::max) / ls.eta(samples[0].t);
    let eta_max = samples.iter().map(|s| ls.eta(s.t)).fold(0.0, f64::max);
    let cmax = samples[0].c.max().max(0.0);
    let l_sup = model::grid_sup(cmax, |c| {
        let chi = sens.chi(c);
        w.weight_gauss(c) * chi * chi + chi * w.weight_gauss_prime(c)
    });
    Ok(LevelSetReport {
        values,
        xi0,
        k1: ls.xi_grid[ls.xi_grid.len() - 1] * eta_max,
        l_sup,
        p,
        theta: ls.theta(2),
        alpha: ls.alpha(2),
    })
}

/// `sup (1+t)^gamma y(t)` over series points with `t` in `[t0, t1]`.
pub fn envelope_of_series(series: &[(f64, f64)], gamma: f64, window: (f64, f64)) -> Result<f64> {
    let (t0, t1) = window;
    if !(t0 < t1) {
        return Err(KsnsError::InvalidSeries(format!("window [{t0}, {t1}] is empty")));
    }
    let tol = 1e-9 * t1.abs().max(1.0);
    let mut sup = f64::NEG_INFINITY;
    let mut any = false;
    for &(t, y) in series {
        if t >= t0 - tol && t <= t1 + tol {
            any = true;
            sup = sup.max((1.0 + t).powf(gamma) * y);
        }
    }
    if !any {
        return Err(KsnsError::EmptyInput(format!("no samples in [{t0}, {t1}]")));
    }
    Ok(sup)
}

/// Which sup-norm the envelope tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeField {
    Density,
    Oxygen,
}

/// `sup (1+t)^gamma ||f(t)||_inf` over the recorded steps in the window.
pub fn decay_envelope(traj: &Trajectory, gamma: f64, window: (f64, f64), field: EnvelopeField) -> Result<f64> {
    let series: Vec<(f64, f64)> = clean_records(traj)
        .iter()
        .map(|r| {
            let y = match field {
                EnvelopeField::Density => r.linf_n,
                EnvelopeField::Oxygen => r.max_c.abs().max(r.min_c.abs()),
            };
            (r.t, y)
        })
        .collect();
    envelope_of_series(&series, gamma, window)
}

/// Least-squares slope of `ln y` against `ln(1+t)` over the window.
pub fn decay_fit(series: &[(f64, f64)], window: (f64, f64)) -> Result<f64> {
    let (t0, t1) = window;
    let pts: Vec<(f64, f64)> = series.iter().copied().filter(|&(t, _)| t >= t0 && t <= t1).collect();
    if pts.len() < 8 {
        return Err(KsnsError::InvalidSeries(format!(
            "{} samples in [{t0}, {t1}], need at least 8",
            pts.len()
        )));
    }
    if let Some(&(t, y)) = pts.iter().find(|&&(_, y)| !(y > 0.0)) {
        return Err(KsnsError::InvalidSeries(format!("nonpositive value {y} at t = {t}")));
    }
    let xs: Vec<f64> = pts.iter().map(|&(t, _)| (1.0 + t).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|&(_, y)| y.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(KsnsError::InvalidSeries("all samples at one time".into()));
    }
    Ok(sxy / sxx)
}

/// `int (1 + d(x)^2)^{1/2} n` with `d` the periodic distance to the box center.
pub fn moment_centered(s: &State) -> Result<f64> {
    reject_flagged(s)?;
    let g = *s.grid();
    let (cx, cy) = (0.5 * g.lx(), 0.5 * g.ly());
    let weight = ScalarField::from_fn(g, |x, y| {
        let dx = (x - cx).abs().min(g.lx() - (x - cx).abs());
        let dy = (y - cy).abs().min(g.ly() - (y - cy).abs());
        (1.0 + dx * dx + dy * dy).sqrt()
    });
    Ok(sum_pair(&weight, &s.n, |w, n| w * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{self, StepperConfig, Termination};
    use crate::model::{Blob, FluidModel, InitialConditionSpec, ModelConfig, Oxygen, VelocityInit};
    use crate::spectral::GridSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn state(n: ScalarField, c: ScalarField) -> State {
        let g = *n.grid();
        State { t: 0.0, n, c, u: VectorField::zeros(g), flagged: false }
    }

    fn traj_of(m: &ModelConfig, states: Vec<State>, w: &WeightSpec) -> Trajectory {
        let records = states.iter().map(|s| record(s, w, 0.0).unwrap()).collect();
        Trajectory {
            config: m.clone(),
            final_state: states[states.len() - 1].clone(),
            samples: states,
            records,
            termination: Termination::Completed,
            note: None,
        }
    }

    fn cfg(g: GridSpec) -> ModelConfig {
        ModelConfig::new(Oxygen::Hyperbolic, FluidModel::None, SensitivitySpec::new(0.5, 0.2, 1.0, 0.0).unwrap(), g)
    }

    #[test]
    fn lp_norm_examples() {
        let g = GridSpec::new(16, 32, 2.0, 3.0).unwrap();
        let a = 1.7;
        let f = ScalarField::constant(g, a);
        for p in [1.0, 2.0, 3.0, 4.0] {
            let want = a * 6.0f64.powf(1.0 / p);
            assert!((lp_norm(&f, p).unwrap() - want).abs() < 1e-12 * want);
        }
        let mut v = vec![0.0; g.len()];
        v[37] = 5.0;
        v[12] = -2.0;
        assert_eq!(lp_norm(&ScalarField::new(g, v).unwrap(), f64::INFINITY).unwrap(), 5.0);
        assert!(matches!(lp_norm(&f, 0.5), Err(KsnsError::InvalidExponent(_))));
    }

    #[test]
    fn l2_norm_matches_parseval() {
        let g = GridSpec::square(32, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = ScalarField::new(g, v).unwrap();
        let spec = spectral_l2_sqr(&spectral::transform_forward(&f).unwrap()).sqrt();
        let l2 = lp_norm(&f, 2.0).unwrap();
        assert!((spec - l2).abs() < 1e-12 * l2);
    }

    #[test]
    fn entropy_examples() {
        let g = GridSpec::square(16, 3.0).unwrap();
        let a = 2.5;
        let s = state(ScalarField::constant(g, a), ScalarField::zeros(g));
        assert!((entropy(&s).unwrap() - a * 9.0 * a.ln()).abs() < 1e-12);
        let s1 = state(ScalarField::constant(g, 1.0), ScalarField::zeros(g));
        assert_eq!(entropy(&s1).unwrap(), 0.0);
        let z = state(ScalarField::zeros(g), ScalarField::zeros(g));
        assert_eq!(entropy(&z).unwrap(), 0.0);
        let mut f = s1.clone();
        f.flagged = true;
        assert!(matches!(entropy(&f), Err(KsnsError::StaleState)));
    }

    #[test]
    fn entropy_of_blob_matches_refined_quadrature() {
        let (l, w, a) = (12.0, 1.5, 3.0);
        let g = GridSpec::square(64, l).unwrap();
        let blob = |x: f64, y: f64| a * (-((x - 6.0).powi(2) + (y - 6.0).powi(2)) / (w * w)).exp();
        let s = state(ScalarField::from_fn(g, blob), ScalarField::zeros(g));
        let e = entropy(&s).unwrap();
        // midpoint rule on a 10x finer lattice
        let m = 640;
        let h = l / m as f64;
        let mut q = 0.0;
        for j in 0..m {
            for i in 0..m {
                let v = blob((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                if v > 0.0 {
                    q += v * v.ln();
                }
            }
        }
        q *= h * h;
        assert!((e - q).abs() < 1e-6, "{e} vs {q}");
    }

    #[test]
    fn vorticity_examples() {
        let l = 3.0;
        let g = GridSpec::square(32, l).unwrap();
        let k = 2.0 * PI / l;
        let u = VectorField { x: ScalarField::zeros(g), y: ScalarField::from_fn(g, |x, _| (k * x).sin()) };
        let w = vorticity(&u);
        let want = ScalarField::from_fn(g, |x, _| k * (k * x).cos());
        for (a, b) in w.values().iter().zip(want.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let psi = ScalarField::from_fn(g, |x, y| (k * x).sin() * (2.0 * k * y).cos());
        let (gx, gy) = spectral::gradient(&spectral::transform_forward(&psi).unwrap());
        let grad = VectorField { x: spectral::transform_inverse(&gx), y: spectral::transform_inverse(&gy) };
        assert!(vorticity(&grad).max_abs() < 1e-12);
    }

    #[test]
    fn taylor_green_vorticity_is_analytic() {
        let l = 4.0;
        let g = GridSpec::square(32, l).unwrap();
        let k = 2.0 * PI / l;
        let a = 0.7;
        let u = model::sample_u0(&g, &InitialConditionSpec { velocity: VelocityInit::TaylorGreen(a), ..Default::default() });
        // s = a / k, u = s k (sin cos, -cos sin), omega = 2 a k sin sin
        let want = ScalarField::from_fn(g, |x, y| 2.0 * a * k * (k * x).sin() * (k * y).sin());
        let w = vorticity(&u);
        for (p, q) in w.values().iter().zip(want.values()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn mixed_norm_examples() {
        let g = GridSpec::square(8, 2.0).unwrap();
        let m = cfg(g);
        let a = 1.5;
        let w = WeightSpec::manual(2.0, 0.0);
        let states: Vec<State> = (0..=10)
            .map(|k| State { t: 0.3 * k as f64, ..state(ScalarField::constant(g, a), ScalarField::zeros(g)) })
            .collect();
        let tr = traj_of(&m, states.clone(), &w);
        let spec = MixedNormSpec::new(2.0, 2.0, 2).unwrap();
        assert_eq!(spec.scaling_sum(), 2.0);
        assert!(spec.is_critical());
        let v = mixed_norm_integral(&tr, &spec).unwrap();
        assert!((v.value - 3.0 * a * a * 4.0).abs() < 1e-12);
        assert_eq!(v.window, (0.0, 3.0));
        // sample path for exponents that are not recorded
        let v3 = mixed_norm_integral(&tr, &MixedNormSpec::new(3.0, 1.0, 2).unwrap()).unwrap();
        assert!((v3.value - 3.0 * a * 4.0f64.powf(1.0 / 3.0)).abs() < 1e-12);

        let zeros: Vec<State> = states.iter().map(|s| State { n: ScalarField::zeros(g), ..s.clone() }).collect();
        assert_eq!(mixed_norm_integral(&traj_of(&m, zeros, &w), &spec).unwrap().value, 0.0);
        let mut empty = tr.clone();
        empty.records.clear();
        assert!(matches!(mixed_norm_integral(&empty, &spec), Err(KsnsError::EmptyInput(_))));
    }

    #[test]
    fn weighted_energy_examples() {
        let g = GridSpec::square(32, 8.0).unwrap();
        let n = ScalarField::from_fn(g, |x, y| (-((x - 4.0).powi(2) + (y - 4.0).powi(2))).exp());
        let s = state(n.clone(), ScalarField::zeros(g));
        let w = WeightSpec::manual(2.0, 0.5);
        let l2 = lp_norm(&n, 2.0).unwrap();
        assert!((weighted_energy(&s, &w).unwrap() - l2 * l2).abs() < 1e-14);
        let s1 = state(n, ScalarField::constant(g, 1.0));
        assert!((weighted_energy(&s1, &w).unwrap() - 0.25f64.exp() * l2 * l2).abs() < 1e-13);

        let sens = SensitivitySpec::constant_chi_linear_k(0.1, 1.0).unwrap();
        let f = WeightSpec::formula(2.0, &sens, 1.0);
        assert!((f.beta * f.beta - 0.12).abs() < 1e-15);
        assert_eq!(f.source, WeightSource::Formula);
    }

    #[test]
    fn identity_residual_vanishes_on_zero_state() {
        let g = GridSpec::square(16, 4.0).unwrap();
        let m = cfg(g);
        let a = state(ScalarField::zeros(g), ScalarField::zeros(g));
        let b = State { t: 0.1, ..a.clone() };
        assert_eq!(weighted_identity_residual(&a, &b, &WeightSpec::manual(2.0, 0.0), &m).unwrap(), 0.0);
        let mut mp = m.clone();
        mp.oxygen = Oxygen::Parabolic;
        assert!(matches!(
            weighted_identity_residual(&a, &b, &WeightSpec::manual(2.0, 0.0), &mp),
            Err(KsnsError::WrongModel(_))
        ));
    }

    #[test]
    fn identity_residual_uniform_state_is_first_order_or_better() {
        let g = GridSpec::square(8, 2.0).unwrap();
        let (chi, k1, n0, c0) = (0.4, 0.8, 1.3, 0.9);
        let mut m = ModelConfig::new(Oxygen::Hyperbolic, FluidModel::None, SensitivitySpec::constant_chi_linear_k(chi, k1).unwrap(), g);
        let w = WeightSpec::manual(2.0, 0.0);
        let mut prev = None;
        for dt in [1e-2, 5e-3] {
            m.stepper = StepperConfig::fixed(dt);
            let s0 = state(ScalarField::constant(g, n0), ScalarField::constant(g, c0));
            let s1 = dynamics::step(&s0, &m, dt).unwrap();
            let r = weighted_identity_residual(&s0, &s1, &w, &m).unwrap();
            assert!(r <= 10.0 * dt, "{r}");
            if let Some(p) = prev {
                assert!(r < p);
            }
            prev = Some(r);
        }
    }

    #[test]
    fn truncated_energy_examples() {
        let g = GridSpec::square(32, 8.0).unwrap();
        let sens = SensitivitySpec::new(0.3, 0.1, 1.0, 0.0).unwrap();
        let n = ScalarField::from_fn(g, |x, y| 2.0 * (-((x - 4.0).powi(2) + (y - 3.0).powi(2)) / 2.0).exp());
        let c = ScalarField::from_fn(g, |x, _| 0.5 + 0.4 * (2.0 * PI * x / 8.0).sin());
        let s = state(n, c);
        let w = WeightSpec::manual(2.0, 0.0);
        let ratio_max = s.n.zip_map(&s.c, |n, c| n / sens.weight_ode(c)).max();
        assert_eq!(truncated_energy(&s, &w, ratio_max, &sens).unwrap(), 0.0);
        let (e, _, _) = identity_terms(&s, 2.0, &sens).unwrap();
        assert!((truncated_energy(&s, &w, 0.0, &sens).unwrap() - e).abs() < 1e-12 * e);
    }

    #[test]
    fn truncated_energy_matches_direct_sum_for_half_space_blob() {
        let (l, nn) = (8.0, 64);
        let g = GridSpec::square(nn, l).unwrap();
        let sens = SensitivitySpec::new(0.2, 0.0, 1.0, 0.0).unwrap();
        let blob = |x: f64, y: f64| if x < 4.0 { 3.0 * (-((x - 2.0).powi(2) + (y - 4.0).powi(2))).exp() } else { 0.0 };
        let cf = |x: f64, _y: f64| 0.1 * x;
        let s = state(ScalarField::from_fn(g, blob), ScalarField::from_fn(g, cf));
        let mut ratios: Vec<f64> = s.n.zip_map(&s.c, |n, c| n / sens.weight_ode(c)).values().iter().copied().filter(|v| *v > 0.0).collect();
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = ratios[ratios.len() / 2];
        let p = 3.0;
        let h = l / nn as f64;
        let mut q = 0.0;
        for j in 0..nn {
            for i in 0..nn {
                let (x, y) = (i as f64 * h, j as f64 * h);
                let phi = (0.2 * cf(x, y)).exp();
                let v = blob(x, y) / phi - k;
                if v > 0.0 {
                    q += v.powi(3) * phi;
                }
            }
        }
        q *= h * h;
        let e = truncated_energy(&s, &WeightSpec::manual(p, 0.0), k, &sens).unwrap();
        assert!((e - q).abs() < 1e-8 * q.max(1.0));
    }

    fn short_run() -> Trajectory {
        let g = GridSpec::square(32, 16.0).unwrap();
        let mut m = ModelConfig::new(Oxygen::Parabolic, FluidModel::NavierStokes, SensitivitySpec::constant_chi_linear_k(0.1, 1.0).unwrap(), g);
        m.t_end = 1.0;
        m.sample_interval = 0.1;
        m.stepper.dt_max = 0.02;
        let ic = InitialConditionSpec {
            n_blobs: vec![Blob::new(1.0, [8.0, 8.0], 2.5)],
            c_blobs: vec![Blob::new(0.3, [8.0, 8.0], 4.0)],
            c_background: 0.1,
            ..Default::default()
        };
        dynamics::run_trajectory(&m, &ic).unwrap()
    }

    #[test]
    fn level_set_examples() {
        let tr = short_run();
        let w = WeightSpec::manual(2.0, 0.0);
        let grid: Vec<f64> = (1..=40).map(|k| 0.05 * k as f64).collect();
        let ls = LevelSetSpec::parabolic(2, 2.0, grid);
        let rep = level_set_u(&tr, &ls, &w).unwrap();
        assert!(rep.is_nonincreasing());
        assert!(rep.values[0].1 > 0.0);
        assert_eq!(rep.values.last().unwrap().1, 0.0);
        assert!((rep.theta - 4.0 / 6.0).abs() < 1e-15);
        assert!((rep.alpha - 4.0 / 6.0).abs() < 1e-15);

        // above every sampled max(G)/eta everything vanishes
        let top = tr.samples.iter().map(|s| s.n.max().max(s.c.max()) / ls.eta(s.t)).fold(0.0, f64::max);
        let hi = LevelSetSpec { xi_grid: vec![top, 2.0 * top], ..ls.clone() };
        assert!(level_set_u(&tr, &hi, &w).unwrap().values.iter().all(|v| v.1 == 0.0));

        let mut zero = tr.clone();
        for s in &mut zero.samples {
            s.n = ScalarField::zeros(*s.grid());
            s.c = ScalarField::zeros(*s.grid());
        }
        assert!(level_set_u(&zero, &ls, &w).unwrap().values.iter().all(|v| v.1 == 0.0));
        let empty = LevelSetSpec { xi_grid: vec![], ..ls };
        assert!(matches!(level_set_u(&tr, &empty, &w), Err(KsnsError::EmptyInput(_))));
    }

    #[test]
    fn envelope_examples() {
        let gamma = 0.7;
        let series: Vec<(f64, f64)> = (0..50).map(|k| {
            let t = 0.2 * k as f64;
            (t, (1.0 + t).powf(-gamma))
        }).collect();
        assert!((envelope_of_series(&series, gamma, (1.0, 9.0)).unwrap() - 1.0).abs() < 1e-14);
        let bump: Vec<(f64, f64)> = series.iter().map(|&(t, y)| (t, y * (1.0 + (t - 3.0).abs().min(1.0)))).collect();
        let max = bump.iter().filter(|p| p.0 >= 2.0 && p.0 <= 5.0).map(|p| p.1).fold(0.0, f64::max);
        assert_eq!(envelope_of_series(&bump, 0.0, (2.0, 5.0)).unwrap(), max);
        assert!(matches!(envelope_of_series(&series, 0.5, (20.0, 30.0)), Err(KsnsError::EmptyInput(_))));
    }

    #[test]
    fn decay_fit_examples() {
        let mk = |f: &dyn Fn(f64) -> f64| -> Vec<(f64, f64)> { (0..100).map(|k| (0.1 * k as f64, f(0.1 * k as f64))).collect() };
        let s = mk(&|t| (1.0 + t).powf(-0.5));
        assert!((decay_fit(&s, (0.0, 10.0)).unwrap() + 0.5).abs() < 1e-10);
        assert!(decay_fit(&mk(&|_| 2.0), (0.0, 10.0)).unwrap().abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noisy: Vec<(f64, f64)> = (0..200)
            .map(|k| {
                let t = 0.25 * k as f64;
                (t, 3.0 / (1.0 + t) * (1.0 + 0.01 * rng.gen_range(-1.0..1.0)))
            })
            .collect();
        assert!((decay_fit(&noisy, (0.0, 50.0)).unwrap() + 1.0).abs() < 0.02);
        assert!(matches!(decay_fit(&s[..5], (0.0, 10.0)), Err(KsnsError::InvalidSeries(_))));
        let bad: Vec<(f64, f64)> = s.iter().map(|&(t, y)| (t, if t > 3.0 { -y } else { y })).collect();
        assert!(matches!(decay_fit(&bad, (0.0, 10.0)), Err(KsnsError::InvalidSeries(_))));
    }

    #[test]
    fn moment_examples() {
        let (l, nn) = (10.0, 64);
        let g = GridSpec::square(nn, l).unwrap();
        let zero = state(ScalarField::zeros(g), ScalarField::zeros(g));
        assert_eq!(moment_centered(&zero).unwrap(), 0.0);

        let narrow = Blob::new(1.0, [5.0, 5.0], 0.3);
        let s = state(ScalarField::from_fn(g, |x, y| narrow.eval(&g, x, y)), ScalarField::zeros(g));
        let mass = s.n.integral();
        let m = moment_centered(&s).unwrap();
        assert!(m >= mass && m < 1.05 * mass);

        // offset blob against a refined midpoint quadrature
        let b = Blob::new(1.0, [3.5, 6.5], 0.7);
        let s = state(ScalarField::from_fn(g, |x, y| b.eval(&g, x, y)), ScalarField::zeros(g));
        let m = moment_centered(&s).unwrap();
        let r = 640;
        let h = l / r as f64;
        let mut q = 0.0;
        for j in 0..r {
            for i in 0..r {
                let (x, y) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                let dx = (x - 5.0).abs().min(l - (x - 5.0).abs());
                let dy = (y - 5.0).abs().min(l - (y - 5.0).abs());
                q += (1.0 + dx * dx + dy * dy).sqrt() * b.eval(&g, x, y);
            }
        }
        q *= h * h;
        assert!((m - q).abs() < 1e-6, "{m} vs {q}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn truncated_energy_limits(seed in 0u64..1000, p in 1.0f64..4.0) {
            let g = GridSpec::square(8, 2.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = ScalarField::new(g, (0..g.len()).map(|_| rng.gen_range(0.0..3.0)).collect()).unwrap();
            let c = ScalarField::new(g, (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
            let sens = SensitivitySpec::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 1.0, 0.0).unwrap();
            let s = state(n, c);
            let w = WeightSpec::manual(p, 0.0);
            let (e, _, _) = identity_terms(&s, p, &sens).unwrap();
            let t0 = truncated_energy(&s, &w, 0.0, &sens).unwrap();
            prop_assert!((t0 - e).abs() <= 1e-12 * e.max(1.0));
            prop_assert_eq!(truncated_energy(&s, &w, 1e6, &sens).unwrap(), 0.0);
        }

        #[test]
        fn level_set_is_nonincreasing(seed in 0u64..1000) {
            let g = GridSpec::square(8, 2.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = cfg(g);
            let states: Vec<State> = (0..4).map(|k| {
                let n = ScalarField::new(g, (0..g.len()).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap();
                let c = ScalarField::new(g, (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
                State { t: 0.5 * k as f64, ..state(n, c) }
            }).collect();
            let tr = traj_of(&m, states, &WeightSpec::manual(2.0, 0.0));
            let xi: Vec<f64> = (1..30).map(|k| 0.1 * k as f64).collect();
            for variant in [LevelSetVariant::Density, LevelSetVariant::DensityAndOxygen, LevelSetVariant::DensityOverWeight] {
                let ls = LevelSetSpec { variant, ..LevelSetSpec::parabolic(2, 2.0, xi.clone()) };
                prop_assert!(level_set_u(&tr, &ls, &WeightSpec::manual(2.0, 0.0)).unwrap().is_nonincreasing());
            }
        }

        #[test]
        fn decay_fit_recovers_power_laws(gamma in -3.0f64..3.0, a in 0.1f64..10.0) {
            let s: Vec<(f64, f64)> = (0..40).map(|k| {
                let t = 0.5 * k as f64;
                (t, a * (1.0 + t).powf(gamma))
            }).collect();
            prop_assert!((decay_fit(&s, (0.0, 20.0)).unwrap() - gamma).abs() < 1e-10);
        }
    }
}
