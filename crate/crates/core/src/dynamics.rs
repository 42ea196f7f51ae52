//! Tendencies of the coupled system and the integrating-factor IMEX stepper.
//!
//! Diffusion (`lap n`, `mu lap c`, `lap u`) is integrated exactly in spectral
//! space; chemotaxis, transport, consumption and buoyancy are explicit. The
//! two-step scheme is variable-step Adams-Bashforth on the integrating-factor
//! variables, started with one Heun step so the whole run stays second order.

use num_complex::Complex64;

use crate::diagnostics::{self, DiagnosticsRecord, WeightSpec};
use crate::error::{KsnsError, Result};
use crate::model::{self, FluidModel, InitialConditionSpec, ModelConfig, Oxygen};
use crate::par;
use crate::spectral::{self, GridSpec, ScalarField, SpectrumField, VectorField};

/// Simulation unknowns at one instant. Pressure is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub n: ScalarField,
    pub c: ScalarField,
    pub u: VectorField,
    /// Set when `min n` fell below the positivity tolerance.
    pub flagged: bool,
}

impl State {
    pub fn grid(&self) -> &GridSpec {
        self.n.grid()
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            t: 0.0,
            n: ScalarField::zeros(grid),
            c: ScalarField::zeros(grid),
            u: VectorField::zeros(grid),
            flagged: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ImexEuler,
    ImexBdf2,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Self::ImexEuler => "imex_euler",
            Self::ImexBdf2 => "imex_bdf2",
        }
    }
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "imex_euler" => Some(Self::ImexEuler),
            "imex_bdf2" => Some(Self::ImexBdf2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub scheme: Scheme,
    pub dt_init: f64,
    pub cfl_safety: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    /// Order of the exponential filter applied to `c` when `mu = 0`.
    pub hyperbolic_filter_order: u32,
    pub adaptive: bool,
    /// Runs stop as blow-up suspects once `max n` exceeds this multiple of `max n0`.
    pub blowup_factor: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::ImexBdf2,
            dt_init: 1e-3,
            cfl_safety: 0.5,
            dt_max: 1e-2,
            dt_min: 1e-9,
            hyperbolic_filter_order: 16,
            adaptive: true,
            blowup_factor: 1e4,
        }
    }
}

impl StepperConfig {
    pub fn fixed(dt: f64) -> Self {
        Self { dt_init: dt, dt_max: dt, dt_min: dt, adaptive: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KsnsError::InvalidConfig(m));
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return bad(format!(
                "need 0 < dt_min <= dt_init <= dt_max (got {}, {}, {})",
                self.dt_min, self.dt_init, self.dt_max
            ));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return bad(format!("cfl_safety = {} must lie in (0, 1]", self.cfl_safety));
        }
        let o = self.hyperbolic_filter_order;
        if o < 8 || !o.is_multiple_of(2) {
            return bad(format!("filter order {o} must be even and >= 8"));
        }
        if !(self.blowup_factor > 1.0) {
            return bad(format!("blowup_factor = {} must be > 1", self.blowup_factor));
        }
        Ok(())
    }

    /// Time quantities divided by `r^2`, as required by the parabolic scaling.
    pub fn time_scaled(&self, r: f64) -> Self {
        let s = 1.0 / (r * r);
        Self {
            dt_init: self.dt_init * s,
            dt_max: self.dt_max * s,
            dt_min: self.dt_min * s,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Completed,
    FlaggedBlowup,
    FlaggedNegative,
    DtUnderflow,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::FlaggedBlowup => "flagged_blowup",
            Self::FlaggedNegative => "flagged_negative",
            Self::DtUnderflow => "dt_underflow",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub config: ModelConfig,
    /// States at `t = 0` and every multiple of `sample_interval`.
    pub samples: Vec<State>,
    /// One record per accepted step, plus the initial one.
    pub records: Vec<DiagnosticsRecord>,
    pub termination: Termination,
    pub final_state: State,
    /// Cause of a flagged termination.
    pub note: Option<String>,
}

impl Trajectory {
    pub fn completed(&self) -> bool {
        self.termination == Termination::Completed
    }
}

/// Full right-hand sides in physical space (diffusion included).
#[derive(Debug, Clone)]
pub struct Tendencies {
    pub dn: ScalarField,
    pub dc: ScalarField,
    pub du: VectorField,
}

/// Spectra of the four prognostic fields.
#[derive(Debug, Clone)]
pub(crate) struct Spectra {
    pub n: SpectrumField,
    pub c: SpectrumField,
    pub ux: SpectrumField,
    pub uy: SpectrumField,
}

/// A state with everything the tendencies and diagnostics share.
#[derive(Debug, Clone)]
pub(crate) struct Eval {
    pub state: State,
    pub spec: Spectra,
    pub cx: ScalarField,
    pub cy: ScalarField,
}

impl Eval {
    pub fn from_spectra(t: f64, spec: Spectra) -> Result<Self> {
        let n = spectral::transform_inverse(&spec.n);
        let c = spectral::transform_inverse(&spec.c);
        let ux = spectral::transform_inverse(&spec.ux);
        let uy = spectral::transform_inverse(&spec.uy);
        let (gx, gy) = spectral::gradient(&spec.c);
        let cx = spectral::transform_inverse(&gx);
        let cy = spectral::transform_inverse(&gy);
        for (name, f) in [("n", &n), ("c", &c), ("u", &ux), ("u", &uy)] {
            if !f.is_finite() {
                return Err(KsnsError::NumericalBreakdown {
                    step: 0,
                    t,
                    what: format!("non-finite {name}"),
                });
            }
        }
        Ok(Self { state: State { t, n, c, u: VectorField { x: ux, y: uy }, flagged: false }, spec, cx, cy })
    }

    pub fn from_state(s: &State) -> Result<Self> {
        let spec = Spectra {
            n: spectral::transform_forward(&s.n)?,
            c: spectral::transform_forward(&s.c)?,
            ux: spectral::transform_forward(&s.u.x)?,
            uy: spectral::transform_forward(&s.u.y)?,
        };
        let (gx, gy) = spectral::gradient(&spec.c);
        Ok(Self {
            state: s.clone(),
            cx: spectral::transform_inverse(&gx),
            cy: spectral::transform_inverse(&gy),
            spec,
        })
    }
}

/// Explicit (non-diffusive) parts of the tendencies, dealiased.
#[derive(Debug, Clone)]
struct Nonlinear {
    n: SpectrumField,
    c: SpectrumField,
    ux: SpectrumField,
    uy: SpectrumField,
}

/// Pointwise product kernel over rows of several equally shaped inputs.
fn pointwise(grid: &GridSpec, inputs: &[&[f64]], f: impl Fn(&[f64]) -> f64 + Sync + Send) -> ScalarField {
    let nx = grid.nx();
    let mut out = vec![0.0; grid.len()];
    par::for_each_chunk_mut(&mut out, nx, |j, row| {
        let mut args = vec![0.0; inputs.len()];
        for (i, o) in row.iter_mut().enumerate() {
            let idx = j * nx + i;
            for (a, src) in args.iter_mut().zip(inputs) {
                *a = src[idx];
            }
            *o = f(&args);
        }
    });
    ScalarField::from_raw(*grid, out)
}

fn nonlinear_terms(e: &Eval, m: &ModelConfig) -> Nonlinear {
    let g = *e.state.grid();
    let s = m.sensitivity;
    let st = &e.state;
    let (n, c, ux, uy) = (st.n.values(), st.c.values(), st.u.x.values(), st.u.y.values());
    let (cx, cy) = (e.cx.values(), e.cy.values());

    // cell flux n (u + chi(c) grad c); u . grad n = div(u n) since div u = 0
    let fx = pointwise(&g, &[n, c, ux, cx], |a| a[0] * (a[2] + s.chi(a[1]) * a[3]));
    let fy = pointwise(&g, &[n, c, uy, cy], |a| a[0] * (a[2] + s.chi(a[1]) * a[3]));
    let div_f = spectral::divergence(&spectral::forward_dealiased(&fx), &spectral::forward_dealiased(&fy));
    let nn = div_f.scale(-1.0);

    let rc = pointwise(&g, &[n, c, ux, uy, cx, cy], |a| a[2] * a[4] + a[3] * a[5] + s.k(a[1]) * a[0]);
    let nc = spectral::forward_dealiased(&rc).scale(-1.0);

    let (nux, nuy) = match m.fluid {
        FluidModel::None => (SpectrumField::zeros(g), SpectrumField::zeros(g)),
        fluid => {
            let [gpx, gpy] = m.grad_phi;
            let (mut ax, mut ay) = (e.spec.n.scale(-gpx), e.spec.n.scale(-gpy));
            if fluid == FluidModel::NavierStokes {
                let uxx = spectral::forward_dealiased(&pointwise(&g, &[ux], |a| a[0] * a[0]));
                let uxy = spectral::forward_dealiased(&pointwise(&g, &[ux, uy], |a| a[0] * a[1]));
                let uyy = spectral::forward_dealiased(&pointwise(&g, &[uy], |a| a[0] * a[0]));
                ax = ax.add_scaled(-1.0, &spectral::divergence(&uxx, &uxy));
                ay = ay.add_scaled(-1.0, &spectral::divergence(&uxy, &uyy));
            }
            let (mut px, mut py) = spectral::leray_project_spectral(&ax, &ay);
            // the mean buoyancy force is carried by the background pressure
            px.data_mut()[0] = Complex64::new(0.0, 0.0);
            py.data_mut()[0] = Complex64::new(0.0, 0.0);
            (px, py)
        }
    };
    Nonlinear { n: nn, c: nc, ux: nux, uy: nuy }
}

fn k2(g: &GridSpec, i: usize, j: usize) -> f64 {
    g.kx(i).powi(2) + g.ky(j).powi(2)
}

/// Spectral full tendencies of a state (diffusion plus explicit terms).
pub fn compute_tendencies(s: &State, m: &ModelConfig) -> Result<Tendencies> {
    let e = Eval::from_state(s)?;
    let nl = nonlinear_terms(&e, m);
    let mu = m.oxygen.mu();
    let dn = nl.n.add_scaled(1.0, &spectral::laplacian(&e.spec.n));
    let dc = nl.c.add_scaled(mu, &spectral::laplacian(&e.spec.c));
    let (dux, duy) = match m.fluid {
        FluidModel::None => (SpectrumField::zeros(*s.grid()), SpectrumField::zeros(*s.grid())),
        _ => (
            nl.ux.add_scaled(1.0, &spectral::laplacian(&e.spec.ux)),
            nl.uy.add_scaled(1.0, &spectral::laplacian(&e.spec.uy)),
        ),
    };
    let out = Tendencies {
        dn: spectral::transform_inverse(&dn),
        dc: spectral::transform_inverse(&dc),
        du: VectorField { x: spectral::transform_inverse(&dux), y: spectral::transform_inverse(&duy) },
    };
    for f in [&out.dn, &out.dc, &out.du.x, &out.du.y] {
        if !f.is_finite() {
            return Err(KsnsError::NumericalBreakdown { step: 0, t: s.t, what: "non-finite tendency".into() });
        }
    }
    Ok(out)
}

/// Largest characteristic speed `max(|u| + chi(c) |grad c|) + 1e-8`.
fn transport_speed(e: &Eval, m: &ModelConfig) -> f64 {
    let s = m.sensitivity;
    let st = &e.state;
    let v = pointwise(
        st.grid(),
        &[st.u.x.values(), st.u.y.values(), st.c.values(), e.cx.values(), e.cy.values()],
        |a| a[0].hypot(a[1]) + s.chi(a[2]) * a[3].hypot(a[4]),
    );
    v.max() + 1e-8
}

fn dt_for_speed(speed: f64, m: &ModelConfig) -> Result<f64> {
    let st = &m.stepper;
    let dt = st.cfl_safety * m.grid.h() / speed;
    if dt < st.dt_min {
        return Err(KsnsError::DtUnderflow { dt, dt_min: st.dt_min });
    }
    Ok(dt.min(st.dt_max))
}

/// CFL-limited step `cfl_safety * h / V`, clamped to `[dt_min, dt_max]`.
pub fn adapt_dt(s: &State, m: &ModelConfig) -> Result<f64> {
    let e = Eval::from_state(s)?;
    dt_for_speed(transport_speed(&e, m), m)
}

/// Per-mode integrating factors for the three diffusivities.
struct Decay {
    mu: f64,
}

impl Decay {
    fn factors(&self, k2: f64, dt: f64) -> (f64, f64) {
        ((-k2 * dt).exp(), (-self.mu * k2 * dt).exp())
    }
}

fn combine(
    f0: &SpectrumField,
    rate: impl Fn(f64) -> f64 + Sync + Send,
    op: impl Fn(Complex64, f64, usize) -> Complex64 + Sync + Send,
) -> SpectrumField {
    let g = *f0.grid();
    let ny = g.ny();
    f0.map_modes(|i, j, z| op(z, rate(k2(&g, i, j)), i * ny + j))
}

/// Integrator over one trajectory; keeps the previous explicit terms for the
/// two-step scheme.
pub struct Integrator<'m> {
    model: &'m ModelConfig,
    eval: Eval,
    current: Option<Nonlinear>,
    history: Option<(Nonlinear, f64)>,
    steps: usize,
    positivity_tol: f64,
}

impl<'m> Integrator<'m> {
    pub fn new(model: &'m ModelConfig, state: &State) -> Result<Self> {
        let eval = Eval::from_state(state)?;
        let positivity_tol = 1e-8 * state.n.max().max(0.0);
        Ok(Self { model, eval, current: None, history: None, steps: 0, positivity_tol })
    }

    pub fn state(&self) -> &State {
        &self.eval.state
    }

    pub(crate) fn eval(&self) -> &Eval {
        &self.eval
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn positivity_tol(&self) -> f64 {
        self.positivity_tol
    }

    fn nonlinear(&mut self) -> &Nonlinear {
        if self.current.is_none() {
            self.current = Some(nonlinear_terms(&self.eval, self.model));
        }
        self.current.as_ref().expect("just filled")
    }

    /// Next step size: CFL-adapted or the fixed `dt_init`.
    pub fn suggest_dt(&mut self) -> Result<f64> {
        if !self.model.stepper.adaptive {
            return Ok(self.model.stepper.dt_init);
        }
        dt_for_speed(transport_speed(&self.eval, self.model), self.model)
    }

    /// Advances by `dt`. On error the integrator keeps its previous state.
    pub fn advance(&mut self, dt: f64) -> Result<()> {
        let m = self.model;
        let decay = Decay { mu: m.oxygen.mu() };
        let t = self.eval.state.t;
        self.nonlinear();
        let n0 = self.current.take().expect("filled above");
        let f = &self.eval.spec;

        let mut next = match (m.stepper.scheme, &self.history) {
            (Scheme::ImexEuler, _) => euler(f, &n0, dt, &decay),
            (Scheme::ImexBdf2, Some((prev, dt_prev))) => ab2(f, &n0, prev, dt, *dt_prev, &decay),
            (Scheme::ImexBdf2, None) => {
                let predictor = euler(f, &n0, dt, &decay);
                let pe = Eval::from_spectra(t + dt, self.post_process(predictor))
                    .map_err(|e| self.with_step(e))?;
                let n1 = nonlinear_terms(&pe, m);
                heun(f, &n0, &n1, dt, &decay)
            }
        };
        next = self.post_process(next);
        let mut eval = Eval::from_spectra(t + dt, next).map_err(|e| self.with_step(e))?;
        eval.state.flagged = eval.state.n.min() < -self.positivity_tol;
        self.eval = eval;
        self.history = Some((n0, dt));
        self.steps += 1;
        Ok(())
    }

    /// Forces the clock to an exact value (used to land on sample times).
    pub(crate) fn snap_time(&mut self, t: f64) {
        self.eval.state.t = t;
    }

    fn post_process(&self, mut s: Spectra) -> Spectra {
        if self.model.oxygen == Oxygen::Hyperbolic {
            s.c = spectral::exponential_filter(&s.c, self.model.stepper.hyperbolic_filter_order);
        }
        if self.model.fluid != FluidModel::None {
            let (px, py) = spectral::leray_project_spectral(&s.ux, &s.uy);
            s.ux = px;
            s.uy = py;
        }
        s
    }

    fn with_step(&self, e: KsnsError) -> KsnsError {
        match e {
            KsnsError::NumericalBreakdown { t, what, .. } => {
                KsnsError::NumericalBreakdown { step: self.steps + 1, t, what }
            }
            other => other,
        }
    }
}

fn euler(f: &Spectra, n0: &Nonlinear, dt: f64, d: &Decay) -> Spectra {
    let go = |x: &SpectrumField, nx: &SpectrumField, diffusive: bool| {
        let nd = nx.data();
        combine(
            x,
            |k2| {
                let (e, ec) = d.factors(k2, dt);
                if diffusive { e } else { ec }
            },
            |z, e, idx| (z + nd[idx] * dt) * e,
        )
    };
    Spectra {
        n: go(&f.n, &n0.n, true),
        c: go(&f.c, &n0.c, false),
        ux: go(&f.ux, &n0.ux, true),
        uy: go(&f.uy, &n0.uy, true),
    }
}

fn heun(f: &Spectra, n0: &Nonlinear, n1: &Nonlinear, dt: f64, d: &Decay) -> Spectra {
    let go = |x: &SpectrumField, a: &SpectrumField, b: &SpectrumField, diffusive: bool| {
        let (ad, bd) = (a.data(), b.data());
        combine(
            x,
            |k2| {
                let (e, ec) = d.factors(k2, dt);
                if diffusive { e } else { ec }
            },
            |z, e, idx| (z + ad[idx] * (0.5 * dt)) * e + bd[idx] * (0.5 * dt),
        )
    };
    Spectra {
        n: go(&f.n, &n0.n, &n1.n, true),
        c: go(&f.c, &n0.c, &n1.c, false),
        ux: go(&f.ux, &n0.ux, &n1.ux, true),
        uy: go(&f.uy, &n0.uy, &n1.uy, true),
    }
}

fn ab2(f: &Spectra, n0: &Nonlinear, prev: &Nonlinear, dt: f64, dt_prev: f64, d: &Decay) -> Spectra {
    let r = dt / dt_prev;
    let (w0, w1) = (dt * (1.0 + 0.5 * r), dt * 0.5 * r);
    let go = |x: &SpectrumField, a: &SpectrumField, b: &SpectrumField, diffusive: bool| {
        let (ad, bd) = (a.data(), b.data());
        let g = *x.grid();
        let ny = g.ny();
        x.map_modes(|i, j, z| {
            let k2 = k2(&g, i, j);
            let (e, e_prev) = if diffusive {
                ((-k2 * dt).exp(), (-k2 * dt_prev).exp())
            } else {
                ((-d.mu * k2 * dt).exp(), (-d.mu * k2 * dt_prev).exp())
            };
            let idx = i * ny + j;
            (z + ad[idx] * w0 - bd[idx] * (w1 * e_prev)) * e
        })
    };
    Spectra {
        n: go(&f.n, &n0.n, &prev.n, true),
        c: go(&f.c, &n0.c, &prev.c, false),
        ux: go(&f.ux, &n0.ux, &prev.ux, true),
        uy: go(&f.uy, &n0.uy, &prev.uy, true),
    }
}

/// One step from `s` without history (Euler, or the Heun starter for the
/// two-step scheme).
pub fn step(s: &State, m: &ModelConfig, dt: f64) -> Result<State> {
    let st = &m.stepper;
    if !(dt >= st.dt_min && dt <= st.dt_max) {
        return Err(KsnsError::OutOfDomain(format!(
            "dt = {dt} outside [{}, {}]",
            st.dt_min, st.dt_max
        )));
    }
    let mut integ = Integrator::new(m, s)?;
    integ.advance(dt)?;
    Ok(integ.eval.state)
}

/// Gaussian weight spec used for the per-step `weighted_energy` column.
pub fn record_weight(m: &ModelConfig, c0_max: f64) -> WeightSpec {
    let p = m.diagnostics.weight_p;
    match m.diagnostics.weight_beta {
        Some(beta) => WeightSpec::manual(p, beta),
        None => WeightSpec::formula(p, &m.sensitivity, c0_max),
    }
}

/// Integrates to `t_end`, recording diagnostics every step and sampling the
/// state every `sample_interval`. Flagged conditions end the run early but are
/// reported through [`Trajectory::termination`], not as errors.
pub fn run_trajectory(m: &ModelConfig, ic: &InitialConditionSpec) -> Result<Trajectory> {
    m.validate_run()?;
    let s0 = model::build_initial_state(m, ic)?;
    run_from_state(m, &s0)
}

pub fn run_from_state(m: &ModelConfig, s0: &State) -> Result<Trajectory> {
    m.validate_run()?;
    let weight = record_weight(m, s0.c.max().max(0.0));
    let blowup_limit = m.stepper.blowup_factor * s0.n.max().max(f64::MIN_POSITIVE);

    let mut integ = Integrator::new(m, s0)?;
    let mut records = vec![diagnostics::record_from_eval(integ.eval(), &weight, 0.0)];
    let mut samples = vec![integ.state().clone()];
    let mut termination = Termination::Completed;
    let mut note = None;

    let interval = m.sample_interval;
    let t_end = m.t_end;
    let eps = 1e-12 * interval.max(t_end);
    let mut k_next = 1u64;
    let sample_time = |k: u64| (k as f64 * interval).min(t_end);

    while integ.state().t < t_end - eps {
        let t = integ.state().t;
        let mut dt = match integ.suggest_dt() {
            Ok(dt) => dt,
            Err(e) => {
                termination = Termination::DtUnderflow;
                note = Some(e.to_string());
                break;
            }
        };
        let target = sample_time(k_next);
        let remaining = target - t;
        let mut lands = false;
        if remaining <= dt * (1.0 + 1e-9) {
            dt = remaining;
            lands = true;
        } else if remaining < 2.0 * dt {
            // two even steps instead of one full and one sliver
            dt = 0.5 * remaining;
        }
        if let Err(e) = integ.advance(dt) {
            termination = Termination::FlaggedBlowup;
            note = Some(e.to_string());
            break;
        }
        if lands {
            integ.snap_time(target);
        }
        records.push(diagnostics::record_from_eval(integ.eval(), &weight, dt));
        let st = integ.state();
        if st.flagged {
            termination = Termination::FlaggedNegative;
            note = Some(format!("min n = {:e} at t = {}", st.n.min(), st.t));
            break;
        }
        if st.n.max() > blowup_limit {
            termination = Termination::FlaggedBlowup;
            note = Some(format!("max n = {:e} exceeded {:e} at t = {}", st.n.max(), blowup_limit, st.t));
            break;
        }
        if lands {
            samples.push(st.clone());
            k_next += 1;
        }
    }

    Ok(Trajectory {
        config: m.clone(),
        samples,
        records,
        termination,
        final_state: integ.state().clone(),
        note,
    })
}
