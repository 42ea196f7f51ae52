use crate::diagnostics::{decay_envelope, DiagnosticsRecord, EnvelopeField};
use crate::dynamics::{run_trajectory, Termination, Trajectory};
use crate::error::{KsnsError, Result};
use crate::model::{self, InitialConditionSpec, ModelConfig, Oxygen};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    /// `||c0||_inf`: oxygen background and blobs rescaled together.
    C0Linf,
    /// `||n0||_1`.
    N0L1,
    /// `||n0||_{d/2}`, which coincides with `||n0||_1` in two dimensions.
    N0Ld2,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            Self::C0Linf => "c0_linf",
            Self::N0L1 => "n0_l1",
            Self::N0Ld2 => "n0_ld2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "c0_linf" => Some(Self::C0Linf),
            "n0_l1" => Some(Self::N0L1),
            "n0_ld2" => Some(Self::N0Ld2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Stable,
    Flagged(Termination),
    EnergyIncrease { step: usize, relative: f64 },
    EnvelopeGrowth { ratio: f64 },
}

impl Outcome {
    pub fn is_stable(&self) -> bool {
        matches!(self, Self::Stable)
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Stable => "stable".into(),
            Self::Flagged(t) => format!("suspect: {}", t.name()),
            Self::EnergyIncrease { step, relative } => {
                format!("suspect: weighted energy rose by {relative:e} at step {step}")
            }
            Self::EnvelopeGrowth { ratio } => format!("suspect: envelope ratio {ratio}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bracket {
    /// Last stable value below the first suspect one.
    Found { stable: f64, suspect: f64 },
    /// Every value was stable.
    AboveRange,
    /// The smallest value was already suspect.
    BelowRange,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    /// Windows for the envelope comparison; `None` derives `[T/40, T/8]`
    /// and `[T/8, T]` from the horizon.
    pub early: Option<(f64, f64)>,
    pub late: Option<(f64, f64)>,
    pub envelope_tolerance: f64,
    pub energy_tolerance: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self { early: None, late: None, envelope_tolerance: 1.1, energy_tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub outcomes: Vec<Outcome>,
    pub bracket: Bracket,
    /// Stable values lying above a suspect one.
    pub anomalies: Vec<f64>,
    pub records: Vec<Vec<DiagnosticsRecord>>,
}

fn rescaled(m: &ModelConfig, ic: &InitialConditionSpec, p: SweepParameter, v: f64) -> Result<InitialConditionSpec> {
    let g = m.grid;
    let current = match p {
        SweepParameter::C0Linf => model::sample_c0(&g, ic).max_abs(),
        SweepParameter::N0L1 | SweepParameter::N0Ld2 => model::sample_n0(&g, ic).integral(),
    };
    let factor = if v == 0.0 {
        0.0
    } else if current > 0.0 {
        v / current
    } else {
        return Err(KsnsError::InvalidConfig(format!(
            "template has zero {}, cannot rescale it to {v}",
            p.name()
        )));
    };
    let mut out = ic.clone();
    match p {
        SweepParameter::C0Linf => {
            out.c_background *= factor;
            out.c_blobs.iter_mut().for_each(|b| b.amplitude *= factor);
        }
        _ => out.n_blobs.iter_mut().for_each(|b| b.amplitude *= factor),
    }
    Ok(out)
}

/// Stability verdict for one run: completion, weighted-energy monotonicity
/// (oxygen sweeps only) and a bounded late-time decay envelope.
pub fn classify(traj: &Trajectory, p: SweepParameter, s: &SweepSettings) -> Result<Outcome> {
    if !traj.completed() {
        return Ok(Outcome::Flagged(traj.termination));
    }
    if p == SweepParameter::C0Linf {
        for (k, w) in traj.records.windows(2).enumerate() {
            let (a, b) = (w[0].weighted_energy, w[1].weighted_energy);
            if b - a > s.energy_tolerance * a.abs() {
                return Ok(Outcome::EnergyIncrease { step: k + 1, relative: (b - a) / a.abs().max(f64::MIN_POSITIVE) });
            }
        }
    }
    let t_end = traj.config.t_end;
    if t_end <= 0.0 {
        return Ok(Outcome::Stable);
    }
    let early = s.early.unwrap_or((t_end / 40.0, t_end / 8.0));
    let late = s.late.unwrap_or((t_end / 8.0, t_end));
    let gamma = match traj.config.oxygen {
        Oxygen::Parabolic => 0.5,
        Oxygen::Hyperbolic => 1.0,
    };
    let e0 = decay_envelope(traj, gamma, early, EnvelopeField::Density)?;
    let e1 = decay_envelope(traj, gamma, late, EnvelopeField::Density)?;
    if e1 > s.envelope_tolerance * e0 {
        return Ok(Outcome::EnvelopeGrowth { ratio: e1 / e0 });
    }
    Ok(Outcome::Stable)
}

fn bracket_of(values: &[f64], outcomes: &[Outcome]) -> (Bracket, Vec<f64>) {
    match outcomes.iter().position(|o| !o.is_stable()) {
        None => (Bracket::AboveRange, vec![]),
        Some(i) => {
            let anomalies = values[i..]
                .iter()
                .zip(&outcomes[i..])
                .filter(|(_, o)| o.is_stable())
                .map(|(v, _)| *v)
                .collect();
            let b = if i == 0 {
                Bracket::BelowRange
            } else {
                Bracket::Found { stable: values[i - 1], suspect: values[i] }
            };
            (b, anomalies)
        }
    }
}

/// Runs the template at each amplitude (concurrently) and brackets the
/// empirical stability threshold.
pub fn threshold_sweep(
    m: &ModelConfig,
    ic: &InitialConditionSpec,
    parameter: SweepParameter,
    values: &[f64],
    settings: &SweepSettings,
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(KsnsError::EmptyInput("no sweep values".into()));
    }
    if !values.windows(2).all(|w| w[1] > w[0]) || values[0] < 0.0 {
        return Err(KsnsError::InvalidSeries("sweep values must be nonnegative and strictly increasing".into()));
    }
    let ics = values
        .iter()
        .map(|&v| rescaled(m, ic, parameter, v))
        .collect::<Result<Vec<_>>>()?;
    let results = par::map_jobs(&ics, |ic| -> Result<(Outcome, Vec<DiagnosticsRecord>)> {
        let tr = run_trajectory(m, ic)?;
        Ok((classify(&tr, parameter, settings)?, tr.records))
    });
    let mut outcomes = Vec::with_capacity(values.len());
    let mut records = Vec::with_capacity(values.len());
    for r in results {
        let (o, rec) = r?;
        outcomes.push(o);
        records.push(rec);
    }
    let (bracket, anomalies) = bracket_of(values, &outcomes);
    Ok(SweepReport { parameter, values: values.to_vec(), outcomes, bracket, anomalies, records })
}
