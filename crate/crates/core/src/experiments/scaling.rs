use crate::diagnostics::{mixed_norm_integral, MixedNormSpec};
use crate::dynamics::{run_trajectory, Trajectory};
use crate::error::{KsnsError, Result};
use crate::model::{Blob, InitialConditionSpec, ModelConfig, VelocityInit};

#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub r: f64,
    /// `int_0^T ||n||_2^2 dt` of the base run.
    pub base_value: f64,
    /// The same functional of the rescaled run over `[0, T / R^2]`.
    pub scaled_value: f64,
    pub relative_difference: f64,
    pub base_mass: f64,
    pub scaled_mass: f64,
    pub base: Trajectory,
    pub scaled: Trajectory,
}

/// Problem with `n -> R^2 n(R^2 t, R x)`, `c -> c(R^2 t, R x)`,
/// `u -> R u(R^2 t, R x)`: box and features shrink by `R`, times by `R^2`,
/// node counts are kept and the forcing gradient grows by `R`.
pub fn scaled_problem(
    m: &ModelConfig,
    ic: &InitialConditionSpec,
    r: f64,
) -> Result<(ModelConfig, InitialConditionSpec)> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(KsnsError::InvalidConfig(format!("scale factor R = {r} must be > 0")));
    }
    let t = 1.0 / (r * r);
    let mut ms = m.clone();
    ms.grid = m.grid.shrunk(r)?;
    ms.t_end = m.t_end * t;
    ms.sample_interval = m.sample_interval * t;
    ms.stepper = m.stepper.time_scaled(r);
    ms.grad_phi = [m.grad_phi[0] * r, m.grad_phi[1] * r];
    let shrink = |b: &Blob, amp: f64| Blob::new(amp, [b.center[0] / r, b.center[1] / r], b.width / r);
    let ics = InitialConditionSpec {
        n_blobs: ic.n_blobs.iter().map(|b| shrink(b, b.amplitude * r * r)).collect(),
        c_blobs: ic.c_blobs.iter().map(|b| shrink(b, b.amplitude)).collect(),
        c_background: ic.c_background,
        velocity: match ic.velocity {
            VelocityInit::Zero => VelocityInit::Zero,
            VelocityInit::TaylorGreen(a) => VelocityInit::TaylorGreen(a * r),
        },
    };
    Ok((ms, ics))
}

/// Runs the base and rescaled problems and compares their critical
/// `L^2_t L^2_x` integrals.
pub fn run_scaling_pair(m: &ModelConfig, ic: &InitialConditionSpec, r: f64) -> Result<ScalingReport> {
    let (ms, ics) = scaled_problem(m, ic, r)?;
    let base = run_trajectory(m, ic)?;
    if !base.completed() {
        return Err(KsnsError::ScaledRunFailed(format!(
            "base run ended with {}",
            base.termination.name()
        )));
    }
    let scaled = run_trajectory(&ms, &ics)?;
    if !scaled.completed() {
        return Err(KsnsError::ScaledRunFailed(format!(
            "run scaled by R = {r} ended with {}",
            scaled.termination.name()
        )));
    }
    let spec = MixedNormSpec::new(2.0, 2.0, 2)?;
    let base_value = mixed_norm_integral(&base, &spec)?.value;
    let scaled_value = mixed_norm_integral(&scaled, &spec)?.value;
    let relative_difference = if base_value == scaled_value {
        0.0
    } else {
        (scaled_value - base_value).abs() / base_value.abs().max(scaled_value.abs())
    };
    Ok(ScalingReport {
        r,
        base_value,
        scaled_value,
        relative_difference,
        base_mass: base.records[0].mass,
        scaled_mass: scaled.records[0].mass,
        base,
        scaled,
    })
}
