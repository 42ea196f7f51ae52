use crate::dynamics::{State, Trajectory};
use crate::error::{KsnsError, Result};
use crate::spectral::{GridSpec, ScalarField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffNorm {
    Linf,
    L2,
}

/// Field differences at one common sample time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleDifference {
    pub t: f64,
    pub n: f64,
    pub c: f64,
    pub u: f64,
}

impl SampleDifference {
    pub fn max(&self) -> f64 {
        self.n.max(self.c).max(self.u)
    }
}

fn diff(a: &ScalarField, b: &ScalarField, norm: DiffNorm) -> f64 {
    let d = a.zip_map(b, |x, y| x - y);
    match norm {
        DiffNorm::Linf => d.max_abs(),
        DiffNorm::L2 => d.map(|v| v * v).integral().sqrt(),
    }
}

fn diff_vec(a: &VectorField, b: &VectorField, norm: DiffNorm) -> f64 {
    match norm {
        DiffNorm::Linf => diff(&a.x, &b.x, norm).max(diff(&a.y, &b.y, norm)),
        DiffNorm::L2 => diff(&a.x, &b.x, norm).hypot(diff(&a.y, &b.y, norm)),
    }
}

/// Differences over samples present (within `1e-12`) in both trajectories.
pub fn compare_trajectories(a: &Trajectory, b: &Trajectory, norm: DiffNorm) -> Result<Vec<SampleDifference>> {
    if a.config.grid != b.config.grid {
        return Err(KsnsError::GridMismatch(format!(
            "{}x{} vs {}x{}",
            a.config.grid.nx(),
            a.config.grid.ny(),
            b.config.grid.nx(),
            b.config.grid.ny()
        )));
    }
    let mut out = Vec::new();
    let mut j = 0;
    for sa in &a.samples {
        while j < b.samples.len() && b.samples[j].t < sa.t - 1e-12 * sa.t.abs().max(1.0) {
            j += 1;
        }
        let Some(sb) = b.samples.get(j) else { break };
        if (sb.t - sa.t).abs() <= 1e-12 * sa.t.abs().max(1.0) {
            out.push(SampleDifference {
                t: sa.t,
                n: diff(&sa.n, &sb.n, norm),
                c: diff(&sa.c, &sb.c, norm),
                u: diff_vec(&sa.u, &sb.u, norm),
            });
        }
    }
    Ok(out)
}

/// Trajectory with every sample injected onto a coarser grid.
pub fn restrict_trajectory(t: &Trajectory, coarse: &GridSpec) -> Result<Trajectory> {
    let restrict = |s: &State| -> Result<State> {
        Ok(State {
            t: s.t,
            n: s.n.restrict_to(coarse)?,
            c: s.c.restrict_to(coarse)?,
            u: VectorField { x: s.u.x.restrict_to(coarse)?, y: s.u.y.restrict_to(coarse)? },
            flagged: s.flagged,
        })
    };
    let mut config = t.config.clone();
    config.grid = *coarse;
    Ok(Trajectory {
        config,
        samples: t.samples.iter().map(restrict).collect::<Result<_>>()?,
        records: t.records.clone(),
        termination: t.termination,
        final_state: restrict(&t.final_state)?,
        note: t.note.clone(),
    })
}
