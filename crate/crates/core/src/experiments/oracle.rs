//! Second-order finite-difference solver in vorticity-streamfunction form.
//! Independent of the spectral code: only the field containers are shared.

use crate::diagnostics;
use crate::dynamics::{record_weight, State, Termination, Trajectory};
use crate::error::{KsnsError, Result};
use crate::model::{self, FluidModel, InitialConditionSpec, ModelConfig};
use crate::spectral::{GridSpec, ScalarField, VectorField};

struct Fd {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
}

impl Fd {
    fn idx(&self, i: isize, j: isize) -> usize {
        let i = i.rem_euclid(self.nx as isize) as usize;
        let j = j.rem_euclid(self.ny as isize) as usize;
        j * self.nx + i
    }

    fn apply(&self, f: &[f64], op: impl Fn(&dyn Fn(isize, isize) -> f64) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for j in 0..self.ny as isize {
            for i in 0..self.nx as isize {
                let at = |di: isize, dj: isize| f[self.idx(i + di, j + dj)];
                out[self.idx(i, j)] = op(&at);
            }
        }
        out
    }

    fn dx(&self, f: &[f64]) -> Vec<f64> {
        let s = 0.5 / self.hx;
        self.apply(f, |a| s * (a(1, 0) - a(-1, 0)))
    }

    fn dy(&self, f: &[f64]) -> Vec<f64> {
        let s = 0.5 / self.hy;
        self.apply(f, |a| s * (a(0, 1) - a(0, -1)))
    }

    fn lap(&self, f: &[f64]) -> Vec<f64> {
        let (sx, sy) = (1.0 / (self.hx * self.hx), 1.0 / (self.hy * self.hy));
        self.apply(f, |a| {
            sx * (a(1, 0) - 2.0 * a(0, 0) + a(-1, 0)) + sy * (a(0, 1) - 2.0 * a(0, 0) + a(0, -1))
        })
    }

    /// Conjugate gradients for `-lap psi = rhs` on mean-zero fields.
    fn solve_stream(&self, rhs: &[f64], psi: &mut [f64]) {
        let len = rhs.len() as f64;
        let mean = rhs.iter().sum::<f64>() / len;
        let b: Vec<f64> = rhs.iter().map(|v| v - mean).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let bnorm = dot(&b, &b).sqrt();
        if bnorm == 0.0 {
            psi.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let apply = |x: &[f64]| -> Vec<f64> { self.lap(x).into_iter().map(|v| -v).collect() };
        let ax = apply(psi);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        for _ in 0..10 * rhs.len() {
            if rr.sqrt() <= 1e-13 * bnorm {
                break;
            }
            let ap = apply(&p);
            let alpha = rr / dot(&p, &ap);
            for k in 0..psi.len() {
                psi[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for k in 0..p.len() {
                p[k] = r[k] + beta * p[k];
            }
            rr = rr_new;
        }
        let m = psi.iter().sum::<f64>() / len;
        psi.iter_mut().for_each(|v| *v -= m);
    }
}

struct FdState {
    t: f64,
    n: Vec<f64>,
    c: Vec<f64>,
    omega: Vec<f64>,
    psi: Vec<f64>,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

impl FdState {
    fn velocity_from_stream(&mut self, fd: &Fd) {
        self.ux = fd.dy(&self.psi);
        self.uy = fd.dx(&self.psi).into_iter().map(|v| -v).collect();
    }

    fn to_state(&self, g: GridSpec) -> Result<State> {
        let f = |v: &Vec<f64>| ScalarField::new(g, v.clone());
        Ok(State {
            t: self.t,
            n: f(&self.n)?,
            c: f(&self.c)?,
            u: VectorField { x: f(&self.ux)?, y: f(&self.uy)? },
            flagged: false,
        })
    }
}

fn fd_step(fd: &Fd, s: &mut FdState, m: &ModelConfig, dt: f64) -> Result<()> {
    let sens = &m.sensitivity;
    let mu = m.oxygen.mu();
    let len = s.n.len();
    let (cx, cy) = (fd.dx(&s.c), fd.dy(&s.c));

    let speed = (0..len)
        .map(|k| s.ux[k].hypot(s.uy[k]) + sens.chi(s.c[k]) * cx[k].hypot(cy[k]))
        .fold(0.0, f64::max);
    let h = fd.hx.min(fd.hy);
    if dt * speed > h {
        return Err(KsnsError::DtUnderflow { dt, dt_min: h / speed });
    }

    let fx: Vec<f64> = (0..len).map(|k| s.n[k] * (s.ux[k] + sens.chi(s.c[k]) * cx[k])).collect();
    let fy: Vec<f64> = (0..len).map(|k| s.n[k] * (s.uy[k] + sens.chi(s.c[k]) * cy[k])).collect();
    let (dfx, dfy) = (fd.dx(&fx), fd.dy(&fy));
    let lap_n = fd.lap(&s.n);
    let lap_c = fd.lap(&s.c);

    let dn: Vec<f64> = (0..len).map(|k| lap_n[k] - dfx[k] - dfy[k]).collect();
    let dc: Vec<f64> = (0..len)
        .map(|k| mu * lap_c[k] - s.ux[k] * cx[k] - s.uy[k] * cy[k] - sens.k(s.c[k]) * s.n[k])
        .collect();

    if m.fluid != FluidModel::None {
        let lap_w = fd.lap(&s.omega);
        let (nx_, ny_) = (fd.dx(&s.n), fd.dy(&s.n));
        let [gx, gy] = m.grad_phi;
        let adv = if m.fluid == FluidModel::NavierStokes {
            let (wx, wy) = (fd.dx(&s.omega), fd.dy(&s.omega));
            (0..len).map(|k| s.ux[k] * wx[k] + s.uy[k] * wy[k]).collect()
        } else {
            vec![0.0; len]
        };
        for k in 0..len {
            s.omega[k] += dt * (lap_w[k] - adv[k] - (gy * nx_[k] - gx * ny_[k]));
        }
    }
    for k in 0..len {
        s.n[k] += dt * dn[k];
        s.c[k] += dt * dc[k];
    }
    if m.fluid != FluidModel::None {
        let mut psi = std::mem::take(&mut s.psi);
        fd.solve_stream(&s.omega, &mut psi);
        s.psi = psi;
        s.velocity_from_stream(fd);
    }
    s.t += dt;
    if !(s.n.iter().chain(&s.c).chain(&s.omega).all(|v| v.is_finite())) {
        return Err(KsnsError::NumericalBreakdown { step: 0, t: s.t, what: "non-finite oracle field".into() });
    }
    Ok(())
}

/// Explicit Euler with `dt = min(0.2 h^2, dt_max)`, shrunk so that it
/// divides every sampling interval. Produces the same outputs as the
/// spectral runner.
pub fn oracle_fd_run(m: &ModelConfig, ic: &InitialConditionSpec) -> Result<Trajectory> {
    m.validate()?;
    ic.validate()?;
    let g = m.grid;
    let fd = Fd { nx: g.nx(), ny: g.ny(), hx: g.hx(), hy: g.hy() };
    let n0 = model::sample_n0(&g, ic).into_values();
    let c0 = model::sample_c0(&g, ic).into_values();
    let len = n0.len();
    let mut s = FdState {
        t: 0.0,
        n: n0,
        c: c0,
        omega: vec![0.0; len],
        psi: vec![0.0; len],
        ux: vec![0.0; len],
        uy: vec![0.0; len],
    };
    if m.fluid != FluidModel::None {
        let u0 = model::sample_u0(&g, ic);
        let (a, b) = (fd.dx(u0.y.values()), fd.dy(u0.x.values()));
        s.omega = (0..len).map(|k| a[k] - b[k]).collect();
        let mut psi = vec![0.0; len];
        fd.solve_stream(&s.omega, &mut psi);
        s.psi = psi;
        s.velocity_from_stream(&fd);
    }

    let weight = record_weight(m, s.c.iter().copied().fold(0.0, f64::max));
    let n0_max = s.n.iter().copied().fold(0.0, f64::max);
    let tol = 1e-8 * n0_max;
    let blowup = m.stepper.blowup_factor * n0_max.max(f64::MIN_POSITIVE);
    let dt_cap = (0.2 * fd.hx.min(fd.hy).powi(2)).min(m.stepper.dt_max);

    let first = s.to_state(g)?;
    let mut records = vec![diagnostics::record(&first, &weight, 0.0)?];
    let mut samples = vec![first];
    let mut termination = Termination::Completed;
    let mut note = None;
    let mut k = 1u64;
    'outer: while s.t < m.t_end - 1e-12 * m.t_end {
        let target = (k as f64 * m.sample_interval).min(m.t_end);
        let span = target - s.t;
        let steps = (span / dt_cap).ceil().max(1.0) as u64;
        let dt = span / steps as f64;
        for _ in 0..steps {
            match fd_step(&fd, &mut s, m, dt) {
                Ok(()) => {}
                Err(e @ KsnsError::DtUnderflow { .. }) => return Err(e),
                Err(e) => {
                    termination = Termination::FlaggedBlowup;
                    note = Some(e.to_string());
                    break 'outer;
                }
            }
            let mut st = s.to_state(g)?;
            st.flagged = st.n.min() < -tol;
            records.push(diagnostics::record(&st, &weight, dt)?);
            if st.flagged {
                termination = Termination::FlaggedNegative;
                break 'outer;
            }
            if st.n.max() > blowup {
                termination = Termination::FlaggedBlowup;
                break 'outer;
            }
        }
        s.t = target;
        samples.push(s.to_state(g)?);
        k += 1;
    }
    let final_state = match termination {
        Termination::Completed => samples[samples.len() - 1].clone(),
        _ => s.to_state(g)?,
    };
    Ok(Trajectory { config: m.clone(), samples, records, termination, final_state, note })
}
