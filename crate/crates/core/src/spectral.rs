//! Periodic grid geometry, real-to-complex transforms and spectral operators.
//!
//! Physical fields are node-sampled on `[0, lx) x [0, ly)`, stored row-major
//! with `x` varying fastest. Spectra keep only the non-negative `x`
//! wavenumbers (conjugate symmetry of real data) and are stored `x`-major:
//! coefficient `(i, j)` lives at `i * ny + j` with `i in 0..=nx/2` and
//! `j in 0..ny` (signed `y` index `j` or `j - ny`).
//!
//! The forward transform is unnormalized; the inverse carries `1/(nx*ny)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{KsnsError, Result};
use crate::par;

/// Geometry of the periodic box and its sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        for (name, n) in [("nx", nx), ("ny", ny)] {
            if n < 8 || !n.is_power_of_two() {
                return Err(KsnsError::InvalidGrid(format!(
                    "{name} = {n} must be a power of two >= 8"
                )));
            }
        }
        for (name, l) in [("lx", lx), ("ly", ly)] {
            if !(l.is_finite() && l > 0.0) {
                return Err(KsnsError::InvalidGrid(format!("{name} = {l} must be positive")));
            }
        }
        Ok(Self { nx, ny, lx, ly })
    }

    pub fn square(n: usize, l: f64) -> Result<Self> {
        Self::new(n, n, l, l)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }
    /// Smallest cell size.
    pub fn h(&self) -> f64 {
        self.hx().min(self.hy())
    }
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }
    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    /// Number of stored `x` wavenumbers in the half spectrum.
    pub fn nxh(&self) -> usize {
        self.nx / 2 + 1
    }
    pub fn spectrum_len(&self) -> usize {
        self.nxh() * self.ny
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.hx()
    }
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.hy()
    }

    /// Signed integer mode along `y` for storage index `j`.
    pub fn mode_y(&self, j: usize) -> i64 {
        if j <= self.ny / 2 {
            j as i64
        } else {
            j as i64 - self.ny as i64
        }
    }

    /// Wavenumber `2 pi i / lx` of half-spectrum column `i`.
    pub fn kx(&self, i: usize) -> f64 {
        2.0 * PI * i as f64 / self.lx
    }
    pub fn ky(&self, j: usize) -> f64 {
        2.0 * PI * self.mode_y(j) as f64 / self.ly
    }

    /// First-derivative wavenumbers with the Nyquist entries zeroed.
    pub fn kx_odd(&self, i: usize) -> f64 {
        if i == self.nx / 2 {
            0.0
        } else {
            self.kx(i)
        }
    }
    pub fn ky_odd(&self, j: usize) -> f64 {
        if j == self.ny / 2 {
            0.0
        } else {
            self.ky(j)
        }
    }

    /// Full signed wavenumber sequence along `x` in FFT order.
    pub fn wavenumbers_x(&self) -> Vec<f64> {
        (0..self.nx)
            .map(|i| {
                let m = if i <= self.nx / 2 { i as i64 } else { i as i64 - self.nx as i64 };
                2.0 * PI * m as f64 / self.lx
            })
            .collect()
    }
    pub fn wavenumbers_y(&self) -> Vec<f64> {
        (0..self.ny).map(|j| self.ky(j)).collect()
    }

    /// Same node counts, box lengths divided by `r`.
    pub fn shrunk(&self, r: f64) -> Result<Self> {
        Self::new(self.nx, self.ny, self.lx / r, self.ly / r)
    }
}

/// Real node-sampled field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(KsnsError::InvalidField(format!(
                "length {} does not match grid {}x{}",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(KsnsError::InvalidField(format!("non-finite value at index {pos}")));
        }
        Ok(Self { grid, values })
    }

    /// Builds a field without the finiteness scan; used on hot paths whose
    /// inputs are already checked.
    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, a: f64) -> Self {
        Self { grid, values: vec![a; grid.len()] }
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64 + Sync + Send) -> Self {
        let mut values = vec![0.0; grid.len()];
        par::for_each_chunk_mut(&mut values, grid.nx, |j, row| {
            let y = grid.y(j);
            for (i, v) in row.iter_mut().enumerate() {
                *v = f(grid.x(i), y);
            }
        });
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max(&self) -> f64 {
        par::reduce_by(&self.values, self.grid.nx, f64::NEG_INFINITY, |v| *v, f64::max)
    }
    pub fn min(&self) -> f64 {
        par::reduce_by(&self.values, self.grid.nx, f64::INFINITY, |v| *v, f64::min)
    }
    pub fn max_abs(&self) -> f64 {
        par::reduce_by(&self.values, self.grid.nx, 0.0, |v| v.abs(), f64::max)
    }

    /// Riemann (= trapezoid, for periodic data) integral over the box.
    pub fn integral(&self) -> f64 {
        par::sum_by(&self.values, self.grid.nx, |v| *v) * self.grid.cell_area()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync + Send) -> Self {
        let mut out = self.values.clone();
        par::for_each_chunk_mut(&mut out, self.grid.nx, |_, row| {
            for v in row.iter_mut() {
                *v = f(*v);
            }
        });
        Self { grid: self.grid, values: out }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64 + Sync + Send) -> Self {
        assert_eq!(self.grid, other.grid, "zip_map on different grids");
        let nx = self.grid.nx;
        let mut out = vec![0.0; self.values.len()];
        par::for_each_chunk_mut(&mut out, nx, |j, row| {
            let a = &self.values[j * nx..(j + 1) * nx];
            let b = &other.values[j * nx..(j + 1) * nx];
            for ((o, x), y) in row.iter_mut().zip(a).zip(b) {
                *o = f(*x, *y);
            }
        });
        Self { grid: self.grid, values: out }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// Injection onto a coarser grid whose node counts divide this one's.
    pub fn restrict_to(&self, coarse: &GridSpec) -> Result<Self> {
        let g = &self.grid;
        let same_box = (g.lx - coarse.lx).abs() <= 1e-12 * g.lx
            && (g.ly - coarse.ly).abs() <= 1e-12 * g.ly;
        if !same_box || !g.nx.is_multiple_of(coarse.nx) || !g.ny.is_multiple_of(coarse.ny) {
            return Err(KsnsError::GridMismatch(format!(
                "cannot restrict {}x{} (box {}x{}) onto {}x{} (box {}x{})",
                g.nx, g.ny, g.lx, g.ly, coarse.nx, coarse.ny, coarse.lx, coarse.ly
            )));
        }
        let (sx, sy) = (g.nx / coarse.nx, g.ny / coarse.ny);
        let values = (0..coarse.ny)
            .flat_map(|j| (0..coarse.nx).map(move |i| (i, j)))
            .map(|(i, j)| self.at(i * sx, j * sy))
            .collect();
        Ok(Self { grid: *coarse, values })
    }
}

/// Two-component field sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn new(x: ScalarField, y: ScalarField) -> Result<Self> {
        if x.grid != y.grid {
            return Err(KsnsError::GridMismatch("vector components on different grids".into()));
        }
        Ok(Self { x, y })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { x: ScalarField::zeros(grid), y: ScalarField::zeros(grid) }
    }

    pub fn grid(&self) -> &GridSpec {
        self.x.grid()
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> ScalarField {
        self.x.zip_map(&self.y, |a, b| a.hypot(b))
    }

    pub fn max_abs(&self) -> f64 {
        self.x.max_abs().max(self.y.max_abs())
    }
}

/// Half spectrum of a real field.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumField {
    grid: GridSpec,
    data: Vec<Complex64>,
}

impl SpectrumField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, data: vec![Complex64::new(0.0, 0.0); grid.spectrum_len()] }
    }

    pub fn from_data(grid: GridSpec, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != grid.spectrum_len() {
            return Err(KsnsError::InvalidField(format!(
                "spectrum length {} does not match {}",
                data.len(),
                grid.spectrum_len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Coefficient for half-spectrum column `i` and row `j`.
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.grid.ny + j]
    }
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        let ny = self.grid.ny;
        self.data[i * ny + j] = v;
    }

    /// Mean value of the represented physical field.
    pub fn mean(&self) -> f64 {
        self.data[0].re / self.grid.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Applies `f(i, j, coefficient)` to every stored mode.
    pub fn map_modes(&self, f: impl Fn(usize, usize, Complex64) -> Complex64 + Sync + Send) -> Self {
        let mut out = self.data.clone();
        let ny = self.grid.ny;
        par::for_each_chunk_mut(&mut out, ny, |i, col| {
            for (j, z) in col.iter_mut().enumerate() {
                *z = f(i, j, *z);
            }
        });
        Self { grid: self.grid, data: out }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map_modes(|_, _, z| z * a)
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &Self) -> Self {
        assert_eq!(self.grid, other.grid);
        let mut out = self.data.clone();
        for (o, b) in out.iter_mut().zip(&other.data) {
            *o += b * a;
        }
        Self { grid: self.grid, data: out }
    }

    /// Parseval sum `sum |f_hat|^2` over the full spectrum.
    pub fn full_power(&self) -> f64 {
        let nx = self.grid.nx;
        let ny = self.grid.ny;
        par::map_chunks(&self.data, ny, |i, col| {
            let w = if i == 0 || i == nx / 2 { 1.0 } else { 2.0 };
            w * col.iter().map(|z| z.norm_sqr()).sum::<f64>()
        })
        .into_iter()
        .sum()
    }

    /// `integral |f|^2 dx` evaluated from the coefficients.
    pub fn l2_norm_sqr(&self) -> f64 {
        self.full_power() * self.grid.cell_area() / self.grid.len() as f64
    }
}

struct Plans {
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

type PlanCache = Mutex<HashMap<(usize, usize), Arc<Plans>>>;

fn plans(grid: &GridSpec) -> Arc<Plans> {
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
    map.entry((grid.nx, grid.ny))
        .or_insert_with(|| {
            let mut rp = RealFftPlanner::<f64>::new();
            let mut cp = FftPlanner::<f64>::new();
            Arc::new(Plans {
                r2c: rp.plan_fft_forward(grid.nx),
                c2r: rp.plan_fft_inverse(grid.nx),
                fwd_y: cp.plan_fft_forward(grid.ny),
                inv_y: cp.plan_fft_inverse(grid.ny),
            })
        })
        .clone()
}

/// Unnormalized forward transform of a finite real field.
pub fn transform_forward(f: &ScalarField) -> Result<SpectrumField> {
    if !f.is_finite() {
        return Err(KsnsError::InvalidField("non-finite value in forward transform input".into()));
    }
    Ok(forward_unchecked(f))
}

pub(crate) fn forward_unchecked(f: &ScalarField) -> SpectrumField {
    let grid = f.grid;
    let (nx, ny, nxh) = (grid.nx, grid.ny, grid.nxh());
    let p = plans(&grid);

    // rows: real -> half complex, laid out [j][i]
    let zero = Complex64::new(0.0, 0.0);
    let mut rows = vec![zero; ny * nxh];
    par::for_each_chunk_mut_init(
        &mut rows,
        nxh,
        || (vec![0.0; nx], p.r2c.make_scratch_vec()),
        |(input, scratch), j, out| {
            input.copy_from_slice(&f.values[j * nx..(j + 1) * nx]);
            p.r2c
                .process_with_scratch(input, out, scratch)
                .expect("r2c buffer sizes are fixed by the plan");
        },
    );

    // transpose to [i][j] and transform columns
    let mut data = vec![zero; nxh * ny];
    let fft_scratch = p.fwd_y.get_inplace_scratch_len();
    par::for_each_chunk_mut_init(
        &mut data,
        ny,
        || vec![zero; fft_scratch],
        |scratch, i, col| {
            for (j, z) in col.iter_mut().enumerate() {
                *z = rows[j * nxh + i];
            }
            p.fwd_y.process_with_scratch(col, scratch);
        },
    );
    SpectrumField { grid, data }
}

/// Inverse transform, including the `1/(nx*ny)` normalization.
pub fn transform_inverse(s: &SpectrumField) -> ScalarField {
    let grid = s.grid;
    let (nx, ny, nxh) = (grid.nx, grid.ny, grid.nxh());
    let p = plans(&grid);
    let zero = Complex64::new(0.0, 0.0);

    let mut cols = s.data.clone();
    let fft_scratch = p.inv_y.get_inplace_scratch_len();
    par::for_each_chunk_mut_init(
        &mut cols,
        ny,
        || vec![zero; fft_scratch],
        |scratch, _, col| p.inv_y.process_with_scratch(col, scratch),
    );

    let norm = 1.0 / grid.len() as f64;
    let mut values = vec![0.0; grid.len()];
    par::for_each_chunk_mut_init(
        &mut values,
        nx,
        || (vec![zero; nxh], p.c2r.make_scratch_vec()),
        |(input, scratch), j, out| {
            for (i, z) in input.iter_mut().enumerate() {
                *z = cols[i * ny + j];
            }
            // DC and Nyquist columns of a real row are real
            input[0].im = 0.0;
            input[nxh - 1].im = 0.0;
            p.c2r
                .process_with_scratch(input, out, scratch)
                .expect("c2r buffer sizes are fixed by the plan");
            for v in out.iter_mut() {
                *v *= norm;
            }
        },
    );
    ScalarField { grid, values }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Multiplies every mode by `(i k_axis)^order`, `order` in {1, 2}.
pub fn derivative(f: &SpectrumField, axis: Axis, order: u32) -> Result<SpectrumField> {
    let g = f.grid;
    match order {
        1 => Ok(f.map_modes(|i, j, z| {
            let k = match axis {
                Axis::X => g.kx_odd(i),
                Axis::Y => g.ky_odd(j),
            };
            Complex64::new(-k * z.im, k * z.re)
        })),
        2 => Ok(f.map_modes(|i, j, z| {
            let k = match axis {
                Axis::X => g.kx(i),
                Axis::Y => g.ky(j),
            };
            z * (-k * k)
        })),
        _ => Err(KsnsError::NotSupported(format!("derivative of order {order}"))),
    }
}

pub fn gradient(f: &SpectrumField) -> (SpectrumField, SpectrumField) {
    let g = f.grid;
    let dx = f.map_modes(|i, _, z| Complex64::new(-g.kx_odd(i) * z.im, g.kx_odd(i) * z.re));
    let dy = f.map_modes(|_, j, z| Complex64::new(-g.ky_odd(j) * z.im, g.ky_odd(j) * z.re));
    (dx, dy)
}

/// Spectral divergence `i kx vx + i ky vy`.
pub fn divergence(vx: &SpectrumField, vy: &SpectrumField) -> SpectrumField {
    let g = vx.grid;
    assert_eq!(g, vy.grid);
    let ny = g.ny;
    vx.map_modes(|i, j, zx| {
        let zy = vy.data[i * ny + j];
        let s = zx * g.kx_odd(i) + zy * g.ky_odd(j);
        Complex64::new(-s.im, s.re)
    })
}

/// Spectral curl `d_x vy - d_y vx`.
pub fn curl(vx: &SpectrumField, vy: &SpectrumField) -> SpectrumField {
    let g = vx.grid;
    assert_eq!(g, vy.grid);
    let ny = g.ny;
    vx.map_modes(|i, j, zx| {
        let zy = vy.data[i * ny + j];
        let s = zy * g.kx_odd(i) - zx * g.ky_odd(j);
        Complex64::new(-s.im, s.re)
    })
}

pub fn laplacian(f: &SpectrumField) -> SpectrumField {
    let g = f.grid;
    f.map_modes(|i, j, z| {
        let k2 = g.kx(i).powi(2) + g.ky(j).powi(2);
        z * (-k2)
    })
}

/// Solves `lap psi = rhs` for the zero-mean `psi`.
pub fn solve_poisson(rhs: &SpectrumField) -> Result<SpectrumField> {
    let g = rhs.grid;
    let dc = rhs.data[0].norm();
    let scale = rhs.max_abs();
    if dc > 1e-12 * scale {
        return Err(KsnsError::MeanNotZero(dc));
    }
    Ok(rhs.map_modes(|i, j, z| {
        if i == 0 && j == 0 {
            return Complex64::new(0.0, 0.0);
        }
        let k2 = g.kx(i).powi(2) + g.ky(j).powi(2);
        -z / k2
    }))
}

/// Leray projection of a spectral vector field onto the divergence-free
/// subspace (with respect to the spectral divergence).
pub fn leray_project_spectral(
    vx: &SpectrumField,
    vy: &SpectrumField,
) -> (SpectrumField, SpectrumField) {
    let g = vx.grid;
    assert_eq!(g, vy.grid);
    let ny = g.ny;
    let mut ox = vx.data.clone();
    let mut oy = vy.data.clone();
    for i in 0..g.nxh() {
        let kx = g.kx_odd(i);
        for j in 0..ny {
            let ky = g.ky_odd(j);
            let k2 = kx * kx + ky * ky;
            if k2 == 0.0 {
                continue;
            }
            let idx = i * ny + j;
            let kdotv = (ox[idx] * kx + oy[idx] * ky) / k2;
            ox[idx] -= kdotv * kx;
            oy[idx] -= kdotv * ky;
        }
    }
    (SpectrumField { grid: g, data: ox }, SpectrumField { grid: g, data: oy })
}

pub fn leray_project(v: &VectorField) -> Result<VectorField> {
    let sx = transform_forward(&v.x)?;
    let sy = transform_forward(&v.y)?;
    let (px, py) = leray_project_spectral(&sx, &sy);
    Ok(VectorField { x: transform_inverse(&px), y: transform_inverse(&py) })
}

/// `true` when mode `(i, j)` survives the 2/3 rule.
pub fn is_resolved(g: &GridSpec, i: usize, j: usize) -> bool {
    3 * i <= g.nx && 3 * g.mode_y(j).unsigned_abs() as usize <= g.ny
}

/// Zeroes every mode with `|m_x| > nx/3` or `|m_y| > ny/3`.
pub fn dealias(f: &SpectrumField) -> SpectrumField {
    let g = f.grid;
    f.map_modes(|i, j, z| if is_resolved(&g, i, j) { z } else { Complex64::new(0.0, 0.0) })
}

pub(crate) fn dealias_in_place(f: &mut SpectrumField) {
    let g = f.grid;
    let ny = g.ny;
    par::for_each_chunk_mut(&mut f.data, ny, |i, col| {
        for (j, z) in col.iter_mut().enumerate() {
            if !is_resolved(&g, i, j) {
                *z = Complex64::new(0.0, 0.0);
            }
        }
    });
}

/// Exponential filter `exp(-alpha ((|m_x|/(nx/2))^p + (|m_y|/(ny/2))^p))`
/// with `alpha = 16 ln 10`, so a Nyquist mode is damped to `1e-16`.
pub fn exponential_filter(f: &SpectrumField, order: u32) -> SpectrumField {
    let g = f.grid;
    let alpha = 16.0 * std::f64::consts::LN_10;
    let hx = (g.nx / 2) as f64;
    let hy = (g.ny / 2) as f64;
    f.map_modes(|i, j, z| {
        let ex = (i as f64 / hx).powi(order as i32);
        let ey = (g.mode_y(j).unsigned_abs() as f64 / hy).powi(order as i32);
        z * (-alpha * (ex + ey)).exp()
    })
}

/// Spectral `dealias(forward(f))`, skipping the finiteness scan.
pub(crate) fn forward_dealiased(f: &ScalarField) -> SpectrumField {
    let mut s = forward_unchecked(f);
    dealias_in_place(&mut s);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: GridSpec, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarField::new(g, v).unwrap()
    }

    /// Smooth random field built from a few low harmonics.
    fn smooth_field(g: GridSpec, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0..4) as f64,
                    rng.gen_range(-3..4) as f64,
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        ScalarField::from_fn(g, |x, y| {
            modes
                .iter()
                .map(|(a, mx, my, ph)| {
                    a * (2.0 * PI * (mx * x / g.lx() + my * y / g.ly()) + ph).cos()
                })
                .sum()
        })
    }

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(GridSpec::new(12, 16, 1.0, 1.0).is_err());
        assert!(GridSpec::new(4, 16, 1.0, 1.0).is_err());
        assert!(GridSpec::new(16, 16, 0.0, 1.0).is_err());
        let g = GridSpec::new(128, 64, 32.0, 16.0).unwrap();
        assert_eq!(g.hx(), 0.25);
        assert_eq!(g.wavenumbers_x().iter().filter(|k| **k == 0.0).count(), 1);
        assert_eq!(g.wavenumbers_y().iter().filter(|k| **k == 0.0).count(), 1);
    }

    #[test]
    fn constant_field_has_only_mean_mode() {
        let g = GridSpec::new(16, 8, 3.0, 2.0).unwrap();
        let s = transform_forward(&ScalarField::constant(g, 2.5)).unwrap();
        assert!((s.get(0, 0).re - 2.5 * 128.0).abs() < 1e-12);
        for (k, z) in s.data().iter().enumerate().skip(1) {
            assert!(z.norm() < 1e-12, "mode {k} = {z}");
        }
    }

    #[test]
    fn single_harmonic_has_two_conjugate_modes() {
        let g = GridSpec::square(16, 5.0).unwrap();
        let f = ScalarField::from_fn(g, |x, _| (2.0 * PI * x / 5.0).sin());
        let s = transform_forward(&f).unwrap();
        // half spectrum stores +1; its conjugate partner -1 is implied
        let big: Vec<_> = (0..g.nxh())
            .flat_map(|i| (0..g.ny()).map(move |j| (i, j)))
            .filter(|&(i, j)| s.get(i, j).norm() > 1e-10)
            .collect();
        assert_eq!(big, vec![(1, 0)]);
        let z = s.get(1, 0);
        assert!((z.im + 128.0).abs() < 1e-10 && z.re.abs() < 1e-10);
    }

    #[test]
    fn forward_matches_direct_dft_on_8x8() {
        let g = GridSpec::new(8, 8, 2.0, 3.0).unwrap();
        let f = random_field(g, 7);
        let s = transform_forward(&f).unwrap();
        for i in 0..g.nxh() {
            for j in 0..g.ny() {
                let mut acc = Complex64::new(0.0, 0.0);
                for q in 0..8 {
                    for p in 0..8 {
                        let ph = -2.0 * PI * ((i * p) as f64 / 8.0 + (j * q) as f64 / 8.0);
                        acc += Complex64::from_polar(f.at(p, q), ph);
                    }
                }
                assert!((acc - s.get(i, j)).norm() < 1e-12, "({i},{j})");
            }
        }
        let back = transform_inverse(&s);
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let g = GridSpec::square(8, 1.0).unwrap();
        let mut v = vec![0.0; 64];
        v[3] = f64::NAN;
        assert!(ScalarField::new(g, v.clone()).is_err());
        let f = ScalarField::from_raw(g, v);
        assert!(matches!(transform_forward(&f), Err(KsnsError::InvalidField(_))));
    }

    #[test]
    fn derivative_of_sine_and_constant() {
        let l = 7.0;
        let g = GridSpec::square(32, l).unwrap();
        let k = 2.0 * PI / l;
        let f = ScalarField::from_fn(g, |x, _| (k * x).sin());
        let d = transform_inverse(&derivative(&transform_forward(&f).unwrap(), Axis::X, 1).unwrap());
        let want = ScalarField::from_fn(g, |x, _| k * (k * x).cos());
        for (a, b) in d.values().iter().zip(want.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = transform_forward(&ScalarField::constant(g, 3.0)).unwrap();
        for axis in [Axis::X, Axis::Y] {
            for order in [1, 2] {
                assert!(transform_inverse(&derivative(&c, axis, order).unwrap()).max_abs() < 1e-13);
            }
        }
        assert!(matches!(derivative(&c, Axis::X, 3), Err(KsnsError::NotSupported(_))));
    }

    #[test]
    fn derivative_converges_against_fourth_order_finite_differences() {
        // oracle: fourth-order centered stencil; the spectral-vs-FD gap must
        // shrink at least at fourth order under refinement
        let l = 16.0;
        let bump = |x: f64, y: f64| (-((x - 8.0).powi(2) + (y - 8.0).powi(2)) / 4.0).exp();
        let mut gaps = vec![];
        for n in [32usize, 64, 128] {
            let g = GridSpec::square(n, l).unwrap();
            let f = ScalarField::from_fn(g, bump);
            let d = transform_inverse(&derivative(&transform_forward(&f).unwrap(), Axis::X, 1).unwrap());
            let h = g.hx();
            let mut gap: f64 = 0.0;
            for j in 0..n {
                for i in 0..n {
                    let at = |o: usize| f.at((i + o) % n, j);
                    let fd = (-at(2) + 8.0 * at(1) - 8.0 * at(n - 1) + at(n - 2)) / (12.0 * h);
                    gap = gap.max((d.at(i, j) - fd).abs());
                }
            }
            gaps.push(gap);
        }
        let rate1 = (gaps[0] / gaps[1]).log2();
        let rate2 = (gaps[1] / gaps[2]).log2();
        assert!(rate1 >= 3.8 && rate2 >= 3.8, "{gaps:?}");
    }

    #[test]
    fn poisson_examples() {
        let l = 6.0;
        let g = GridSpec::square(32, l).unwrap();
        let k = 2.0 * PI / l;
        let rhs = ScalarField::from_fn(g, |x, _| -k * k * (k * x).sin());
        let psi = transform_inverse(&solve_poisson(&transform_forward(&rhs).unwrap()).unwrap());
        for j in 0..32 {
            for i in 0..32 {
                assert!((psi.at(i, j) - (k * g.x(i)).sin()).abs() < 1e-12);
            }
        }
        let z = solve_poisson(&SpectrumField::zeros(g)).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let bad = transform_forward(&ScalarField::constant(g, 1.0)).unwrap();
        assert!(matches!(solve_poisson(&bad), Err(KsnsError::MeanNotZero(_))));
    }

    #[test]
    fn poisson_residual_on_random_rhs() {
        let g = GridSpec::new(32, 16, 4.0, 3.0).unwrap();
        let f = random_field(g, 3);
        let mean = f.integral() / g.area();
        let rhs = transform_forward(&f.map(|v| v - mean)).unwrap();
        let mut rhs = rhs;
        rhs.data_mut()[0] = Complex64::new(0.0, 0.0);
        let psi = solve_poisson(&rhs).unwrap();
        let lap = laplacian(&psi);
        let res = transform_inverse(&lap.add_scaled(-1.0, &rhs)).max_abs();
        assert!(res <= 1e-11, "residual {res}");
        assert!(psi.get(0, 0).norm() == 0.0);
    }

    fn grad_of(psi: &ScalarField) -> VectorField {
        let s = transform_forward(psi).unwrap();
        let (dx, dy) = gradient(&s);
        VectorField::new(transform_inverse(&dx), transform_inverse(&dy)).unwrap()
    }

    #[test]
    fn leray_annihilates_gradients_and_fixes_solenoidal_fields() {
        let g = GridSpec::new(32, 32, 5.0, 4.0).unwrap();
        let psi = smooth_field(g, 11);
        let v = grad_of(&psi);
        let p = leray_project(&v).unwrap();
        assert!(p.max_abs() <= 1e-11 * v.max_abs(), "{}", p.max_abs());

        let s = transform_forward(&psi).unwrap();
        let (dx, dy) = gradient(&s);
        let w = VectorField::new(transform_inverse(&dy).scale(-1.0), transform_inverse(&dx)).unwrap();
        let pw = leray_project(&w).unwrap();
        let err = pw.x.zip_map(&w.x, |a, b| (a - b).abs()).max().max(pw.y.zip_map(&w.y, |a, b| (a - b).abs()).max());
        assert!(err <= 1e-12, "{err}");
    }

    #[test]
    fn leray_on_random_smooth_field() {
        let g = GridSpec::new(32, 16, 3.0, 2.0).unwrap();
        let v = VectorField::new(smooth_field(g, 1), smooth_field(g, 2)).unwrap();
        let sx = transform_forward(&v.x).unwrap();
        let sy = transform_forward(&v.y).unwrap();
        let (px, py) = leray_project_spectral(&sx, &sy);
        let scale = sx.max_abs().max(sy.max_abs());
        assert!(divergence(&px, &py).max_abs() <= 1e-12 * scale);
        // idempotent
        let (qx, qy) = leray_project_spectral(&px, &py);
        assert!(qx.add_scaled(-1.0, &px).max_abs() <= 1e-13 * scale);
        assert!(qy.add_scaled(-1.0, &py).max_abs() <= 1e-13 * scale);
        // the removed part is a gradient: zero curl
        let rx = sx.add_scaled(-1.0, &px);
        let ry = sy.add_scaled(-1.0, &py);
        let c = transform_inverse(&curl(&rx, &ry)).max_abs();
        assert!(c <= 1e-11, "{c}");
    }

    #[test]
    fn dealias_examples() {
        let g = GridSpec::square(16, 1.0).unwrap();
        let low = ScalarField::from_fn(g, |x, y| (2.0 * PI * x).cos() + (4.0 * PI * y).sin());
        let s = transform_forward(&low).unwrap();
        assert!(dealias(&s).add_scaled(-1.0, &s).max_abs() < 1e-12 * s.max_abs());
        let nyq = ScalarField::from_fn(g, |x, _| (16.0 * PI * x).cos());
        assert_eq!(dealias(&transform_forward(&nyq).unwrap()).max_abs(), 0.0);
    }

    /// Full-spectrum coefficients of a real field given as a mode list.
    fn coeffs(modes: &[(i64, i64, Complex64)]) -> HashMap<(i64, i64), Complex64> {
        let mut m = HashMap::new();
        for &(a, b, z) in modes {
            *m.entry((a, b)).or_insert(Complex64::new(0.0, 0.0)) += z;
            *m.entry((-a, -b)).or_insert(Complex64::new(0.0, 0.0)) += z.conj();
        }
        m
    }

    #[test]
    fn dealiased_product_matches_direct_convolution_on_16x16() {
        let g = GridSpec::square(16, 2.0).unwrap();
        let fa = [(1, 0, Complex64::new(0.3, 0.1)), (5, 3, Complex64::new(0.2, -0.4)), (2, -4, Complex64::new(0.5, 0.0))];
        let fb = [(4, 1, Complex64::new(-0.2, 0.3)), (0, 5, Complex64::new(0.1, 0.1)), (3, -2, Complex64::new(0.25, 0.05))];
        let (ca, cb) = (coeffs(&fa), coeffs(&fb));
        let eval = |c: &HashMap<(i64, i64), Complex64>, x: f64, y: f64| -> f64 {
            c.iter()
                .map(|(&(a, b), z)| (z * Complex64::from_polar(1.0, PI * (a as f64 * x + b as f64 * y))).re)
                .sum()
        };
        let a = ScalarField::from_fn(g, |x, y| eval(&ca, x, y));
        let b = ScalarField::from_fn(g, |x, y| eval(&cb, x, y));
        let prod = dealias(&transform_forward(&a.zip_map(&b, |p, q| p * q)).unwrap());

        // direct convolution of continuous coefficients, then keep resolved modes
        let mut conv: HashMap<(i64, i64), Complex64> = HashMap::new();
        for (&(a1, b1), z1) in &ca {
            for (&(a2, b2), z2) in &cb {
                *conv.entry((a1 + a2, b1 + b2)).or_insert(Complex64::new(0.0, 0.0)) += z1 * z2;
            }
        }
        let n = 16.0 * 16.0;
        for i in 0..g.nxh() {
            for j in 0..g.ny() {
                let (mx, my) = (i as i64, g.mode_y(j));
                let want = if is_resolved(&g, i, j) {
                    conv.get(&(mx, my)).copied().unwrap_or_default() * n
                } else {
                    Complex64::new(0.0, 0.0)
                };
                assert!((prod.get(i, j) - want).norm() / n <= 1e-12, "({mx},{my})");
            }
        }
        // sampled on the grid, equals the exact product's resolved part
        let kept: HashMap<(i64, i64), Complex64> = conv
            .into_iter()
            .filter(|&((a, b), _)| 3 * a.unsigned_abs() <= 16 && 3 * b.unsigned_abs() <= 16)
            .collect();
        let exact = ScalarField::from_fn(g, |x, y| eval(&kept, x, y));
        let got = transform_inverse(&prod);
        for (u, v) in got.values().iter().zip(exact.values()) {
            assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn product_rule_with_dealiasing() {
        let l = 2.0 * PI;
        let g = GridSpec::square(32, l).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (2.0 * x).sin() + (3.0 * y).cos());
        let h = ScalarField::from_fn(g, |x, y| (x + y).cos() + 0.5 * (4.0 * x).sin());
        let fh = dealias(&transform_forward(&f.zip_map(&h, |a, b| a * b)).unwrap());
        let d = transform_inverse(&derivative(&fh, Axis::X, 1).unwrap());
        let want = ScalarField::from_fn(g, |x, y| {
            let fv = (2.0 * x).sin() + (3.0 * y).cos();
            let hv = (x + y).cos() + 0.5 * (4.0 * x).sin();
            2.0 * (2.0 * x).cos() * hv + fv * (-(x + y).sin() + 2.0 * (4.0 * x).cos())
        });
        for (a, b) in d.values().iter().zip(want.values()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn filter_damps_nyquist_and_keeps_mean() {
        let g = GridSpec::square(16, 1.0).unwrap();
        let mut s = SpectrumField::zeros(g);
        s.set(0, 0, Complex64::new(1.0, 0.0));
        s.set(8, 0, Complex64::new(1.0, 0.0));
        let f = exponential_filter(&s, 16);
        assert_eq!(f.get(0, 0), Complex64::new(1.0, 0.0));
        assert!((f.get(8, 0).re - 1e-16).abs() < 1e-20);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn round_trip_and_parseval(seed in any::<u64>(), a in 1e-3f64..1e3) {
                let g = GridSpec::new(16, 32, 3.0, 7.0).unwrap();
                let f = random_field(g, seed).scale(a);
                let s = transform_forward(&f).unwrap();
                let back = transform_inverse(&s);
                let m = f.max_abs();
                for (x, y) in back.values().iter().zip(f.values()) {
                    prop_assert!((x - y).abs() <= 1e-13 * m);
                }
                let direct = f.map(|v| v * v).integral();
                let spectral = s.l2_norm_sqr();
                prop_assert!((direct - spectral).abs() <= 1e-12 * direct);
            }

            #[test]
            fn leray_idempotent_for_random_fields(seed in any::<u64>()) {
                let g = GridSpec::square(16, 2.0).unwrap();
                let v = VectorField::new(smooth_field(g, seed), smooth_field(g, seed ^ 0xabcd)).unwrap();
                let p = leray_project(&v).unwrap();
                let q = leray_project(&p).unwrap();
                let d = q.x.zip_map(&p.x, |a, b| (a - b).abs()).max()
                    .max(q.y.zip_map(&p.y, |a, b| (a - b).abs()).max());
                prop_assert!(d <= 1e-13 * v.max_abs().max(1.0));
            }
        }
    }
}
