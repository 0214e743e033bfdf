//! Doubly periodic grids, real scalar fields and their Fourier-side operators.
//!
//! Fields live on the torus [0, Lx) x [0, Ly), sampled at x_i = i Lx/nx and
//! y_j = j Ly/ny, stored row-major with rows of fixed y (`values[j*nx + i]`).
//!
//! The spectrum holds the true Fourier coefficients
//!
//! ```text
//! c(kx, ky) = 1/(nx ny) * sum_{i,j} u(x_i, y_j) exp(-i (kx x_i + ky y_j))
//! ```
//!
//! for the non-negative half kx = 2 pi m / Lx, m = 0..=nx/2, and every signed
//! ky, laid out column-major as `data[m*ny + j]`. Synthesis is
//! u = sum_k c(k) exp(i k.x) with the conjugate half implied, so Parseval reads
//!
//! ```text
//! int int u v = Lx Ly sum_{m,j} w_m Re(c_u conj(c_v)),   w_0 = w_{nx/2} = 1, else 2.
//! ```
//!
//! Odd-order derivatives annihilate Nyquist modes (their sine partner is not
//! representable); even orders use k_N^2.

use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Errors raised by spectral operators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field has non-zero mean (|c00| = {coeff:.3e}, field norm {norm:.3e})")]
    NonZeroMean { coeff: f64, norm: f64 },
    #[error("field has non-zero x-mean (x-mean norm {mean_norm:.3e}, field norm {norm:.3e})")]
    NonZeroXMean { mean_norm: f64, norm: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("expected {expected} samples, got {got}")]
    BadLength { expected: usize, got: usize },
}

/// Relative tolerance for the mean-zero preconditions of the inverse operators.
pub const MEAN_TOL: f64 = 1e-10;

/// Coordinate axis of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Doubly periodic rectangular grid with wavenumber tables and FFT plans.
pub struct Grid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    kx: Vec<f64>,
    ky: Vec<f64>,
    fft_x: Arc<dyn Fft<f64>>,
    ifft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    ifft_y: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("lx", &self.lx)
            .field("ly", &self.ly)
            .finish()
    }
}

impl Grid {
    /// Builds a grid; `nx`, `ny` must be even and at least 8, lengths positive.
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Arc<Grid>, SpectralError> {
        for (name, n) in [("nx", nx), ("ny", ny)] {
            if n < 8 || n % 2 != 0 {
                return Err(SpectralError::InvalidGrid(format!(
                    "{name} = {n} must be even and >= 8"
                )));
            }
        }
        if !(lx.is_finite() && lx > 0.0 && ly.is_finite() && ly > 0.0) {
            return Err(SpectralError::InvalidGrid(format!(
                "periods must be positive, got Lx = {lx}, Ly = {ly}"
            )));
        }
        let mut planner = FftPlanner::new();
        let kx = (0..=nx / 2)
            .map(|m| 2.0 * std::f64::consts::PI * m as f64 / lx)
            .collect();
        let ky = (0..ny)
            .map(|j| 2.0 * std::f64::consts::PI * signed_index(j, ny) as f64 / ly)
            .collect();
        Ok(Arc::new(Grid {
            nx,
            ny,
            lx,
            ly,
            kx,
            ky,
            fft_x: planner.plan_fft_forward(nx),
            ifft_x: planner.plan_fft_inverse(nx),
            fft_y: planner.plan_fft_forward(ny),
            ifft_y: planner.plan_fft_inverse(ny),
        }))
    }

    /// Grid on the standard torus [0, 2 pi)^2.
    pub fn periodic(nx: usize, ny: usize) -> Result<Arc<Grid>, SpectralError> {
        let tau = 2.0 * std::f64::consts::PI;
        Grid::new(nx, ny, tau, tau)
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
    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }
    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }
    /// Number of stored spectral columns, nx/2 + 1.
    pub fn ncols(&self) -> usize {
        self.nx / 2 + 1
    }
    /// Total number of physical samples.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy()
    }
    /// Non-negative x wavenumber of column m.
    pub fn kx(&self, m: usize) -> f64 {
        self.kx[m]
    }
    /// Signed y wavenumber of row j of a spectral column.
    pub fn ky(&self, j: usize) -> f64 {
        self.ky[j]
    }
    pub fn ky_table(&self) -> &[f64] {
        &self.ky
    }
    /// Signed integer y index of row j (j = ny/2 maps to -ny/2).
    pub fn ky_index(&self, j: usize) -> i64 {
        signed_index(j, self.ny)
    }
    pub fn is_x_nyquist(&self, m: usize) -> bool {
        m == self.nx / 2
    }
    pub fn is_y_nyquist(&self, j: usize) -> bool {
        j == self.ny / 2
    }
    /// Parseval weight of column m.
    pub fn col_weight(&self, m: usize) -> f64 {
        if m == 0 || m == self.nx / 2 {
            1.0
        } else {
            2.0
        }
    }
    /// Largest |k| on the grid.
    pub fn k_max(&self) -> f64 {
        self.kx[self.nx / 2].hypot(self.ky[self.ny / 2].abs())
    }
    /// Same shape and periods.
    pub fn same_as(&self, other: &Grid) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.lx == other.lx && self.ly == other.ly
    }

    /// In-place unnormalized forward FFT of a length-ny column.
    pub fn fft_y(&self, buf: &mut [Complex64]) {
        self.fft_y.process(buf);
    }
    /// In-place unnormalized inverse FFT of a length-ny column.
    pub fn ifft_y(&self, buf: &mut [Complex64]) {
        self.ifft_y.process(buf);
    }

    /// Physical samples to half-plane Fourier coefficients.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let (nx, ny) = (self.nx, self.ny);
        let ncols = self.ncols();
        let mut data = vec![Complex64::new(0.0, 0.0); ncols * ny];
        let mut row = vec![Complex64::new(0.0, 0.0); nx];
        // two real rows per complex transform
        for j in (0..ny).step_by(2) {
            let a = &values[j * nx..(j + 1) * nx];
            let b = &values[(j + 1) * nx..(j + 2) * nx];
            for i in 0..nx {
                row[i] = Complex64::new(a[i], b[i]);
            }
            self.fft_x.process(&mut row);
            for m in 0..ncols {
                let z = row[m];
                let zc = row[(nx - m) % nx].conj();
                data[m * ny + j] = (z + zc) * 0.5;
                data[m * ny + j + 1] = (z - zc) * Complex64::new(0.0, -0.5);
            }
        }
        let scale = 1.0 / (nx * ny) as f64;
        for col in data.chunks_mut(ny) {
            self.fft_y.process(col);
            for c in col.iter_mut() {
                *c *= scale;
            }
        }
        data
    }

    /// Half-plane Fourier coefficients to physical samples.
    ///
    /// Hermitian symmetry is enforced: the kx = 0 and x-Nyquist columns keep
    /// only the real part of their y-synthesis.
    pub fn inverse(&self, data: &[Complex64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let ncols = self.ncols();
        let mut cols = data.to_vec();
        let mut live = vec![false; ncols];
        for (m, col) in cols.chunks_mut(ny).enumerate() {
            if col.iter().any(|c| c.re != 0.0 || c.im != 0.0) {
                live[m] = true;
                self.ifft_y.process(col);
            }
        }
        let mut values = vec![0.0; nx * ny];
        let mut row = vec![Complex64::new(0.0, 0.0); nx];
        for j in (0..ny).step_by(2) {
            row.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for m in 0..ncols {
                if !live[m] {
                    continue;
                }
                let a = cols[m * ny + j];
                let b = cols[m * ny + j + 1];
                if m == 0 || m == nx / 2 {
                    row[m] = Complex64::new(a.re, b.re);
                } else {
                    row[m] = a + Complex64::i() * b;
                    row[nx - m] = a.conj() + Complex64::i() * b.conj();
                }
            }
            self.ifft_x.process(&mut row);
            for i in 0..nx {
                values[j * nx + i] = row[i].re;
                values[(j + 1) * nx + i] = row[i].im;
            }
        }
        values
    }
}

fn signed_index(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Half-plane Fourier coefficients of a real field (see module docs for layout).
#[derive(Debug, Clone)]
pub struct Spectrum {
    grid: Arc<Grid>,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(grid: &Arc<Grid>) -> Spectrum {
        Spectrum {
            data: vec![Complex64::new(0.0, 0.0); grid.ncols() * grid.ny()],
            grid: grid.clone(),
        }
    }

    pub fn from_data(grid: &Arc<Grid>, data: Vec<Complex64>) -> Result<Spectrum, SpectralError> {
        let expected = grid.ncols() * grid.ny();
        if data.len() != expected {
            return Err(SpectralError::BadLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Spectrum {
            grid: grid.clone(),
            data,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }
    pub fn col(&self, m: usize) -> &[Complex64] {
        let ny = self.grid.ny();
        &self.data[m * ny..(m + 1) * ny]
    }
    pub fn col_mut(&mut self, m: usize) -> &mut [Complex64] {
        let ny = self.grid.ny();
        &mut self.data[m * ny..(m + 1) * ny]
    }
    /// Coefficient at column m, row j.
    pub fn at(&self, m: usize, j: usize) -> Complex64 {
        self.data[m * self.grid.ny() + j]
    }
    /// Whether column m holds any non-zero coefficient.
    pub fn col_is_live(&self, m: usize) -> bool {
        self.col(m).iter().any(|c| c.re != 0.0 || c.im != 0.0)
    }
    /// Indices of the non-zero columns.
    pub fn live_columns(&self) -> Vec<usize> {
        (0..self.grid.ncols())
            .filter(|&m| self.col_is_live(m))
            .collect()
    }

    /// Applies a Fourier multiplier `mult(m, j, kx, ky)`.
    pub fn map_multiplier<F>(&self, mult: F) -> Spectrum
    where
        F: Fn(usize, usize, f64, f64) -> Complex64,
    {
        let g = &self.grid;
        let ny = g.ny();
        let mut out = self.clone();
        for m in 0..g.ncols() {
            let kx = g.kx(m);
            for j in 0..ny {
                let c = &mut out.data[m * ny + j];
                if c.re != 0.0 || c.im != 0.0 {
                    *c *= mult(m, j, kx, g.ky(j));
                }
            }
        }
        out
    }

    /// Spectral derivative of the given order along an axis.
    pub fn deriv(&self, axis: Axis, order: u32) -> Spectrum {
        let g = self.grid.clone();
        self.map_multiplier(|m, j, kx, ky| {
            let (k, nyq) = match axis {
                Axis::X => (kx, g.is_x_nyquist(m)),
                Axis::Y => (ky, g.is_y_nyquist(j)),
            };
            deriv_symbol(k, order, nyq)
        })
    }

    pub fn laplacian(&self) -> Spectrum {
        self.map_multiplier(|_, _, kx, ky| Complex64::new(-(kx * kx + ky * ky), 0.0))
    }

    /// Mean-zero solution w of Laplacian w = self.
    pub fn inv_laplacian(&self) -> Result<Spectrum, SpectralError> {
        self.check_mean_zero()?;
        let mut out = self.map_multiplier(|m, j, kx, ky| {
            if m == 0 && j == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(-1.0 / (kx * kx + ky * ky), 0.0)
            }
        });
        out.data[0] = Complex64::new(0.0, 0.0);
        Ok(out)
    }

    /// Multiplier |k|^{2a}; the zero mode is killed for a > 0 and kept for a = 0.
    pub fn frac_laplacian(&self, a: f64) -> Result<Spectrum, SpectralError> {
        if a < 0.0 {
            self.check_mean_zero()?;
        }
        if a == 0.0 {
            return Ok(self.clone());
        }
        let mut out = self.map_multiplier(|m, j, kx, ky| {
            if m == 0 && j == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new((kx * kx + ky * ky).powf(a), 0.0)
            }
        });
        out.data[0] = Complex64::new(0.0, 0.0);
        Ok(out)
    }

    /// x-antiderivative with zero x-mean; the x-Nyquist column is dropped.
    pub fn inv_dx(&self) -> Result<Spectrum, SpectralError> {
        let norm = self.l2_norm();
        let g = &self.grid;
        let mean_norm =
            (g.lx() * g.ly() * self.col(0).iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt();
        if mean_norm > MEAN_TOL * norm {
            return Err(SpectralError::NonZeroXMean { mean_norm, norm });
        }
        let g = self.grid.clone();
        let mut out = self.map_multiplier(|m, _, kx, _| {
            if m == 0 || g.is_x_nyquist(m) {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, -1.0 / kx)
            }
        });
        out.col_mut(0)
            .iter_mut()
            .for_each(|c| *c = Complex64::new(0.0, 0.0));
        let last = g.ncols() - 1;
        out.col_mut(last)
            .iter_mut()
            .for_each(|c| *c = Complex64::new(0.0, 0.0));
        Ok(out)
    }

    /// 2/3-rule truncation: zero modes with 3|m| > nx or 3|j| > ny.
    pub fn dealias(&self) -> Spectrum {
        let g = self.grid.clone();
        let (nx, ny) = (g.nx() as i64, g.ny() as i64);
        let mut out = self.clone();
        for m in 0..g.ncols() {
            for j in 0..g.ny() {
                if 3 * m as i64 > nx || 3 * g.ky_index(j).abs() > ny {
                    out.data[m * g.ny() + j] = Complex64::new(0.0, 0.0);
                }
            }
        }
        out
    }

    /// Sets the (0,0) coefficient to zero.
    pub fn remove_mean(&mut self) {
        self.data[0] = Complex64::new(0.0, 0.0);
    }

    /// Mean value of the field.
    pub fn mean(&self) -> f64 {
        self.data[0].re
    }

    fn check_mean_zero(&self) -> Result<(), SpectralError> {
        let coeff = self.data[0].norm();
        let norm = self.l2_norm();
        if coeff > MEAN_TOL * norm {
            return Err(SpectralError::NonZeroMean { coeff, norm });
        }
        Ok(())
    }

    /// Weighted Parseval sum Lx Ly sum w_m weight(k) Re(a conj b).
    pub fn pair_weighted<F>(&self, other: &Spectrum, weight: F) -> Result<f64, SpectralError>
    where
        F: Fn(f64, f64) -> f64,
    {
        if !self.grid.same_as(&other.grid) {
            return Err(SpectralError::GridMismatch);
        }
        let g = &self.grid;
        let ny = g.ny();
        let mut total = 0.0;
        for m in 0..g.ncols() {
            let a = self.col(m);
            let b = other.col(m);
            let kx = g.kx(m);
            let mut s = 0.0;
            for j in 0..ny {
                let p = a[j].re * b[j].re + a[j].im * b[j].im;
                if p != 0.0 {
                    s += weight(kx, g.ky(j)) * p;
                }
            }
            total += g.col_weight(m) * s;
        }
        Ok(total * g.lx() * g.ly())
    }

    /// L^2 inner product via Parseval.
    pub fn inner(&self, other: &Spectrum) -> Result<f64, SpectralError> {
        self.pair_weighted(other, |_, _| 1.0)
    }

    /// L^2 norm via Parseval.
    pub fn l2_norm(&self) -> f64 {
        self.hs_norm(0.0)
    }

    /// H^s norm with multiplier (1 + |k|^2)^{s/2}.
    pub fn hs_norm(&self, s: f64) -> f64 {
        let v = self
            .pair_weighted(self, |kx, ky| (1.0 + kx * kx + ky * ky).powf(s))
            .unwrap_or(0.0);
        v.max(0.0).sqrt()
    }

    pub fn scale(&self, a: f64) -> Spectrum {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|c| *c *= a);
        out
    }

    /// a*self + b*other.
    pub fn lincomb(&self, a: f64, other: &Spectrum, b: f64) -> Result<Spectrum, SpectralError> {
        if !self.grid.same_as(&other.grid) {
            return Err(SpectralError::GridMismatch);
        }
        let mut out = self.clone();
        for (c, d) in out.data.iter_mut().zip(&other.data) {
            *c = *c * a + *d * b;
        }
        Ok(out)
    }

    pub fn to_field(&self) -> ScalarField {
        ScalarField::from_spectrum(self.clone())
    }
}

/// Fourier symbol (i k)^order, zero at Nyquist for odd orders.
pub fn deriv_symbol(k: f64, order: u32, nyquist: bool) -> Complex64 {
    if order == 0 {
        return Complex64::new(1.0, 0.0);
    }
    if nyquist && order % 2 == 1 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(0.0, k).powu(order)
}

/// Real field on a grid with a lazily computed spectrum.
#[derive(Debug)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
    spectral_cache: OnceLock<Spectrum>,
}

impl Clone for ScalarField {
    fn clone(&self) -> Self {
        let cache = OnceLock::new();
        if let Some(s) = self.spectral_cache.get() {
            let _ = cache.set(s.clone());
        }
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.clone(),
            spectral_cache: cache,
        }
    }
}

impl ScalarField {
    /// Samples a function of (x, y) on the grid.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: &Arc<Grid>, f: F) -> ScalarField {
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let y = grid.y(j);
            for i in 0..nx {
                values.push(f(grid.x(i), y));
            }
        }
        ScalarField {
            grid: grid.clone(),
            values,
            spectral_cache: OnceLock::new(),
        }
    }

    /// Wraps samples; all entries must be finite.
    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<ScalarField, SpectralError> {
        if values.len() != grid.len() {
            return Err(SpectralError::BadLength {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SpectralError::NonFinite(i));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
            spectral_cache: OnceLock::new(),
        })
    }

    pub fn zeros(grid: &Arc<Grid>) -> ScalarField {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
            spectral_cache: OnceLock::new(),
        }
    }

    pub fn from_spectrum(spec: Spectrum) -> ScalarField {
        let values = spec.grid.inverse(&spec.data);
        let cache = OnceLock::new();
        let _ = cache.set(spec.clone());
        ScalarField {
            grid: spec.grid,
            values,
            spectral_cache: cache,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    /// Sample at column i, row j.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx() + i]
    }

    /// Fourier coefficients (computed once, then cached).
    pub fn spectrum(&self) -> &Spectrum {
        self.spectral_cache.get_or_init(|| Spectrum {
            grid: self.grid.clone(),
            data: self.grid.forward(&self.values),
        })
    }

    /// Pointwise map.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            spectral_cache: OnceLock::new(),
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with<F: Fn(f64, f64) -> f64>(
        &self,
        other: &ScalarField,
        f: F,
    ) -> Result<ScalarField, SpectralError> {
        if !self.grid.same_as(&other.grid) {
            return Err(SpectralError::GridMismatch);
        }
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            spectral_cache: OnceLock::new(),
        })
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField, SpectralError> {
        self.zip_with(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField, SpectralError> {
        self.zip_with(other, |a, b| a - b)
    }
    pub fn mul(&self, other: &ScalarField) -> Result<ScalarField, SpectralError> {
        self.zip_with(other, |a, b| a * b)
    }
    pub fn scale(&self, a: f64) -> ScalarField {
        self.map(|v| a * v)
    }
    /// Largest absolute sample.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Planar vector field (x and y components on one grid).
#[derive(Debug, Clone)]
pub struct VectorField2 {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField2 {
    pub fn new(x: ScalarField, y: ScalarField) -> Result<VectorField2, SpectralError> {
        if !x.grid().same_as(y.grid()) {
            return Err(SpectralError::GridMismatch);
        }
        Ok(VectorField2 { x, y })
    }

    /// Spectral divergence.
    pub fn divergence(&self) -> ScalarField {
        let d = self
            .x
            .spectrum()
            .deriv(Axis::X, 1)
            .lincomb(1.0, &self.y.spectrum().deriv(Axis::Y, 1), 1.0)
            .expect("components share a grid");
        d.to_field()
    }
}

/// Spectral derivative of the given order.
pub fn deriv(f: &ScalarField, axis: Axis, order: u32) -> ScalarField {
    f.spectrum().deriv(axis, order).to_field()
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    f.spectrum().laplacian().to_field()
}

/// Mean-zero inverse Laplacian; fails with `NonZeroMean` otherwise.
pub fn inv_laplacian(f: &ScalarField) -> Result<ScalarField, SpectralError> {
    Ok(f.spectrum().inv_laplacian()?.to_field())
}

/// (-Laplacian)^a via the multiplier |k|^{2a}.
pub fn frac_laplacian(f: &ScalarField, a: f64) -> Result<ScalarField, SpectralError> {
    Ok(f.spectrum().frac_laplacian(a)?.to_field())
}

/// Zero-x-mean right inverse of d/dx; fails with `NonZeroXMean` otherwise.
pub fn inv_dx(f: &ScalarField) -> Result<ScalarField, SpectralError> {
    Ok(f.spectrum().inv_dx()?.to_field())
}

/// Perpendicular gradient (-d_y psi, d_x psi).
pub fn perp_grad(psi: &ScalarField) -> VectorField2 {
    let s = psi.spectrum();
    VectorField2 {
        x: s.deriv(Axis::Y, 1).scale(-1.0).to_field(),
        y: s.deriv(Axis::X, 1).to_field(),
    }
}

/// 2/3-rule dealiasing.
pub fn dealias(f: &ScalarField) -> ScalarField {
    f.spectrum().dealias().to_field()
}

/// L^p norm by trapezoidal quadrature; `p = f64::INFINITY` gives the grid max.
pub fn lp_norm(f: &ScalarField, p: f64) -> f64 {
    lp_norm_values(f.values(), f.grid().dx() * f.grid().dy(), p)
}

/// L^p norm of samples with cell area `area`.
pub fn lp_norm_values(values: &[f64], area: f64, p: f64) -> f64 {
    if p.is_infinite() {
        return values.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    if p == 2.0 {
        return (area * values.iter().map(|v| v * v).sum::<f64>()).sqrt();
    }
    (area * values.iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
}

/// H^s norm with multiplier (1 + |k|^2)^{s/2}; the zero mode has multiplier 1.
pub fn hs_norm(f: &ScalarField, s: f64) -> f64 {
    f.spectrum().hs_norm(s)
}

/// L^2 pairing of two real fields.
pub fn inner(f: &ScalarField, g: &ScalarField) -> Result<f64, SpectralError> {
    if !f.grid().same_as(g.grid()) {
        return Err(SpectralError::GridMismatch);
    }
    let area = f.grid().dx() * f.grid().dy();
    Ok(area
        * f.values()
            .iter()
            .zip(g.values())
            .map(|(a, b)| a * b)
            .sum::<f64>())
}

/// L^2 pairing of two planar vector fields.
pub fn inner_vec(a: &VectorField2, b: &VectorField2) -> Result<f64, SpectralError> {
    Ok(inner(&a.x, &b.x)? + inner(&a.y, &b.y)?)
}

/// Uniform periodic 1D line [start, start + length) with spectral derivatives
/// of complex profiles.
pub struct Line {
    n: usize,
    start: f64,
    length: f64,
    k: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Line {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Line")
            .field("n", &self.n)
            .field("start", &self.start)
            .field("length", &self.length)
            .finish()
    }
}

impl Line {
    pub fn new(n: usize, start: f64, length: f64) -> Result<Line, SpectralError> {
        if n < 8 || n % 2 != 0 || !(length > 0.0) {
            return Err(SpectralError::InvalidGrid(format!(
                "line needs even n >= 8 and positive length (n = {n}, length = {length})"
            )));
        }
        let mut planner = FftPlanner::new();
        let k = (0..n)
            .map(|j| 2.0 * std::f64::consts::PI * signed_index(j, n) as f64 / length)
            .collect();
        Ok(Line {
            n,
            start,
            length,
            k,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn start(&self) -> f64 {
        self.start
    }
    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }
    pub fn point(&self, j: usize) -> f64 {
        self.start + j as f64 * self.h()
    }
    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.point(j)).collect()
    }
    pub fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    /// Normalized Fourier coefficients (1/n) FFT(u).
    pub fn forward(&self, u: &[Complex64]) -> Vec<Complex64> {
        let mut buf = u.to_vec();
        self.fwd.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|c| *c *= s);
        buf
    }

    /// Synthesis from normalized coefficients.
    pub fn inverse(&self, c: &[Complex64]) -> Vec<Complex64> {
        let mut buf = c.to_vec();
        self.inv.process(&mut buf);
        buf
    }

    /// Applies a multiplier m(k) to a complex profile.
    pub fn apply<F: Fn(f64) -> Complex64>(&self, u: &[Complex64], mult: F) -> Vec<Complex64> {
        let mut c = self.forward(u);
        for (cj, &k) in c.iter_mut().zip(&self.k) {
            *cj *= mult(k);
        }
        self.inverse(&c)
    }

    /// Spectral derivative; odd orders zero the Nyquist mode.
    pub fn deriv(&self, u: &[Complex64], order: u32) -> Vec<Complex64> {
        let kn = self.k[self.n / 2];
        self.apply(u, |k| deriv_symbol(k, order, k == kn))
    }
}
