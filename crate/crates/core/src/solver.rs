//! Pseudo-spectral time integration of the (2+1/2)-dimensional electron-MHD
//! and Hall-MHD systems around B = f(y) d_x on a periodic box.
//!
//! Linearized electron-MHD, fields (b^z, psi):
//!
//! ```text
//! d_t b^z = f d_x Lap psi - f'' d_x psi,      d_t psi = -f d_x b^z.
//! ```
//!
//! Linearized Hall-MHD, fields (u^z, omega, b^z, psi):
//!
//! ```text
//! d_t u^z   = f d_x b^z + nu Lap u^z,
//! d_t omega = f'' d_x psi - f d_x Lap psi + nu Lap omega,
//! d_t b^z   = f d_x u^z + f d_x Lap psi - f'' d_x psi,
//! d_t psi   = f d_x (-Lap)^{-1} omega - f d_x b^z.
//! ```
//!
//! The nonlinear electron-MHD variant adds -grad_perp psi . grad Lap psi to
//! d_t b^z and grad_perp psi . grad b^z to d_t psi, grad_perp = (-d_y, d_x),
//! with 2/3-rule dealiasing of the whole right-hand side. Fractional
//! dissipation adds -eta (-Lap)^alpha to the b-fields and replaces the viscous
//! term by -nu (-Lap)^{1+beta} on the u-fields. Perturbations satisfy
//! b^{x,y} = -grad_perp psi and u^{x,y} = -grad_perp (-Lap)^{-1} omega.
//!
//! Time stepping is classical RK4 in integrating-factor (Lawson) form: the
//! diagonal dissipation is integrated exactly and the rest is explicit. With
//! no dissipation this is plain RK4.
//!
//! Since f depends on y only, x-Fourier columns decouple in the linear
//! variants; the state stores only the columns that carry data and
//! variable-coefficient products are formed column by column in physical y.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::background::{evolve_series, BackgroundError, BackgroundProfile, TrigSeries};
use crate::spectral::{lp_norm_values, Grid, ScalarField, SpectralError, Spectrum};
use crate::wavepacket::{PacketError, PacketSampler, WavePacket};

type C64 = Complex64;
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Solver errors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("non-finite state at t = {0}")]
    BlowUp(f64),
    #[error("invalid solver input: {0}")]
    Invalid(String),
    #[error("mean of {field} drifted to {value:e}")]
    MeanDrift { field: &'static str, value: f64 },
    #[error("probe grid does not match the solver grid")]
    GridMismatch,
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Background(#[from] BackgroundError),
}

/// Equation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    EmhdLinear,
    EmhdNonlinear,
    HallLinear,
    EmhdFradiss,
    HallFradiss,
}

impl Variant {
    pub fn is_hall(self) -> bool {
        matches!(self, Variant::HallLinear | Variant::HallFradiss)
    }
    pub fn is_nonlinear(self) -> bool {
        self == Variant::EmhdNonlinear
    }
    pub fn n_fields(self) -> usize {
        if self.is_hall() {
            4
        } else {
            2
        }
    }
    pub fn name(self) -> &'static str {
        match self {
            Variant::EmhdLinear => "emhd_linear",
            Variant::EmhdNonlinear => "emhd_nonlinear",
            Variant::HallLinear => "hall_linear",
            Variant::EmhdFradiss => "emhd_fradiss",
            Variant::HallFradiss => "hall_fradiss",
        }
    }
}

/// Whether f is held at f0 or follows the dissipative evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    Frozen,
    Evolving,
}

/// Physical parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Viscosity (u-fields), nu >= 0.
    pub nu: f64,
    /// Magnetic dissipation coefficient, eta_diss >= 0.
    pub eta_diss: f64,
    /// Order of the magnetic dissipation, alpha in [0, 1].
    pub alpha: f64,
    /// Extra viscous order, beta in [0, 1/2).
    pub beta: f64,
}

impl Default for Params {
    fn default() -> Params {
        Params {
            nu: 0.0,
            eta_diss: 0.0,
            alpha: 0.0,
            beta: 0.0,
        }
    }
}

impl Params {
    fn validate(&self, variant: Variant) -> Result<(), SolverError> {
        let dissipative = matches!(variant, Variant::EmhdFradiss | Variant::HallFradiss);
        if !dissipative && (self.eta_diss != 0.0 || self.beta != 0.0) {
            return Err(SolverError::Invalid(format!(
                "{} takes no magnetic dissipation or beta; use a fradiss variant",
                variant.name()
            )));
        }
        let ok = self.nu >= 0.0
            && self.eta_diss >= 0.0
            && (0.0..=1.0).contains(&self.alpha)
            && (0.0..0.5).contains(&self.beta);
        if !ok {
            return Err(SolverError::Invalid(format!(
                "need nu, eta_diss >= 0, alpha in [0,1], beta in [0,1/2); got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Background field seen by the solver.
#[derive(Debug, Clone)]
pub enum Background {
    /// Exact 2 pi periodic series (constant backgrounds included).
    Series(TrigSeries),
    /// A tabulated degenerate profile.
    Profile(Arc<BackgroundProfile>),
    /// f(t) = e^{-eta t (-d_y^2)^alpha} f0 (used when the mode is evolving).
    Evolving {
        series0: TrigSeries,
        eta_diss: f64,
        alpha: f64,
    },
}

/// f, f', f'' sampled at the grid rows.
#[derive(Debug, Clone)]
pub struct BackgroundSamples {
    pub f: Vec<f64>,
    pub fp: Vec<f64>,
    pub fpp: Vec<f64>,
}

impl Background {
    pub fn constant(c: f64) -> Background {
        Background::Series(TrigSeries::constant(c))
    }

    /// Background evolving under the dissipation of the given parameters.
    pub fn evolving(
        profile: &BackgroundProfile,
        params: &Params,
    ) -> Result<Background, SolverError> {
        let series0 = profile.trig().ok_or(BackgroundError::NotPeriodic)?;
        Ok(Background::Evolving {
            series0,
            eta_diss: params.eta_diss,
            alpha: params.alpha,
        })
    }

    /// (f, f', f'') at (t, y).
    pub fn eval(&self, t: f64, y: f64) -> [f64; 3] {
        match self {
            Background::Series(s) => {
                let v = s.eval(y);
                [v[0], v[1], v[2]]
            }
            Background::Profile(p) => p.eval(y),
            Background::Evolving {
                series0,
                eta_diss,
                alpha,
            } => {
                let v = evolve_series(series0, *eta_diss, *alpha, t).eval(y);
                [v[0], v[1], v[2]]
            }
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, Background::Evolving { eta_diss, .. } if *eta_diss > 0.0)
    }

    /// Samples at the grid rows at time t.
    pub fn samples(&self, t: f64, grid: &Grid) -> BackgroundSamples {
        let series = match self {
            Background::Evolving {
                series0,
                eta_diss,
                alpha,
            } => Some(evolve_series(series0, *eta_diss, *alpha, t)),
            _ => None,
        };
        let (mut f, mut fp, mut fpp) = (
            vec![0.0; grid.ny()],
            vec![0.0; grid.ny()],
            vec![0.0; grid.ny()],
        );
        for j in 0..grid.ny() {
            let y = grid.y(j);
            let v = match &series {
                Some(s) => {
                    let v = s.eval(y);
                    [v[0], v[1], v[2]]
                }
                None => self.eval(0.0, y),
            };
            f[j] = v[0];
            fp[j] = v[1];
            fpp[j] = v[2];
        }
        BackgroundSamples { f, fp, fpp }
    }
}

/// Solver state: time, equations, parameters and the spectral fields.
///
/// Fields are kept as the active x-Fourier columns of their half-plane
/// spectra, in the order (b^z, psi) or (u^z, omega, b^z, psi).
#[derive(Debug, Clone)]
pub struct SolverState {
    pub t: f64,
    pub variant: Variant,
    pub params: Params,
    pub background: Arc<Background>,
    pub mode: BackgroundMode,
    grid: Arc<Grid>,
    cols: Vec<usize>,
    fields: Vec<Vec<C64>>,
}

/// Named field of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Uz,
    Omega,
    Bz,
    Psi,
}

impl SolverState {
    /// Builds a state from initial spectra, ordered as the variant's fields.
    ///
    /// psi gets its mean removed; the nonlinear variant is dealiased.
    pub fn new(
        variant: Variant,
        params: Params,
        background: Arc<Background>,
        mode: BackgroundMode,
        initial: Vec<Spectrum>,
    ) -> Result<SolverState, SolverError> {
        params.validate(variant)?;
        if initial.len() != variant.n_fields() {
            return Err(SolverError::Invalid(format!(
                "{} expects {} fields, got {}",
                variant.name(),
                variant.n_fields(),
                initial.len()
            )));
        }
        let grid = initial[0].grid().clone();
        if initial.iter().any(|s| !s.grid().same_as(&grid)) {
            return Err(SolverError::GridMismatch);
        }
        if matches!(
            &*background,
            Background::Series(_) | Background::Evolving { .. }
        ) && (grid.ly() - 2.0 * std::f64::consts::PI).abs() > 1e-12
        {
            return Err(SolverError::Invalid(
                "series backgrounds need Ly = 2 pi".into(),
            ));
        }
        if mode == BackgroundMode::Evolving && !matches!(&*background, Background::Evolving { .. })
        {
            return Err(SolverError::Invalid(
                "evolving mode needs an evolving background".into(),
            ));
        }
        let ny = grid.ny();
        let cols: Vec<usize> = if variant.is_nonlinear() {
            (0..grid.ncols()).filter(|&m| 3 * m <= grid.nx()).collect()
        } else {
            (0..grid.ncols())
                .filter(|&m| initial.iter().any(|s| s.col_is_live(m)))
                .collect()
        };
        let mut fields = Vec::with_capacity(initial.len());
        for spec in &initial {
            let spec = if variant.is_nonlinear() {
                spec.dealias()
            } else {
                spec.clone()
            };
            let mut buf = Vec::with_capacity(cols.len() * ny);
            for &m in &cols {
                buf.extend_from_slice(spec.col(m));
            }
            if buf.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(SpectralError::NonFinite(0).into());
            }
            fields.push(buf);
        }
        let mut st = SolverState {
            t: 0.0,
            variant,
            params,
            background,
            mode,
            grid,
            cols,
            fields,
        };
        let ip = st.index(FieldKind::Psi);
        if let Some(c0) = st.col_pos(0) {
            st.fields[ip][c0 * ny] = ZERO;
        }
        if variant.is_hall() {
            let w = st.spectrum(FieldKind::Omega);
            if w.data()[0].norm() > 1e-12 * (1.0 + w.l2_norm()) {
                return Err(SolverError::MeanDrift {
                    field: "omega",
                    value: w.data()[0].norm(),
                });
            }
        }
        Ok(st)
    }

    /// Zero initial data of the variant.
    pub fn zeros(
        variant: Variant,
        params: Params,
        background: Arc<Background>,
        mode: BackgroundMode,
        grid: &Arc<Grid>,
    ) -> Result<SolverState, SolverError> {
        let init = vec![Spectrum::zeros(grid); variant.n_fields()];
        SolverState::new(variant, params, background, mode, init)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    /// Active x-Fourier columns.
    pub fn columns(&self) -> &[usize] {
        &self.cols
    }

    fn col_pos(&self, m: usize) -> Option<usize> {
        self.cols.iter().position(|&c| c == m)
    }

    fn index(&self, kind: FieldKind) -> usize {
        match (self.variant.is_hall(), kind) {
            (true, FieldKind::Uz) => 0,
            (true, FieldKind::Omega) => 1,
            (true, FieldKind::Bz) => 2,
            (true, FieldKind::Psi) => 3,
            (false, FieldKind::Bz) => 0,
            (false, FieldKind::Psi) => 1,
            (false, _) => usize::MAX,
        }
    }

    pub fn has(&self, kind: FieldKind) -> bool {
        self.index(kind) != usize::MAX
    }

    /// Full half-plane spectrum of a field (zero for absent fields).
    pub fn spectrum(&self, kind: FieldKind) -> Spectrum {
        let mut s = Spectrum::zeros(&self.grid);
        if !self.has(kind) {
            return s;
        }
        let ny = self.grid.ny();
        let buf = &self.fields[self.index(kind)];
        for (p, &m) in self.cols.iter().enumerate() {
            s.col_mut(m).copy_from_slice(&buf[p * ny..(p + 1) * ny]);
        }
        s
    }

    /// Physical field.
    pub fn field(&self, kind: FieldKind) -> ScalarField {
        self.spectrum(kind).to_field()
    }

    /// Column m of a field (zeros if inactive).
    pub fn column(&self, kind: FieldKind, m: usize) -> Vec<C64> {
        let ny = self.grid.ny();
        match (self.has(kind), self.col_pos(m)) {
            (true, Some(p)) => self.fields[self.index(kind)][p * ny..(p + 1) * ny].to_vec(),
            _ => vec![ZERO; ny],
        }
    }

    fn raw(&self, kind: FieldKind) -> &[C64] {
        &self.fields[self.index(kind)]
    }

    /// a * self + b * other (same layout).
    pub fn lincomb(&self, a: f64, other: &SolverState, b: f64) -> Result<SolverState, SolverError> {
        if self.cols != other.cols
            || !self.grid.same_as(&other.grid)
            || self.variant != other.variant
        {
            return Err(SolverError::GridMismatch);
        }
        let mut out = self.clone();
        for (f, g) in out.fields.iter_mut().zip(&other.fields) {
            for (x, y) in f.iter_mut().zip(g) {
                *x = *x * a + *y * b;
            }
        }
        Ok(out)
    }

    /// Largest coefficient difference to another state.
    pub fn max_diff(&self, other: &SolverState) -> f64 {
        self.fields
            .iter()
            .zip(&other.fields)
            .flat_map(|(f, g)| f.iter().zip(g).map(|(a, b)| (a - b).norm()))
            .fold(0.0, f64::max)
    }

    /// Negates b^z (used by the time-reversal check).
    pub fn negate_bz(&mut self) {
        let i = self.index(FieldKind::Bz);
        self.fields[i].iter_mut().for_each(|c| *c = -*c);
    }

    /// Sum over active columns of col_weight * weight(kx, ky) * Re(a conj b) * area.
    fn pair(&self, a: &[C64], b: &[C64], weight: impl Fn(f64, f64) -> f64) -> f64 {
        pair_cols(&self.grid, &self.cols, a, b, weight)
    }

    /// ||b||^2 = ||grad psi||^2 + ||b^z||^2.
    pub fn b_norm_sq(&self) -> f64 {
        let (bz, psi) = (self.raw(FieldKind::Bz), self.raw(FieldKind::Psi));
        self.pair(psi, psi, |kx, ky| kx * kx + ky * ky) + self.pair(bz, bz, |_, _| 1.0)
    }

    /// ||u||^2 = ||u^z||^2 + ||grad (-Lap)^{-1} omega||^2 (zero for electron-MHD).
    pub fn u_norm_sq(&self) -> f64 {
        if !self.variant.is_hall() {
            return 0.0;
        }
        let (uz, w) = (self.raw(FieldKind::Uz), self.raw(FieldKind::Omega));
        self.pair(uz, uz, |_, _| 1.0)
            + self.pair(w, w, |kx, ky| {
                let k2 = kx * kx + ky * ky;
                if k2 == 0.0 {
                    0.0
                } else {
                    1.0 / k2
                }
            })
    }

    /// ||b||_{H^s} with multiplier (1 + |k|^2)^{s/2}.
    pub fn b_hs(&self, s: f64) -> f64 {
        let (bz, psi) = (self.raw(FieldKind::Bz), self.raw(FieldKind::Psi));
        let w = |kx: f64, ky: f64| (1.0 + kx * kx + ky * ky).powf(s);
        (self.pair(psi, psi, |kx, ky| (kx * kx + ky * ky) * w(kx, ky)) + self.pair(bz, bz, w))
            .max(0.0)
            .sqrt()
    }

    /// L^p norm of |b| = |(d_y psi, -d_x psi, b^z)|.
    pub fn b_lp(&self, p: f64) -> f64 {
        let psi = self.spectrum(FieldKind::Psi);
        let bx = psi.deriv(crate::spectral::Axis::Y, 1).to_field();
        let by = psi.deriv(crate::spectral::Axis::X, 1).to_field();
        let bz = self.field(FieldKind::Bz);
        let mag: Vec<f64> = (0..bz.values().len())
            .map(|i| {
                (bx.values()[i].powi(2) + by.values()[i].powi(2) + bz.values()[i].powi(2)).sqrt()
            })
            .collect();
        lp_norm_values(&mag, self.grid.lx() * self.grid.ly(), p)
    }

    /// Largest |b| at grid points.
    pub fn b_max(&self) -> f64 {
        self.b_lp(f64::INFINITY)
    }

    fn check_finite(&self) -> Result<(), SolverError> {
        if self
            .fields
            .iter()
            .any(|f| f.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()))
        {
            return Err(SolverError::BlowUp(self.t));
        }
        Ok(())
    }
}

fn pair_cols(
    grid: &Grid,
    cols: &[usize],
    a: &[C64],
    b: &[C64],
    weight: impl Fn(f64, f64) -> f64,
) -> f64 {
    let ny = grid.ny();
    let mut total = 0.0;
    for (p, &m) in cols.iter().enumerate() {
        let kx = grid.kx(m);
        let mut s = 0.0;
        for j in 0..ny {
            let (x, y) = (a[p * ny + j], b[p * ny + j]);
            let v = x.re * y.re + x.im * y.im;
            if v != 0.0 {
                s += weight(kx, grid.ky(j)) * v;
            }
        }
        total += grid.col_weight(m) * s;
    }
    total * grid.lx() * grid.ly()
}

/// Advisory CFL time step.
///
/// dt = safety / (max|f| kx_max k_max + eta_diss k_max^{2 alpha}
///      + nu k_max^{2 + 2 beta} + nonlinear bound), with k_max the 2/3-rule
/// cutoff, kx_max the largest active x-wavenumber (capped by the cutoff) and
/// the nonlinear bound max|b| k_max^2. Returns infinity when every rate vanishes.
pub fn cfl_dt(state: &SolverState, safety: f64) -> f64 {
    let g = &state.grid;
    let kcut_x = (g.nx() / 3) as f64 * 2.0 * std::f64::consts::PI / g.lx();
    let kcut_y = (g.ny() / 3) as f64 * 2.0 * std::f64::consts::PI / g.ly();
    let k_max = kcut_x.max(kcut_y);
    let kx_max = state
        .cols
        .iter()
        .map(|&m| g.kx(m))
        .fold(0.0, f64::max)
        .min(kcut_x);
    let t = if state.mode == BackgroundMode::Evolving {
        state.t
    } else {
        0.0
    };
    let fmax = state
        .background
        .samples(t, g)
        .f
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let p = &state.params;
    let mut rate = fmax * kx_max * k_max;
    if p.eta_diss > 0.0 {
        rate += p.eta_diss * k_max.powf(2.0 * p.alpha);
    }
    if state.variant.is_hall() && p.nu > 0.0 {
        rate += p.nu * k_max.powf(2.0 + 2.0 * p.beta);
    }
    if state.variant.is_nonlinear() {
        rate += state.b_max() * k_max * k_max;
    }
    if rate == 0.0 {
        f64::INFINITY
    } else {
        safety / rate
    }
}

/// CFL step for the explicit part only: dissipation is integrated exactly by
/// the integrating factor, so only the dispersive and nonlinear rates count.
pub fn explicit_dt(state: &SolverState, safety: f64) -> f64 {
    let mut st = state.clone();
    st.params.nu = 0.0;
    st.params.eta_diss = 0.0;
    cfl_dt(&st, safety)
}

/// Time integrator with cached background samples and integrating factors.
pub struct Stepper {
    grid: Arc<Grid>,
    variant: Variant,
    background: Arc<Background>,
    mode: BackgroundMode,
    cols: Vec<usize>,
    frozen: BackgroundSamples,
    /// Dissipation symbol per field (nonpositive), laid out like the fields.
    symbols: Vec<Vec<f64>>,
    factors: Option<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl Stepper {
    pub fn new(state: &SolverState) -> Stepper {
        let g = state.grid.clone();
        let ny = g.ny();
        let p = state.params;
        let mut symbols = Vec::new();
        for i in 0..state.variant.n_fields() {
            let u_field = state.variant.is_hall() && i < 2;
            let mut sym = vec![0.0; state.cols.len() * ny];
            for (c, &m) in state.cols.iter().enumerate() {
                let kx = g.kx(m);
                for j in 0..ny {
                    let k2 = kx * kx + g.ky(j) * g.ky(j);
                    sym[c * ny + j] = if u_field {
                        if p.nu > 0.0 {
                            -p.nu * k2.powf(1.0 + p.beta)
                        } else {
                            0.0
                        }
                    } else if p.eta_diss > 0.0 {
                        if p.alpha == 0.0 {
                            -p.eta_diss
                        } else {
                            -p.eta_diss * k2.powf(p.alpha)
                        }
                    } else {
                        0.0
                    };
                }
            }
            symbols.push(sym);
        }
        Stepper {
            frozen: state.background.samples(0.0, &g),
            grid: g,
            variant: state.variant,
            background: state.background.clone(),
            mode: state.mode,
            cols: state.cols.clone(),
            symbols,
            factors: None,
        }
    }

    fn samples_at(&self, t: f64) -> std::borrow::Cow<'_, BackgroundSamples> {
        if self.mode == BackgroundMode::Evolving && self.background.is_time_dependent() {
            std::borrow::Cow::Owned(self.background.samples(t, &self.grid))
        } else {
            std::borrow::Cow::Borrowed(&self.frozen)
        }
    }

    fn dissipative(&self) -> bool {
        self.symbols.iter().any(|s| s.iter().any(|&v| v != 0.0))
    }

    /// Non-dissipative right-hand side (linear part plus quadratic terms).
    fn rhs_core(&self, fields: &[Vec<C64>], bg: &BackgroundSamples) -> Vec<Vec<C64>> {
        let out = linear_rhs(&self.grid, &self.cols, self.variant.is_hall(), fields, bg);
        if self.variant.is_nonlinear() {
            let mut out = out;
            let q = quadratic_rhs(&self.grid, &self.cols, &fields[0], &fields[1]);
            for (o, qv) in out.iter_mut().zip(q) {
                for (a, b) in o.iter_mut().zip(qv) {
                    *a += b;
                }
            }
            project(&self.grid, &self.cols, &mut out);
            out
        } else {
            out
        }
    }

    /// Full right-hand side including dissipation, at time t.
    pub fn rhs(&self, state: &SolverState) -> Vec<Vec<C64>> {
        let bg = self.samples_at(state.t);
        let mut out = self.rhs_core(&state.fields, &bg);
        for (i, o) in out.iter_mut().enumerate() {
            for (a, (&s, c)) in o
                .iter_mut()
                .zip(self.symbols[i].iter().zip(&state.fields[i]))
            {
                *a += c * s;
            }
        }
        out
    }

    fn ensure_factors(&mut self, h: f64) {
        if matches!(&self.factors, Some((hh, _, _)) if *hh == h) {
            return;
        }
        let full = self
            .symbols
            .iter()
            .map(|s| s.iter().map(|v| (v * h).exp()).collect())
            .collect();
        let half = self
            .symbols
            .iter()
            .map(|s| s.iter().map(|v| (v * 0.5 * h).exp()).collect())
            .collect();
        self.factors = Some((h, full, half));
    }

    fn fix_means(&self, fields: &mut [Vec<C64>]) {
        if self.cols.first() == Some(&0) {
            let ip = if self.variant.is_hall() { 3 } else { 1 };
            fields[ip][0] = ZERO;
        }
    }

    /// One RK4 step of size h (integrating factor form).
    pub fn step(&mut self, state: &mut SolverState, h: f64) -> Result<(), SolverError> {
        if state.cols != self.cols {
            return Err(SolverError::GridMismatch);
        }
        if h == 0.0 {
            return Ok(());
        }
        let t = state.t;
        let u = &state.fields;
        let nf = u.len();
        let diss = self.dissipative();
        if diss {
            self.ensure_factors(h);
        }
        let apply = |f: &Option<&Vec<Vec<f64>>>, v: &[Vec<C64>]| -> Vec<Vec<C64>> {
            match f {
                None => v.to_vec(),
                Some(e) => v
                    .iter()
                    .zip(e.iter())
                    .map(|(x, m)| x.iter().zip(m).map(|(a, b)| a * b).collect())
                    .collect(),
            }
        };
        let (ef, eh) = match &self.factors {
            Some((_, a, b)) if diss => (Some(a), Some(b)),
            _ => (None, None),
        };
        let axpy = |x: &[Vec<C64>], a: f64, y: &[Vec<C64>]| -> Vec<Vec<C64>> {
            x.iter()
                .zip(y)
                .map(|(p, q)| p.iter().zip(q).map(|(s, d)| s + d * a).collect())
                .collect()
        };
        let bg0 = self.samples_at(t).into_owned();
        let bgm = self.samples_at(t + 0.5 * h).into_owned();
        let bg1 = self.samples_at(t + h).into_owned();

        let k1 = self.rhs_core(u, &bg0);
        let mut ua = apply(&eh, &axpy(u, 0.5 * h, &k1));
        self.fix_means(&mut ua);
        let k2 = self.rhs_core(&ua, &bgm);
        let eu_half = apply(&eh, u);
        let mut ub = axpy(&eu_half, 0.5 * h, &k2);
        self.fix_means(&mut ub);
        let k3 = self.rhs_core(&ub, &bgm);
        let eu_full = apply(&ef, u);
        let mut uc = axpy(&eu_full, h, &apply(&eh, &k3));
        self.fix_means(&mut uc);
        let k4 = self.rhs_core(&uc, &bg1);

        let k1e = apply(&ef, &k1);
        let k23 = apply(&eh, &axpy(&k2, 1.0, &k3));
        let mut next = Vec::with_capacity(nf);
        for i in 0..nf {
            let v: Vec<C64> = (0..eu_full[i].len())
                .map(|n| eu_full[i][n] + (k1e[i][n] + k23[i][n] * 2.0 + k4[i][n]) * (h / 6.0))
                .collect();
            next.push(v);
        }
        self.fix_means(&mut next);
        state.fields = next;
        state.t = t + h;
        state.check_finite()?;
        if self.variant.is_hall() {
            if let Some(0) = self.cols.first() {
                let m = state.fields[1][0].norm();
                if m > 1e-10 * (1.0 + state.u_norm_sq().sqrt()) {
                    return Err(SolverError::MeanDrift {
                        field: "omega",
                        value: m,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Column-wise product of a spectral column with a background sample vector.
fn mul_bg(grid: &Grid, col: &[C64], g: &[f64]) -> Vec<C64> {
    let ny = grid.ny();
    if col.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
        return vec![ZERO; ny];
    }
    let mut buf = col.to_vec();
    grid.ifft_y(&mut buf);
    for (v, w) in buf.iter_mut().zip(g) {
        *v *= *w;
    }
    grid.fft_y(&mut buf);
    let s = 1.0 / ny as f64;
    buf.iter_mut().for_each(|v| *v *= s);
    buf
}

/// f Lap psi - f'' psi for one column (shared by the b^z and omega equations).
fn q_term(grid: &Grid, kx: f64, psi: &[C64], bg: &BackgroundSamples) -> Vec<C64> {
    let ny = grid.ny();
    if psi.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
        return vec![ZERO; ny];
    }
    let mut lap = psi.to_vec();
    let mut raw = psi.to_vec();
    for (j, c) in lap.iter_mut().enumerate() {
        *c *= -(kx * kx + grid.ky(j) * grid.ky(j));
    }
    grid.ifft_y(&mut lap);
    grid.ifft_y(&mut raw);
    for j in 0..ny {
        lap[j] = lap[j] * bg.f[j] - raw[j] * bg.fpp[j];
    }
    grid.fft_y(&mut lap);
    let s = 1.0 / ny as f64;
    lap.iter_mut().for_each(|v| *v *= s);
    lap
}

/// Linear right-hand side without dissipation.
fn linear_rhs(
    grid: &Grid,
    cols: &[usize],
    hall: bool,
    fields: &[Vec<C64>],
    bg: &BackgroundSamples,
) -> Vec<Vec<C64>> {
    let ny = grid.ny();
    let per_col: Vec<Vec<Vec<C64>>> = cols
        .par_iter()
        .enumerate()
        .map(|(p, &m)| {
            let nf = fields.len();
            let mut out = vec![vec![ZERO; ny]; nf];
            if m == 0 || grid.is_x_nyquist(m) {
                return out;
            }
            let kx = grid.kx(m);
            let ik = C64::new(0.0, kx);
            let sl = |i: usize| &fields[i][p * ny..(p + 1) * ny];
            let (ib, ip) = if hall { (2, 3) } else { (0, 1) };
            let q = q_term(grid, kx, sl(ip), bg);
            let fb = mul_bg(grid, sl(ib), &bg.f);
            for j in 0..ny {
                out[ib][j] = ik * q[j];
                out[ip][j] = -ik * fb[j];
            }
            if hall {
                let fu = mul_bg(grid, sl(0), &bg.f);
                let phi: Vec<C64> = sl(1)
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w / (kx * kx + grid.ky(j) * grid.ky(j)))
                    .collect();
                let fphi = mul_bg(grid, &phi, &bg.f);
                for j in 0..ny {
                    out[0][j] = ik * fb[j];
                    out[1][j] = -ik * q[j];
                    out[ib][j] += ik * fu[j];
                    out[ip][j] += ik * fphi[j];
                }
            }
            out
        })
        .collect();
    let mut out = vec![Vec::with_capacity(cols.len() * ny); fields.len()];
    for c in per_col {
        for (o, v) in out.iter_mut().zip(c) {
            o.extend(v);
        }
    }
    out
}

fn expand(grid: &Arc<Grid>, cols: &[usize], buf: &[C64]) -> Spectrum {
    let ny = grid.ny();
    let mut s = Spectrum::zeros(grid);
    for (p, &m) in cols.iter().enumerate() {
        s.col_mut(m).copy_from_slice(&buf[p * ny..(p + 1) * ny]);
    }
    s
}

fn compress(cols: &[usize], s: &Spectrum) -> Vec<C64> {
    let mut out = Vec::new();
    for &m in cols {
        out.extend_from_slice(s.col(m));
    }
    out
}

/// Quadratic terms -grad_perp psi . grad Lap psi and grad_perp psi . grad b^z.
fn quadratic_rhs(grid: &Arc<Grid>, cols: &[usize], bz: &[C64], psi: &[C64]) -> Vec<Vec<C64>> {
    use crate::spectral::Axis::{X, Y};
    let g = grid;
    let ps = expand(g, cols, psi);
    let bs = expand(g, cols, bz);
    let lap = ps.laplacian();
    let phys = |s: Spectrum| g.inverse(s.data());
    let (px, py) = (phys(ps.deriv(X, 1)), phys(ps.deriv(Y, 1)));
    let (lx, ly) = (phys(lap.deriv(X, 1)), phys(lap.deriv(Y, 1)));
    let (bx, by) = (phys(bs.deriv(X, 1)), phys(bs.deriv(Y, 1)));
    let n = px.len();
    let mut nb = vec![0.0; n];
    let mut np = vec![0.0; n];
    for i in 0..n {
        // grad_perp psi . grad v = -psi_y v_x + psi_x v_y
        nb[i] = -(-py[i] * lx[i] + px[i] * ly[i]);
        np[i] = -py[i] * bx[i] + px[i] * by[i];
    }
    let to_cols = |v: Vec<f64>| {
        compress(
            cols,
            &Spectrum::from_data(g, g.forward(&v)).expect("layout"),
        )
    };
    vec![to_cols(nb), to_cols(np)]
}

/// 2/3-rule projection of column buffers.
fn project(grid: &Grid, cols: &[usize], fields: &mut [Vec<C64>]) {
    let ny = grid.ny();
    for f in fields.iter_mut() {
        for (p, &m) in cols.iter().enumerate() {
            for j in 0..ny {
                if 3 * m > grid.nx() || 3 * grid.ky_index(j).unsigned_abs() as usize > ny {
                    f[p * ny + j] = ZERO;
                }
            }
        }
    }
}

/// Full right-hand side (including dissipation) of a state.
pub fn rhs(state: &SolverState) -> Result<Vec<Spectrum>, SolverError> {
    let st = Stepper::new(state);
    let r = st.rhs(state);
    if r.iter()
        .any(|f| f.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()))
    {
        return Err(SolverError::BlowUp(state.t));
    }
    Ok(r.iter()
        .map(|b| expand(&state.grid, &state.cols, b))
        .collect())
}

/// One RK4 step; the CFL bound is advisory only.
pub fn step(state: &SolverState, dt: f64) -> Result<SolverState, SolverError> {
    let mut st = Stepper::new(state);
    let mut out = state.clone();
    st.step(&mut out, dt)?;
    Ok(out)
}

/// Energy and its predicted rate of change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergySample {
    pub t: f64,
    pub energy: f64,
    /// Predicted dE/dt from the energy identity (None if unavailable).
    pub predicted_rate: Option<f64>,
}

/// Energy at a state: (1/2)(||b||^2 + ||u||^2) for linear variants, and
/// (1/2) int |f e_x + b|^2 for the nonlinear variant.
///
/// Predicted rates: electron-MHD dE/dt = -<f'' d_x psi, b^z> - D_b; Hall
/// dE/dt = <f'' d_x psi, phi> - <f'' d_x psi, b^z> - D_b - D_u with
/// phi = (-Lap)^{-1} omega, D_b = eta_diss ||(-Lap)^{alpha/2} b||^2 and
/// D_u = nu ||(-Lap)^{(1+beta)/2} u||^2; nonlinear: 0 without dissipation.
pub fn energy_sample(state: &SolverState) -> EnergySample {
    let g = &state.grid;
    let p = &state.params;
    if state.variant.is_nonlinear() {
        let t = if state.mode == BackgroundMode::Evolving {
            state.t
        } else {
            0.0
        };
        let bg = state.background.samples(t, g);
        let psi = state.spectrum(FieldKind::Psi);
        let py = psi.deriv(crate::spectral::Axis::Y, 1).to_field();
        let nx = g.nx();
        let mut cross = 0.0;
        let mut ff = 0.0;
        for j in 0..g.ny() {
            for i in 0..nx {
                cross += bg.f[j] * py.values()[j * nx + i];
            }
            ff += bg.f[j] * bg.f[j] * nx as f64;
        }
        let da = g.dx() * g.dy();
        let energy = 0.5 * (ff * da + 2.0 * cross * da + state.b_norm_sq());
        return EnergySample {
            t: state.t,
            energy,
            predicted_rate: if p.eta_diss == 0.0 { Some(0.0) } else { None },
        };
    }
    let energy = 0.5 * (state.b_norm_sq() + state.u_norm_sq());
    let t = if state.mode == BackgroundMode::Evolving {
        state.t
    } else {
        0.0
    };
    let bg = state.background.samples(t, g);
    let ny = g.ny();
    let mut fpp_psix = Vec::with_capacity(state.cols.len() * ny);
    let psi = state.raw(FieldKind::Psi);
    for (c, &m) in state.cols.iter().enumerate() {
        let kx = g.kx(m);
        let col: Vec<C64> = if g.is_x_nyquist(m) {
            vec![ZERO; ny]
        } else {
            psi[c * ny..(c + 1) * ny]
                .iter()
                .map(|v| v * C64::new(0.0, kx))
                .collect()
        };
        fpp_psix.extend(mul_bg(g, &col, &bg.fpp));
    }
    let mut rate = -state.pair(&fpp_psix, state.raw(FieldKind::Bz), |_, _| 1.0);
    let k2 = |kx: f64, ky: f64| kx * kx + ky * ky;
    if p.eta_diss > 0.0 {
        let a = p.alpha;
        let s = |kx: f64, ky: f64| if a == 0.0 { 1.0 } else { k2(kx, ky).powf(a) };
        let bz = state.raw(FieldKind::Bz);
        rate -= p.eta_diss
            * (state.pair(psi, psi, |kx, ky| k2(kx, ky) * s(kx, ky)) + state.pair(bz, bz, s));
    }
    if state.variant.is_hall() {
        let w = state.raw(FieldKind::Omega);
        let inv = |kx: f64, ky: f64| {
            let q = k2(kx, ky);
            if q == 0.0 {
                0.0
            } else {
                1.0 / q
            }
        };
        rate += state.pair(&fpp_psix, w, inv);
        if p.nu > 0.0 {
            let e = 1.0 + p.beta;
            let uz = state.raw(FieldKind::Uz);
            rate -= p.nu
                * (state.pair(uz, uz, |kx, ky| k2(kx, ky).powf(e))
                    + state.pair(w, w, |kx, ky| k2(kx, ky).powf(e) * inv(kx, ky)));
        }
    }
    EnergySample {
        t: state.t,
        energy,
        predicted_rate: Some(rate),
    }
}

/// Energy report between two consecutive states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub energy: f64,
    /// (E1 - E0) / dt.
    pub measured: f64,
    /// Trapezoidal average of the predicted rates.
    pub predicted: Option<f64>,
    pub gap: Option<f64>,
}

/// Compares measured and predicted energy change between two states.
pub fn energy_report(prev: &SolverState, cur: &SolverState) -> EnergyReport {
    let (a, b) = (energy_sample(prev), energy_sample(cur));
    energy_report_from(&a, &b)
}

fn energy_report_from(a: &EnergySample, b: &EnergySample) -> EnergyReport {
    let dt = b.t - a.t;
    let measured = if dt > 0.0 {
        (b.energy - a.energy) / dt
    } else {
        0.0
    };
    let predicted = match (a.predicted_rate, b.predicted_rate) {
        (Some(x), Some(y)) => Some(0.5 * (x + y)),
        _ => None,
    };
    EnergyReport {
        energy: b.energy,
        measured,
        predicted,
        gap: predicted.map(|p| measured - p),
    }
}

/// A wave packet sampled on the solver grid.
pub struct PacketProbe<'a> {
    grid: Arc<Grid>,
    sampler: PacketSampler<'a>,
    m: usize,
    frozen: BackgroundSamples,
}

/// Packet columns at one time.
#[derive(Debug, Clone)]
struct ProbeCols {
    bz: Vec<C64>,
    psi: Vec<C64>,
}

/// Pairings of a packet with a solver state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestingFunctional {
    pub t: f64,
    /// <b~, b> = <grad psi~, grad psi> + <b~z, b^z>.
    pub tf_b: f64,
    /// <u~, u> for Hall (u~z = -psi~, omega~ = -b~z).
    pub tf_u: Option<f64>,
    /// nu <grad u~, grad u>.
    pub nu_grad: Option<f64>,
    /// Right-hand side of the bilinear identity for d/dt (<b~,b> + <u~,u>),
    /// when the packet is resolved well enough to evaluate its error terms.
    pub identity_rhs: Option<f64>,
}

/// Line profile to a grid column: (1/2) FFT(A)/ny with the y-Nyquist mode removed.
fn profile_to_col(grid: &Grid, a: &[C64]) -> Vec<C64> {
    let mut c = a.to_vec();
    grid.fft_y(&mut c);
    let s = 0.5 / grid.ny() as f64;
    c.iter_mut().for_each(|v| *v *= s);
    c[grid.ny() / 2] = ZERO;
    c
}

impl<'a> PacketProbe<'a> {
    /// Binds a packet sampler on the grid's y-line to the solver grid.
    pub fn new(
        packet: &'a WavePacket,
        line: &'a crate::spectral::Line,
        grid: &Arc<Grid>,
    ) -> Result<PacketProbe<'a>, SolverError> {
        let m = packet.grid_column(grid)?;
        if line.n() != grid.ny() || line.start() != 0.0 || (line.length() - grid.ly()).abs() > 1e-12
        {
            return Err(SolverError::GridMismatch);
        }
        let bg = Background::Profile(packet.profile().clone());
        Ok(PacketProbe {
            grid: grid.clone(),
            sampler: packet.sampler(line),
            m,
            frozen: bg.samples(0.0, grid),
        })
    }

    /// Packet spectra (b~z, psi~) at time t.
    pub fn spectra(&self, t: f64) -> Result<(Spectrum, Spectrum), SolverError> {
        let c = self.cols(t)?;
        let mut bz = Spectrum::zeros(&self.grid);
        let mut psi = Spectrum::zeros(&self.grid);
        bz.col_mut(self.m).copy_from_slice(&c.bz);
        psi.col_mut(self.m).copy_from_slice(&c.psi);
        Ok((bz, psi))
    }

    /// Initial data for a solver variant: (b~z, psi~) or (0, 0, b~z, psi~).
    pub fn initial_fields(&self, variant: Variant) -> Result<Vec<Spectrum>, SolverError> {
        let (bz, psi) = self.spectra(0.0)?;
        Ok(if variant.is_hall() {
            vec![
                Spectrum::zeros(&self.grid),
                Spectrum::zeros(&self.grid),
                bz,
                psi,
            ]
        } else {
            vec![bz, psi]
        })
    }

    fn cols(&self, t: f64) -> Result<ProbeCols, SolverError> {
        let prof = self.sampler.evaluate(t)?;
        Ok(ProbeCols {
            bz: profile_to_col(&self.grid, &prof.bz),
            psi: profile_to_col(&self.grid, &prof.psi),
        })
    }

    /// Column-mode pairing sum_j w(ky) Re(a conj b) * area * col_weight.
    fn pair(&self, a: &[C64], b: &[C64], w: impl Fn(f64) -> f64) -> f64 {
        let g = &self.grid;
        let kx = g.kx(self.m);
        let s: f64 = (0..g.ny())
            .map(|j| w(g.ky(j)) * (a[j].re * b[j].re + a[j].im * b[j].im))
            .sum();
        let _ = kx;
        s * g.col_weight(self.m) * g.lx() * g.ly()
    }

    /// Testing functional and identity right-hand side at the state's time.
    pub fn testing_functional(
        &self,
        state: &SolverState,
    ) -> Result<TestingFunctional, SolverError> {
        if !state.grid.same_as(&self.grid) {
            return Err(SolverError::GridMismatch);
        }
        let t = state.t;
        let g = &self.grid;
        let m = self.m;
        let kx = g.kx(m);
        let k2 = |ky: f64| kx * kx + ky * ky;
        let pc = self.cols(t)?;
        let bz = state.column(FieldKind::Bz, m);
        let psi = state.column(FieldKind::Psi, m);
        let tf_b = self.pair(&pc.psi, &psi, k2) + self.pair(&pc.bz, &bz, |_| 1.0);
        let hall = state.variant.is_hall();
        let (mut tf_u, mut nu_grad) = (None, None);
        let (uz, w) = if hall {
            (
                state.column(FieldKind::Uz, m),
                state.column(FieldKind::Omega, m),
            )
        } else {
            (vec![ZERO; g.ny()], vec![ZERO; g.ny()])
        };
        if hall {
            // u~z = -psi~, phi~ = (-Lap)^{-1} omega~ = -b~z / k^2
            let tuz: Vec<C64> = pc.psi.iter().map(|c| -c).collect();
            let tw: Vec<C64> = pc.bz.iter().map(|c| -c).collect();
            tf_u = Some(self.pair(&tuz, &uz, |_| 1.0) + self.pair(&tw, &w, |ky| 1.0 / k2(ky)));
            nu_grad =
                Some(state.params.nu * (self.pair(&tuz, &uz, k2) + self.pair(&tw, &w, |_| 1.0)));
        }
        // the identity's solution-error pairing is column-local, which the
        // quadratic terms are not
        let identity_rhs = if state.variant.is_nonlinear() {
            None
        } else {
            self.identity_rhs(state, &pc, &bz, &psi, &uz, &w).ok()
        };
        Ok(TestingFunctional {
            t,
            tf_b,
            tf_u,
            nu_grad,
            identity_rhs,
        })
    }

    /// Right-hand side of the bilinear identity with nu = 0:
    /// cross f0'' terms, packet error pairings and the pairings of the
    /// solution's own errors R - L0 (dissipation, background evolution).
    fn identity_rhs(
        &self,
        state: &SolverState,
        pc: &ProbeCols,
        bz: &[C64],
        psi: &[C64],
        uz: &[C64],
        w: &[C64],
    ) -> Result<f64, SolverError> {
        let g = &self.grid;
        let t = state.t;
        let m = self.m;
        let kx = g.kx(m);
        let ik = C64::new(0.0, kx);
        let k2 = |ky: f64| kx * kx + ky * ky;
        let hall = state.variant.is_hall();
        let dt_fd = self.sampler.default_dt_fd();
        let one = |_: f64| 1.0;
        let dx = |c: &[C64]| c.iter().map(|v| v * ik).collect::<Vec<_>>();
        let f0pp = &self.frozen.fpp;
        let fpp_px_t = mul_bg(g, &dx(&pc.psi), f0pp);
        let fpp_px = mul_bg(g, &dx(psi), f0pp);
        let mut rhs = -self.pair(&fpp_px_t, bz, one) - self.pair(&pc.bz, &fpp_px, one);
        // packet errors
        let (e_tb, e_tpsi, e_tu, e_tw) = if hall {
            let h = self.sampler.hall_residuals(t, 0.0, dt_fd)?;
            (
                profile_to_col(g, &h.errh_b_profile),
                profile_to_col(g, &h.errh_psi),
                Some(profile_to_col(g, &h.errh_u)),
                Some(profile_to_col(g, &h.errh_omega)),
            )
        } else {
            let r = self.sampler.residual(t, dt_fd)?;
            (
                profile_to_col(g, &r.err_b),
                profile_to_col(g, &r.err_psi),
                None,
                None,
            )
        };
        // solution errors: actual right-hand side minus the frozen conservative one
        let single = SolverState {
            cols: vec![m],
            fields: (0..state.variant.n_fields())
                .map(|i| {
                    let kind = match (hall, i) {
                        (true, 0) => FieldKind::Uz,
                        (true, 1) => FieldKind::Omega,
                        (_, i) if i + 2 == state.variant.n_fields() => FieldKind::Bz,
                        _ => FieldKind::Psi,
                    };
                    state.column(kind, m)
                })
                .collect(),
            ..state.clone()
        };
        let stepper = Stepper::new(&single);
        let actual = stepper.rhs(&single);
        let l0 = linear_rhs(g, &[m], hall, &single.fields, &self.frozen);
        let err: Vec<Vec<C64>> = actual
            .iter()
            .zip(&l0)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let (ib, ip) = if hall { (2, 3) } else { (0, 1) };
        rhs += self.pair(&e_tpsi, psi, k2) + self.pair(&pc.psi, &err[ip], k2);
        rhs += self.pair(&e_tb, bz, one) + self.pair(&pc.bz, &err[ib], one);
        if hall {
            let tuz: Vec<C64> = pc.psi.iter().map(|c| -c).collect();
            let tphi: Vec<C64> = pc
                .bz
                .iter()
                .enumerate()
                .map(|(j, c)| -c / k2(g.ky(j)))
                .collect();
            let phi: Vec<C64> = w.iter().enumerate().map(|(j, c)| c / k2(g.ky(j))).collect();
            let inv = |ky: f64| 1.0 / k2(ky);
            rhs += self.pair(&fpp_px_t, &phi, one) + self.pair(&fpp_px, &tphi, one);
            let (e_tu, e_tw) = (e_tu.expect("hall"), e_tw.expect("hall"));
            rhs += self.pair(&e_tw, w, inv) + self.pair(&tphi, &err[1], one);
            rhs += self.pair(&e_tu, uz, one) + self.pair(&tuz, &err[0], one);
        }
        Ok(rhs)
    }
}

/// One diagnostics row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub b_l2: f64,
    pub u_l2: Option<f64>,
    /// ||b||_{H^s} for the configured s-list.
    pub hs: Vec<f64>,
    /// ||b||_{L^p} for the configured p-list.
    pub lp: Vec<f64>,
    pub energy: f64,
    /// Measured minus predicted dE/dt over the last step.
    pub energy_gap: Option<f64>,
    pub tf_b: Option<f64>,
    pub tf_u: Option<f64>,
    pub nu_grad: Option<f64>,
    /// Measured minus predicted d/dt (<b~,b> + <u~,u>) over the last step.
    pub tf_gap: Option<f64>,
}

/// Time step selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeStep {
    /// cfl_dt, re-evaluated every 32 steps.
    Auto,
    /// explicit_dt (dissipative terms excluded), re-evaluated every 32 steps.
    AutoExplicit,
    /// Fixed step; exceeding cfl_dt with safety 1 is counted as a warning.
    Fixed(f64),
}

/// Run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub t_end: f64,
    pub dt: TimeStep,
    pub safety: f64,
    /// Record every `every` steps (and at the final time).
    pub every: usize,
    pub s_list: Vec<f64>,
    pub p_list: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            t_end: 1.0,
            dt: TimeStep::Auto,
            safety: 0.5,
            every: 50,
            s_list: vec![1.0],
            p_list: vec![],
        }
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StopReason {
    Completed,
    UnderResolved { t: f64 },
    BlowUp { t: f64 },
}

/// Records and final state of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: SolverState,
    pub stop: StopReason,
    pub steps: usize,
    pub cfl_warnings: usize,
}

struct Probe {
    energy: EnergySample,
    tf: Option<TestingFunctional>,
}

fn probe(state: &SolverState, packet: Option<&PacketProbe<'_>>) -> Result<Probe, SolverError> {
    Ok(Probe {
        energy: energy_sample(state),
        tf: match packet {
            Some(p) => Some(p.testing_functional(state)?),
            None => None,
        },
    })
}

fn tf_total(tf: &TestingFunctional) -> f64 {
    tf.tf_b + tf.tf_u.unwrap_or(0.0)
}

/// Runs to t_end recording diagnostics; stops early (keeping the partial
/// records) on blow-up or when the packet leaves the resolved range.
pub fn run(
    initial: SolverState,
    cfg: &RunConfig,
    packet: Option<&PacketProbe<'_>>,
) -> Result<RunOutput, SolverError> {
    if !(cfg.t_end >= 0.0) || cfg.every == 0 {
        return Err(SolverError::Invalid(
            "need t_end >= 0 and every >= 1".into(),
        ));
    }
    let mut state = initial;
    let mut stepper = Stepper::new(&state);
    let mut records = Vec::new();
    let mut steps = 0usize;
    let mut cfl_warnings = 0usize;
    let mut h_cur: Option<f64> = None;
    let mut prev: Option<Probe> = None;
    let record = |state: &SolverState, cur: &Probe, prev: &Option<Probe>| -> DiagnosticsRecord {
        let e = &cur.energy;
        let energy_gap = prev
            .as_ref()
            .and_then(|p| energy_report_from(&p.energy, e).gap);
        let tf_gap = match (prev.as_ref().and_then(|p| p.tf.as_ref()), cur.tf.as_ref()) {
            (Some(a), Some(b)) => match (a.identity_rhs, b.identity_rhs) {
                (Some(ra), Some(rb)) if b.t > a.t => {
                    Some((tf_total(b) - tf_total(a)) / (b.t - a.t) - 0.5 * (ra + rb))
                }
                _ => None,
            },
            _ => None,
        };
        DiagnosticsRecord {
            t: state.t,
            b_l2: state.b_norm_sq().sqrt(),
            u_l2: state.variant.is_hall().then(|| state.u_norm_sq().sqrt()),
            hs: cfg.s_list.iter().map(|&s| state.b_hs(s)).collect(),
            lp: cfg.p_list.iter().map(|&p| state.b_lp(p)).collect(),
            energy: e.energy,
            energy_gap,
            tf_b: cur.tf.map(|t| t.tf_b),
            tf_u: cur.tf.and_then(|t| t.tf_u),
            nu_grad: cur.tf.and_then(|t| t.nu_grad),
            tf_gap,
        }
    };
    let stop = loop {
        let at_end = state.t >= cfg.t_end * (1.0 - 1e-14);
        if steps % cfg.every == 0 || at_end {
            match probe(&state, packet) {
                Ok(cur) => {
                    records.push(record(&state, &cur, &prev));
                }
                Err(SolverError::Packet(PacketError::UnderResolved { t, .. }))
                | Err(SolverError::Packet(PacketError::Horizon(t))) => {
                    break StopReason::UnderResolved { t };
                }
                Err(e) => return Err(e),
            }
        }
        if at_end {
            break StopReason::Completed;
        }
        if h_cur.is_none() || (steps > 0 && steps % 32 == 0) {
            let dt = match cfg.dt {
                TimeStep::Auto => cfl_dt(&state, cfg.safety),
                TimeStep::AutoExplicit => explicit_dt(&state, cfg.safety),
                TimeStep::Fixed(dt) => {
                    if dt > cfl_dt(&state, 1.0) {
                        cfl_warnings += 1;
                    }
                    dt
                }
            };
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(SolverError::Invalid(format!(
                    "time step {dt} is not usable; give an explicit dt"
                )));
            }
            let remaining = cfg.t_end - state.t;
            h_cur = Some(remaining / (remaining / dt).ceil());
        }
        let h = h_cur.expect("set above").min(cfg.t_end - state.t);
        let next_records = (steps + 1) % cfg.every == 0 || state.t + h >= cfg.t_end * (1.0 - 1e-14);
        prev = if next_records {
            match probe(&state, packet) {
                Ok(p) => Some(p),
                Err(SolverError::Packet(_)) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        match stepper.step(&mut state, h) {
            Ok(()) => {}
            Err(SolverError::BlowUp(t)) => break StopReason::BlowUp { t },
            Err(e) => return Err(e),
        }
        steps += 1;
    };
    Ok(RunOutput {
        records,
        final_state: state,
        stop,
        steps,
        cfl_warnings,
    })
}

/// Writes diagnostics as CSV with a versioned header.
pub fn write_diagnostics_csv<W: std::io::Write>(
    records: &[DiagnosticsRecord],
    s_list: &[f64],
    p_list: &[f64],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "# degenwave diagnostics v1")?;
    let mut head = vec!["t".to_string(), "b_l2".into(), "u_l2".into()];
    head.extend(s_list.iter().map(|s| format!("b_h{s}")));
    head.extend(p_list.iter().map(|p| {
        format!(
            "b_l{}",
            if p.is_infinite() {
                "inf".into()
            } else {
                p.to_string()
            }
        )
    }));
    head.extend(["energy", "energy_gap", "tf_b", "tf_u", "nu_grad", "tf_gap"].map(String::from));
    writeln!(w, "{}", head.join(","))?;
    let o = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for r in records {
        let mut row = vec![format!("{:?}", r.t), format!("{:?}", r.b_l2), o(r.u_l2)];
        row.extend(r.hs.iter().map(|v| format!("{v:?}")));
        row.extend(r.lp.iter().map(|v| format!("{v:?}")));
        row.extend([
            format!("{:?}", r.energy),
            o(r.energy_gap),
            o(r.tf_b),
            o(r.tf_u),
            o(r.nu_grad),
            o(r.tf_gap),
        ]);
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
