//! Stationary planar magnetic backgrounds with an extra symmetry.
//!
//! Two families are supported: translational fields B = f(y) d_x and
//! axisymmetric fields B = f(r) d_theta (coordinate basis, so the Cartesian
//! components are f(r) (-y, x)). In both cases f vanishes simply at y0 (or r0)
//! with c0 = f'(y0) > 0, and the working window (y0, y1] satisfies
//! f' > c0/2 and 0 < f < 1/2.
//!
//! The renormalizing coordinate is eta with d eta/dy = 1/f and eta(y1) = 0, so
//! the degeneracy sits at eta = -infinity. The eikonal phase is
//!
//! ```text
//! G(eta) = eta + int_{-inf}^{eta} (sqrt(1 - F^2) - 1),
//! ```
//!
//! with F = f for translational profiles and F = f/r for axisymmetric ones
//! (the angular Laplacian carries r^{-2}). The travel time
//! s(eta) = int_0^eta d eta'/sqrt(1 - F^2) linearizes the characteristics of
//! the packet transport: a point moves as s -> s - tau.
//!
//! Tables are uniform in eta on [eta_min, 0] and interpolated by cubic Hermite
//! polynomials using the exact derivatives, so the chain-rule identities hold
//! at the nodes to rounding.

use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::Grid;

/// Errors raised while building or querying a background.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackgroundError {
    #[error("profile has no simple zero below y1 = {0}")]
    NoDegeneracy(f64),
    #[error("no window (y0, y1] satisfies 0 < f < 1/2 and f' > c0/2 (y0 = {y0})")]
    WindowEmpty { y0: f64 },
    #[error("{what} = {value} lies outside [{lo}, {hi}]")]
    OutOfWindow {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("profile is not periodic; operation needs a trigonometric profile")]
    NotPeriodic,
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("table parse error at line {line}: {reason}")]
    Table { line: usize, reason: String },
}

/// Symmetry class of the background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Translational,
    Axisymmetric,
}

/// Trigonometric series a0 + sum_k (a_k cos ky + b_k sin ky), k = 1, 2, ...
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigSeries {
    pub a0: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl TrigSeries {
    pub fn constant(c: f64) -> TrigSeries {
        TrigSeries {
            a0: c,
            cos: vec![],
            sin: vec![],
        }
    }

    pub fn sin() -> TrigSeries {
        TrigSeries {
            a0: 0.0,
            cos: vec![0.0],
            sin: vec![1.0],
        }
    }

    /// Band-limited interpolant of uniform samples of one 2 pi period.
    pub fn from_samples(samples: &[f64]) -> Result<TrigSeries, BackgroundError> {
        let n = samples.len();
        if n < 4 {
            return Err(BackgroundError::Invalid(
                "table needs at least 4 samples".into(),
            ));
        }
        let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let scale = 1.0 / n as f64;
        let kmax = (n - 1) / 2;
        let mut cos = Vec::with_capacity(kmax);
        let mut sin = Vec::with_capacity(kmax);
        for c in buf.iter().take(kmax + 1).skip(1) {
            cos.push(2.0 * c.re * scale);
            sin.push(-2.0 * c.im * scale);
        }
        Ok(TrigSeries {
            a0: buf[0].re * scale,
            cos,
            sin,
        })
    }

    fn modes(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    /// (f, f', f'', f''') at y.
    pub fn eval(&self, y: f64) -> [f64; 4] {
        let mut out = [self.a0, 0.0, 0.0, 0.0];
        // sin(ky), cos(ky) by angle addition, re-seeded every 64 modes
        let (s1, c1) = y.sin_cos();
        let (mut s, mut c) = (0.0, 1.0);
        for k in 1..=self.modes() {
            if k % 64 == 0 {
                (s, c) = (k as f64 * y).sin_cos();
            } else {
                (s, c) = (s * c1 + c * s1, c * c1 - s * s1);
            }
            let a = self.cos.get(k - 1).copied().unwrap_or(0.0);
            let b = self.sin.get(k - 1).copied().unwrap_or(0.0);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let kf = k as f64;
            let v = a * c + b * s;
            let d = kf * (-a * s + b * c);
            out[0] += v;
            out[1] += d;
            out[2] -= kf * kf * v;
            out[3] -= kf * kf * d;
        }
        out
    }

    /// Applies the multiplier m(k) to every mode (k = 0 for the mean).
    pub fn map_modes<F: Fn(f64) -> f64>(&self, m: F) -> TrigSeries {
        TrigSeries {
            a0: self.a0 * m(0.0),
            cos: self
                .cos
                .iter()
                .enumerate()
                .map(|(i, a)| a * m((i + 1) as f64))
                .collect(),
            sin: self
                .sin
                .iter()
                .enumerate()
                .map(|(i, b)| b * m((i + 1) as f64))
                .collect(),
        }
    }

    /// (-d^2/dy^2)^a; the mean is killed for a > 0 and kept for a = 0.
    pub fn frac_laplacian(&self, a: f64) -> TrigSeries {
        if a == 0.0 {
            return self.clone();
        }
        self.map_modes(|k| if k == 0.0 { 0.0 } else { k.powf(2.0 * a) })
    }

    /// A periodic antiderivative, available when the mean vanishes.
    pub fn antiderivative(&self) -> Option<TrigSeries> {
        if self.a0 != 0.0 {
            return None;
        }
        let n = self.modes();
        let mut cos = vec![0.0; n];
        let mut sin = vec![0.0; n];
        for k in 1..=n {
            let a = self.cos.get(k - 1).copied().unwrap_or(0.0);
            let b = self.sin.get(k - 1).copied().unwrap_or(0.0);
            let kf = k as f64;
            // int (a cos ky + b sin ky) = (a sin ky - b cos ky)/k
            sin[k - 1] = a / kf;
            cos[k - 1] = -b / kf;
        }
        Some(TrigSeries { a0: 0.0, cos, sin })
    }
}

/// Description of the profile function f.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FSpec {
    /// f(y) = sin y.
    Sin,
    /// f(y) = slope * y + offset (not periodic; rays and packets only).
    Linear { slope: f64, offset: f64 },
    /// General trigonometric series.
    Trig(TrigSeries),
    /// Uniform samples of one 2 pi period, interpolated trigonometrically.
    Table { samples: Vec<f64> },
    /// f(r) = (r^2 - r0^2)/(2 r0) * C(r) with a smooth cutoff C = 1 on r <= 1.8 r0
    /// and C = 0 on r >= 2.8 r0.
    AxiRing { r0: f64 },
}

impl FSpec {
    /// Odd fractional-admissible profile f0 = (-Laplacian)^{-alpha} g with g an
    /// odd pair of smooth bumps supported in 1.1 <= |y| <= 2.9, scaled so
    /// that f0'(0) = c0.
    pub fn admissible(alpha: f64, c0: f64) -> Result<FSpec, BackgroundError> {
        let n = 4096;
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let bump = |y: f64| {
            let s = y / 0.9;
            if s.abs() < 1.0 {
                (-1.0 / (1.0 - s * s)).exp()
            } else {
                0.0
            }
        };
        let samples: Vec<f64> = (0..n)
            .map(|j| {
                let mut y = j as f64 * h;
                if y >= std::f64::consts::PI {
                    y -= 2.0 * std::f64::consts::PI;
                }
                bump(y + 2.0) - bump(y - 2.0)
            })
            .collect();
        let g = TrigSeries::from_samples(&samples)?;
        let peak = g.sin.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        let keep = g
            .sin
            .iter()
            .rposition(|b| b.abs() > 1e-15 * peak)
            .map_or(0, |i| i + 1);
        let sin: Vec<f64> = g.sin[..keep]
            .iter()
            .enumerate()
            .map(|(i, b)| b * ((i + 1) as f64).powf(-2.0 * alpha))
            .collect();
        let slope: f64 = sin
            .iter()
            .enumerate()
            .map(|(i, b)| b * (i + 1) as f64)
            .sum();
        if slope == 0.0 {
            return Err(BackgroundError::Invalid(
                "admissible profile has zero slope".into(),
            ));
        }
        let scale = c0 / slope;
        Ok(FSpec::Trig(TrigSeries {
            a0: 0.0,
            cos: vec![0.0; sin.len()],
            sin: sin.iter().map(|b| b * scale).collect(),
        }))
    }

    /// Trigonometric form, when periodic.
    pub fn trig(&self) -> Option<TrigSeries> {
        match self {
            FSpec::Sin => Some(TrigSeries::sin()),
            FSpec::Trig(t) => Some(t.clone()),
            FSpec::Table { samples } => TrigSeries::from_samples(samples).ok(),
            FSpec::Linear { .. } | FSpec::AxiRing { .. } => None,
        }
    }

    fn sampler(&self) -> Result<Sampler, BackgroundError> {
        Ok(match self {
            FSpec::Linear { slope, offset } => Sampler::Linear(*slope, *offset),
            FSpec::AxiRing { r0 } => {
                if !(*r0 > 0.0) {
                    return Err(BackgroundError::Invalid(format!(
                        "r0 = {r0} must be positive"
                    )));
                }
                Sampler::AxiRing(*r0)
            }
            other => Sampler::Trig(other.trig().ok_or_else(|| {
                BackgroundError::Invalid("table samples could not be interpolated".into())
            })?),
        })
    }
}

#[derive(Debug, Clone)]
enum Sampler {
    Trig(TrigSeries),
    Linear(f64, f64),
    AxiRing(f64),
}

impl Sampler {
    fn eval(&self, y: f64) -> [f64; 3] {
        match self {
            Sampler::Trig(t) => {
                let v = t.eval(y);
                [v[0], v[1], v[2]]
            }
            Sampler::Linear(a, b) => [a * y + b, *a, 0.0],
            Sampler::AxiRing(r0) => {
                let r = Jet::var(y);
                let q = (r * r - Jet::cst(r0 * r0)) * (0.5 / r0);
                let f = q * cutoff(r * (1.0 / r0));
                [f.v, f.d, f.dd]
            }
        }
    }
}

/// Second-order forward-mode jet (value, first and second derivative).
#[derive(Debug, Clone, Copy)]
struct Jet {
    v: f64,
    d: f64,
    dd: f64,
}

impl Jet {
    fn var(x: f64) -> Jet {
        Jet {
            v: x,
            d: 1.0,
            dd: 0.0,
        }
    }
    fn cst(c: f64) -> Jet {
        Jet {
            v: c,
            d: 0.0,
            dd: 0.0,
        }
    }
    fn exp(self) -> Jet {
        let e = self.v.exp();
        Jet {
            v: e,
            d: e * self.d,
            dd: e * (self.dd + self.d * self.d),
        }
    }
    fn recip(self) -> Jet {
        let inv = 1.0 / self.v;
        Jet {
            v: inv,
            d: -self.d * inv * inv,
            dd: (2.0 * self.d * self.d * inv - self.dd) * inv * inv,
        }
    }
}

impl std::ops::Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet {
            v: self.v + o.v,
            d: self.d + o.d,
            dd: self.dd + o.dd,
        }
    }
}

impl std::ops::Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet {
            v: self.v - o.v,
            d: self.d - o.d,
            dd: self.dd - o.dd,
        }
    }
}

impl std::ops::Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
            dd: self.dd * o.v + 2.0 * self.d * o.d + self.v * o.dd,
        }
    }
}

impl std::ops::Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, a: f64) -> Jet {
        Jet {
            v: self.v * a,
            d: self.d * a,
            dd: self.dd * a,
        }
    }
}

/// exp(-1/x) for x > 0, else 0.
fn smooth_zero(x: Jet) -> Jet {
    if x.v <= 0.0 {
        Jet::cst(0.0)
    } else {
        (x.recip() * -1.0).exp()
    }
}

/// C^infinity cutoff equal to 1 for x <= 1.8 and 0 for x >= 2.8.
fn cutoff(x: Jet) -> Jet {
    let u = (x - Jet::cst(1.8)) * (1.0 / 1.0);
    let a = smooth_zero(u);
    let b = smooth_zero(Jet::cst(1.0) - u);
    let step = if a.v == 0.0 {
        Jet::cst(0.0)
    } else {
        a * (a + b).recip()
    };
    Jet::cst(1.0) - step
}

/// Uniform-in-eta tables with Hermite interpolation.
#[derive(Debug, Clone)]
struct EtaTables {
    eta_min: f64,
    h: f64,
    y: Vec<f64>,
    g: Vec<f64>,
    s: Vec<f64>,
    // derivatives at nodes
    dy: Vec<f64>,
    dg: Vec<f64>,
    ds: Vec<f64>,
}

/// Target eta spacing of the tables.
pub const ETA_SPACING: f64 = 1e-3;

/// A stationary background with its eta-map, phase and travel-time tables.
#[derive(Debug, Clone)]
pub struct BackgroundProfile {
    kind: ProfileKind,
    spec: FSpec,
    sampler: Sampler,
    y0: f64,
    y1: f64,
    c0: f64,
    tables: Arc<EtaTables>,
}

/// Builds a profile, shrinking y1 so that the window conditions hold.
///
/// The degeneracy y0 is the closest simple upward zero of f below
/// `y1_request` (searched over one period for translational profiles and over
/// r > 0 for axisymmetric ones).
pub fn make_profile(
    kind: ProfileKind,
    spec: FSpec,
    y1_request: f64,
) -> Result<BackgroundProfile, BackgroundError> {
    let sampler = spec.sampler()?;
    let lo = match kind {
        ProfileKind::Translational => y1_request - 2.0 * std::f64::consts::PI,
        ProfileKind::Axisymmetric => 1e-9,
    };
    let y0 = locate_zero(&sampler, lo, y1_request)?;
    let c0 = sampler.eval(y0)[1];
    let scale = (0..64)
        .map(|i| sampler.eval(lo + (y1_request - lo) * i as f64 / 63.0)[1].abs())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    if !(c0 > 1e-8 * scale) {
        return Err(BackgroundError::NoDegeneracy(y1_request));
    }
    let y1 = window_end(&sampler, kind, y0, c0, y1_request);
    if !(y1 > y0 + 1e-9 * (1.0 + y0.abs())) {
        return Err(BackgroundError::WindowEmpty { y0 });
    }
    BackgroundProfile::build(kind, spec, sampler, y0, y1, c0, None)
}

fn locate_zero(s: &Sampler, lo: f64, hi: f64) -> Result<f64, BackgroundError> {
    let n = 8192;
    let f = |y: f64| s.eval(y)[0];
    let mut b = hi;
    let mut fb = f(b);
    for i in 1..=n {
        let a = hi - (hi - lo) * i as f64 / n as f64;
        let fa = f(a);
        if fa <= 0.0 && fb > 0.0 {
            // bisection on [a, b]
            let (mut l, mut r) = (a, b);
            for _ in 0..200 {
                let m = 0.5 * (l + r);
                if f(m) <= 0.0 {
                    l = m;
                } else {
                    r = m;
                }
                if r - l <= 4.0 * f64::EPSILON * (1.0 + m.abs()) {
                    break;
                }
            }
            return Ok(if f(l) == 0.0 { l } else { 0.5 * (l + r) });
        }
        b = a;
        fb = fa;
    }
    Err(BackgroundError::NoDegeneracy(hi))
}

/// First point above y0 where 0 < F... window conditions fail, capped at the request.
fn window_end(s: &Sampler, kind: ProfileKind, y0: f64, c0: f64, y1_request: f64) -> f64 {
    let ok = |y: f64| {
        let v = s.eval(y);
        let f_ok = v[0] > 0.0 && v[0] <= 0.5;
        let d_ok = v[1] > 0.5 * c0;
        let r_ok = kind == ProfileKind::Translational || y > 0.0;
        f_ok && d_ok && r_ok
    };
    let n = 8192;
    let step = (y1_request - y0) / n as f64;
    let mut prev = y0;
    for i in 1..=n {
        let y = y0 + step * i as f64;
        if !ok(y) {
            if i == 1 {
                return y0;
            }
            let (mut l, mut r) = (prev, y);
            for _ in 0..200 {
                let m = 0.5 * (l + r);
                if ok(m) {
                    l = m;
                } else {
                    r = m;
                }
                if r - l <= 4.0 * f64::EPSILON * (1.0 + m.abs()) {
                    break;
                }
            }
            return l;
        }
        prev = y;
    }
    y1_request
}

impl BackgroundProfile {
    /// Builds a profile on a caller-chosen window without enforcing the window
    /// conditions (f must still be positive on (y0, y1]). `eta_min` overrides
    /// the default truncation depth; it is required when f does not vanish at y0.
    pub fn from_window(
        kind: ProfileKind,
        spec: FSpec,
        y0: f64,
        y1: f64,
        eta_min: Option<f64>,
    ) -> Result<BackgroundProfile, BackgroundError> {
        let sampler = spec.sampler()?;
        if !(y1 > y0) {
            return Err(BackgroundError::WindowEmpty { y0 });
        }
        let c0 = sampler.eval(y0)[1];
        BackgroundProfile::build(kind, spec, sampler, y0, y1, c0, eta_min)
    }

    fn build(
        kind: ProfileKind,
        spec: FSpec,
        sampler: Sampler,
        y0: f64,
        y1: f64,
        c0: f64,
        eta_min: Option<f64>,
    ) -> Result<BackgroundProfile, BackgroundError> {
        let f1 = sampler.eval(y1)[0];
        if !(f1 > 0.0) {
            return Err(BackgroundError::Invalid(format!(
                "f(y1) = {f1} must be positive"
            )));
        }
        let mut p = BackgroundProfile {
            kind,
            spec,
            sampler,
            y0,
            y1,
            c0,
            tables: Arc::new(EtaTables {
                eta_min: 0.0,
                h: ETA_SPACING,
                y: vec![],
                g: vec![],
                s: vec![],
                dy: vec![],
                dg: vec![],
                ds: vec![],
            }),
        };
        p.tables = Arc::new(p.build_tables(eta_min)?);
        Ok(p)
    }

    fn build_tables(&self, eta_min: Option<f64>) -> Result<EtaTables, BackgroundError> {
        let h = ETA_SPACING;
        let f1 = self.f(self.y1);
        let cap = if self.c0 > 0.0 {
            -40.0 / self.c0
        } else {
            -40.0
        };
        let floor = eta_min.unwrap_or(cap);
        // integrate dy/d eta = f downward from y1, recording nodes and midpoints
        let sub = 4;
        let hs = h / sub as f64;
        let mut ys = vec![self.y1];
        let mut mids = Vec::new();
        let mut y = self.y1;
        loop {
            let eta = -(ys.len() as f64 - 1.0) * h;
            let stop = match eta_min {
                Some(e) => eta <= e + 0.5 * h,
                None => self.f(y) <= 1e-6 * f1 || eta <= floor + 0.5 * h,
            };
            if stop {
                break;
            }
            for k in 0..sub {
                let fy = |y: f64| self.f(y);
                let k1 = fy(y);
                let k2 = fy(y - 0.5 * hs * k1);
                let k3 = fy(y - 0.5 * hs * k2);
                let k4 = fy(y - hs * k3);
                y -= hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                if k == sub / 2 - 1 {
                    mids.push(y);
                }
            }
            if !y.is_finite() {
                return Err(BackgroundError::Invalid("eta integration diverged".into()));
            }
            ys.push(y);
        }
        if ys.len() < 3 {
            return Err(BackgroundError::Invalid("eta table too short".into()));
        }
        ys.reverse();
        mids.reverse();
        let n = ys.len();
        let eta_min = -((n - 1) as f64) * h;
        let gp = |y: f64| {
            let big_f = self.eikonal(y).0;
            (1.0 - big_f * big_f).max(0.0).sqrt()
        };
        // W = int (sqrt(1-F^2) - 1) upward from the tail asymptote
        let f_min = self.eikonal(ys[0]).0;
        let tail = if self.c0 > 0.0 {
            -f_min * f_min / (4.0 * self.c0)
        } else {
            0.0
        };
        let mut g = vec![0.0; n];
        let mut w = tail;
        g[0] = eta_min + w;
        for i in 1..n {
            let a = gp(ys[i - 1]) - 1.0;
            let m = gp(mids[i - 1]) - 1.0;
            let b = gp(ys[i]) - 1.0;
            w += h / 6.0 * (a + 4.0 * m + b);
            g[i] = eta_min + i as f64 * h + w;
        }
        // s = int_0^eta 1/sqrt(1-F^2), integrated downward from 0
        let mut s = vec![0.0; n];
        let mut acc = 0.0;
        for i in (0..n - 1).rev() {
            let a = 1.0 / gp(ys[i + 1]);
            let m = 1.0 / gp(mids[i]);
            let b = 1.0 / gp(ys[i]);
            acc -= h / 6.0 * (a + 4.0 * m + b);
            s[i] = acc;
        }
        let dy = ys.iter().map(|&y| self.f(y)).collect();
        let dg = ys.iter().map(|&y| gp(y)).collect();
        let ds = ys.iter().map(|&y| 1.0 / gp(y)).collect();
        Ok(EtaTables {
            eta_min,
            h,
            y: ys,
            g,
            s,
            dy,
            dg,
            ds,
        })
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }
    pub fn spec(&self) -> &FSpec {
        &self.spec
    }
    /// Degeneracy location y0 (or r0).
    pub fn y0(&self) -> f64 {
        self.y0
    }
    /// Right end of the working window.
    pub fn y1(&self) -> f64 {
        self.y1
    }
    /// c0 = f'(y0).
    pub fn c0(&self) -> f64 {
        self.c0
    }
    /// Truncation depth of the eta half-line.
    pub fn eta_min(&self) -> f64 {
        self.tables.eta_min
    }
    /// Number of table nodes.
    pub fn table_len(&self) -> usize {
        self.tables.y.len()
    }
    /// eta at table node i.
    pub fn eta_node(&self, i: usize) -> f64 {
        self.tables.eta_min + i as f64 * self.tables.h
    }
    /// y at table node i.
    pub fn y_node(&self, i: usize) -> f64 {
        self.tables.y[i]
    }

    /// (f, f', f'') at y.
    pub fn eval(&self, y: f64) -> [f64; 3] {
        self.sampler.eval(y)
    }
    pub fn f(&self, y: f64) -> f64 {
        self.sampler.eval(y)[0]
    }
    pub fn df(&self, y: f64) -> f64 {
        self.sampler.eval(y)[1]
    }
    pub fn d2f(&self, y: f64) -> f64 {
        self.sampler.eval(y)[2]
    }

    /// Eikonal speed F and dF/dy: F = f (translational) or f/r (axisymmetric).
    pub fn eikonal(&self, y: f64) -> (f64, f64) {
        let v = self.eval(y);
        match self.kind {
            ProfileKind::Translational => (v[0], v[1]),
            ProfileKind::Axisymmetric => (v[0] / y, v[1] / y - v[0] / (y * y)),
        }
    }

    /// Periodic trigonometric form of f, if any.
    pub fn trig(&self) -> Option<TrigSeries> {
        self.spec.trig()
    }

    fn check_eta(&self, eta: f64) -> Result<(), BackgroundError> {
        let lo = self.tables.eta_min;
        if !(eta >= lo - 1e-12 && eta <= 1e-12) {
            return Err(BackgroundError::OutOfWindow {
                what: "eta",
                value: eta,
                lo,
                hi: 0.0,
            });
        }
        Ok(())
    }

    fn hermite(&self, vals: &[f64], ders: &[f64], eta: f64) -> f64 {
        let t = &self.tables;
        let n = vals.len();
        let u = ((eta - t.eta_min) / t.h).clamp(0.0, (n - 1) as f64);
        let i = (u.floor() as usize).min(n - 2);
        let s = u - i as f64;
        let h = t.h;
        let (p0, p1, m0, m1) = (vals[i], vals[i + 1], ders[i] * h, ders[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * p1
            + (s3 - s2) * m1
    }

    /// y(eta) on [eta_min, 0].
    pub fn y_of_eta(&self, eta: f64) -> Result<f64, BackgroundError> {
        self.check_eta(eta)?;
        Ok(self.y_of_eta_unchecked(eta))
    }

    pub(crate) fn y_of_eta_unchecked(&self, eta: f64) -> f64 {
        self.hermite(&self.tables.y, &self.tables.dy, eta)
    }

    /// eta(y) on (y(eta_min), y1].
    pub fn eta_of_y(&self, y: f64) -> Result<f64, BackgroundError> {
        let t = &self.tables;
        let lo = t.y[0];
        if !(y >= lo - 1e-14 && y <= self.y1 + 1e-12 * (1.0 + self.y1.abs())) {
            return Err(BackgroundError::OutOfWindow {
                what: "y",
                value: y,
                lo,
                hi: self.y1,
            });
        }
        Ok(self.eta_of_y_unchecked(y))
    }

    pub(crate) fn eta_of_y_unchecked(&self, y: f64) -> f64 {
        let t = &self.tables;
        let i = t.y.partition_point(|&v| v <= y).clamp(1, t.y.len() - 1) - 1;
        let (ya, yb) = (t.y[i], t.y[i + 1]);
        let ea = t.eta_min + i as f64 * t.h;
        let mut eta = ea + t.h * ((y - ya) / (yb - ya)).clamp(0.0, 1.0);
        for _ in 0..4 {
            let r = self.y_of_eta_unchecked(eta) - y;
            let d = self.f(self.y_of_eta_unchecked(eta));
            eta -= r / d;
        }
        eta.clamp(t.eta_min, 0.0)
    }

    /// Phase G(eta).
    pub fn g_of_eta(&self, eta: f64) -> Result<f64, BackgroundError> {
        self.check_eta(eta)?;
        Ok(self.g_of_eta_unchecked(eta))
    }

    pub(crate) fn g_of_eta_unchecked(&self, eta: f64) -> f64 {
        self.hermite(&self.tables.g, &self.tables.dg, eta)
    }

    /// dG/d eta = sqrt(1 - F^2) at the point y.
    pub fn g_prime_at_y(&self, y: f64) -> f64 {
        let big_f = self.eikonal(y).0;
        (1.0 - big_f * big_f).max(0.0).sqrt()
    }

    /// Travel time s(eta) = int_0^eta 1/sqrt(1-F^2); below eta_min it is
    /// continued by the straight-line asymptote (F ~ 0 there).
    pub fn travel_time(&self, eta: f64) -> f64 {
        let t = &self.tables;
        if eta < t.eta_min {
            return t.s[0] + (eta - t.eta_min);
        }
        self.hermite(&t.s, &t.ds, eta.min(0.0))
    }

    /// Inverse of `travel_time` on [s(eta_min), 0].
    pub fn eta_of_travel(&self, s: f64) -> f64 {
        let t = &self.tables;
        if s <= t.s[0] {
            return t.eta_min + (s - t.s[0]);
        }
        let i = t.s.partition_point(|&v| v <= s).clamp(1, t.s.len() - 1) - 1;
        let ea = t.eta_min + i as f64 * t.h;
        let (sa, sb) = (t.s[i], t.s[i + 1]);
        let mut eta = ea + t.h * ((s - sa) / (sb - sa)).clamp(0.0, 1.0);
        for _ in 0..4 {
            let r = self.travel_time(eta) - s;
            let y = self.y_of_eta_unchecked(eta);
            eta -= r * self.g_prime_at_y(y);
        }
        eta.clamp(t.eta_min, 0.0)
    }

    /// Writes the plain-text table (y, f, f', f'', eta, G) with a header.
    pub fn export_table<W: Write>(&self, mut w: W, stride: usize) -> std::io::Result<()> {
        let kind = match self.kind {
            ProfileKind::Translational => "translational",
            ProfileKind::Axisymmetric => "axisymmetric",
        };
        writeln!(
            w,
            "# kind={kind} y0={:e} y1={:e} c0={:e} eta_min={:e}",
            self.y0,
            self.y1,
            self.c0,
            self.eta_min()
        )?;
        writeln!(w, "# y f df d2f eta G")?;
        let n = self.table_len();
        for i in (0..n).step_by(stride.max(1)).chain(std::iter::once(n - 1)) {
            let eta = self.eta_node(i);
            let y = self.tables.y[i];
            let v = self.eval(y);
            writeln!(
                w,
                "{:e} {:e} {:e} {:e} {:e} {:e}",
                y, v[0], v[1], v[2], eta, self.tables.g[i]
            )?;
        }
        Ok(())
    }
}

/// A profile table read back from text.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    pub kind: ProfileKind,
    pub y0: f64,
    pub y1: f64,
    pub c0: f64,
    pub eta_min: f64,
    /// Rows of (y, f, f', f'', eta, G).
    pub rows: Vec<[f64; 6]>,
}

/// Parses a table written by [`BackgroundProfile::export_table`].
pub fn import_table<R: BufRead>(r: R) -> Result<ProfileTable, BackgroundError> {
    let mut header: Option<(ProfileKind, f64, f64, f64, f64)> = None;
    let mut rows = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| BackgroundError::Table {
            line: line_no,
            reason: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if rest.contains("kind=") {
                let mut kind = None;
                let mut nums = [f64::NAN; 4];
                for tok in rest.split_whitespace() {
                    let (k, v) = tok.split_once('=').ok_or_else(|| BackgroundError::Table {
                        line: line_no,
                        reason: format!("bad header token {tok}"),
                    })?;
                    let num = |v: &str| {
                        v.parse::<f64>().map_err(|e| BackgroundError::Table {
                            line: line_no,
                            reason: format!("{k}: {e}"),
                        })
                    };
                    match k {
                        "kind" => {
                            kind = Some(match v {
                                "translational" => ProfileKind::Translational,
                                "axisymmetric" => ProfileKind::Axisymmetric,
                                _ => {
                                    return Err(BackgroundError::Table {
                                        line: line_no,
                                        reason: format!("unknown kind {v}"),
                                    })
                                }
                            })
                        }
                        "y0" => nums[0] = num(v)?,
                        "y1" => nums[1] = num(v)?,
                        "c0" => nums[2] = num(v)?,
                        "eta_min" => nums[3] = num(v)?,
                        _ => {}
                    }
                }
                let kind = kind.ok_or_else(|| BackgroundError::Table {
                    line: line_no,
                    reason: "missing kind".into(),
                })?;
                header = Some((kind, nums[0], nums[1], nums[2], nums[3]));
            }
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| BackgroundError::Table {
            line: line_no,
            reason: e.to_string(),
        })?;
        if vals.len() != 6 {
            return Err(BackgroundError::Table {
                line: line_no,
                reason: format!("expected 6 columns, got {}", vals.len()),
            });
        }
        rows.push([vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]]);
    }
    let (kind, y0, y1, c0, eta_min) = header.ok_or(BackgroundError::Table {
        line: 0,
        reason: "missing header".into(),
    })?;
    Ok(ProfileTable {
        kind,
        y0,
        y1,
        c0,
        eta_min,
        rows,
    })
}

/// Background evolved by d_t f = -eta_diss (-d_y^2)^alpha f.
#[derive(Debug, Clone)]
pub struct EvolvedBackground {
    pub profile0: BackgroundProfile,
    pub eta_diss: f64,
    pub alpha: f64,
    series0: TrigSeries,
}

impl EvolvedBackground {
    pub fn new(
        profile0: BackgroundProfile,
        eta_diss: f64,
        alpha: f64,
    ) -> Result<EvolvedBackground, BackgroundError> {
        let series0 = profile0.trig().ok_or(BackgroundError::NotPeriodic)?;
        if !(eta_diss >= 0.0) || !(0.0..=1.0).contains(&alpha) {
            return Err(BackgroundError::Invalid(format!(
                "need eta_diss >= 0 and alpha in [0, 1], got {eta_diss}, {alpha}"
            )));
        }
        Ok(EvolvedBackground {
            profile0,
            eta_diss,
            alpha,
            series0,
        })
    }

    /// f(t, .) as a trigonometric series (exact multipliers e^{-eta |k|^{2 alpha} t}).
    pub fn sample(&self, t: f64) -> TrigSeries {
        evolve_series(&self.series0, self.eta_diss, self.alpha, t)
    }

    /// (f, f', f'') at (t, y).
    pub fn eval(&self, t: f64, y: f64) -> [f64; 3] {
        let v = self.sample(t).eval(y);
        [v[0], v[1], v[2]]
    }
}

/// Applies the semigroup e^{-eta t (-d_y^2)^alpha} to a series; for alpha = 0
/// the symbol is the identity, so every mode (the mean included) decays as e^{-eta t}.
pub fn evolve_series(series: &TrigSeries, eta: f64, alpha: f64, t: f64) -> TrigSeries {
    if t == 0.0 || eta == 0.0 {
        return series.clone();
    }
    series.map_modes(|k| {
        let sym = if alpha == 0.0 {
            1.0
        } else if k == 0.0 {
            0.0
        } else {
            k.powf(2.0 * alpha)
        };
        (-eta * sym * t).exp()
    })
}

/// f(t, .) for the fractionally dissipative background evolution.
pub fn evolve_background(
    profile0: &BackgroundProfile,
    eta_diss: f64,
    alpha: f64,
    t: f64,
) -> Result<TrigSeries, BackgroundError> {
    Ok(EvolvedBackground::new(profile0.clone(), eta_diss, alpha)?.sample(t))
}

/// Outcome of [`check_f0_admissible`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    /// sup of |(-Laplacian)^alpha f0| on [y0, y0 + 1/2].
    pub frac_residual: f64,
    /// sup of |f0(y0 + s) + f0(y0 - s)|.
    pub odd_residual: f64,
    pub admissible: bool,
}

/// Checks (-Laplacian)^alpha f0 = 0 near the degeneracy and odd symmetry about y0.
pub fn check_f0_admissible(
    profile0: &BackgroundProfile,
    alpha: f64,
) -> Result<AdmissibilityReport, BackgroundError> {
    let series = profile0.trig().ok_or(BackgroundError::NotPeriodic)?;
    let lap = series.frac_laplacian(alpha);
    let y0 = profile0.y0();
    let n = 512;
    let mut frac = 0.0f64;
    let mut odd = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..=n {
        let s = 0.5 * i as f64 / n as f64;
        frac = frac.max(lap.eval(y0 + s)[0].abs());
        let a = series.eval(y0 + s)[0];
        let b = series.eval(y0 - s)[0];
        odd = odd.max((a + b).abs());
        scale = scale.max(a.abs());
    }
    for i in 0..=n {
        let s = std::f64::consts::PI * i as f64 / n as f64;
        let a = series.eval(y0 + s)[0];
        let b = series.eval(y0 - s)[0];
        odd = odd.max((a + b).abs());
        scale = scale.max(a.abs());
    }
    let tol = 1e-8 * scale.max(1.0);
    Ok(AdmissibilityReport {
        frac_residual: frac,
        odd_residual: odd,
        admissible: frac <= tol && odd <= tol,
    })
}

/// A planar field with analytic first derivatives and curl gradient.
pub trait PlanarField: Send + Sync {
    /// Cartesian components (B^x, B^y).
    fn value(&self, p: [f64; 2]) -> [f64; 2];
    /// `J[i][j]` = d B_i / d x_j.
    fn jacobian(&self, p: [f64; 2]) -> [[f64; 2]; 2];
    /// Gradient of the scalar curl d_x B^y - d_y B^x.
    fn curl_gradient(&self, p: [f64; 2]) -> [f64; 2];
}

/// Affine field B = A p + b (e.g. the exceptional family c y d_x + d d_y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineField {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl AffineField {
    /// c y d_x + d d_y.
    pub fn exceptional(c: f64, d: f64) -> AffineField {
        AffineField {
            a: [[0.0, c], [0.0, 0.0]],
            b: [0.0, d],
        }
    }
}

impl PlanarField for AffineField {
    fn value(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a[0][0] * p[0] + self.a[0][1] * p[1] + self.b[0],
            self.a[1][0] * p[0] + self.a[1][1] * p[1] + self.b[1],
        ]
    }
    fn jacobian(&self, _p: [f64; 2]) -> [[f64; 2]; 2] {
        self.a
    }
    fn curl_gradient(&self, _p: [f64; 2]) -> [f64; 2] {
        [0.0, 0.0]
    }
}

impl PlanarField for BackgroundProfile {
    fn value(&self, p: [f64; 2]) -> [f64; 2] {
        match self.kind {
            ProfileKind::Translational => [self.f(p[1]), 0.0],
            ProfileKind::Axisymmetric => {
                let f = self.f(p[0].hypot(p[1]));
                [-p[1] * f, p[0] * f]
            }
        }
    }

    fn jacobian(&self, p: [f64; 2]) -> [[f64; 2]; 2] {
        match self.kind {
            ProfileKind::Translational => [[0.0, self.df(p[1])], [0.0, 0.0]],
            ProfileKind::Axisymmetric => {
                let (x, y) = (p[0], p[1]);
                let r = x.hypot(y);
                let v = self.eval(r);
                // f'(r)/r, continued by f''(0) at the origin
                let q = if r > 1e-12 { v[1] / r } else { v[2] };
                [
                    [-x * y * q, -v[0] - y * y * q],
                    [v[0] + x * x * q, x * y * q],
                ]
            }
        }
    }

    fn curl_gradient(&self, p: [f64; 2]) -> [f64; 2] {
        match self.kind {
            ProfileKind::Translational => [0.0, -self.d2f(p[1])],
            ProfileKind::Axisymmetric => {
                let (x, y) = (p[0], p[1]);
                let r = x.hypot(y);
                let v = self.eval(r);
                if r <= 1e-12 {
                    return [0.0, 0.0];
                }
                // curl = 2 f + r f', radial derivative 3 f' + r f''
                let g = (3.0 * v[1] + r * v[2]) / r;
                [g * x, g * y]
            }
        }
    }
}

/// Residuals of a stationarity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationarityReport {
    /// sup |div B|.
    pub div_residual: f64,
    /// sup |B . grad (curl B)^z|.
    pub curl_transport_residual: f64,
}

/// Samples div B and B . grad(curl B) at the grid points; axisymmetric
/// profiles are centred in the periodic box.
pub fn verify_stationary(profile: &BackgroundProfile, grid: &Grid) -> StationarityReport {
    let origin = match profile.kind() {
        ProfileKind::Translational => [0.0, 0.0],
        ProfileKind::Axisymmetric => [0.5 * grid.lx(), 0.5 * grid.ly()],
    };
    verify_stationary_field(profile, grid, origin)
}

/// Stationarity residuals of an arbitrary planar field at the grid points,
/// with coordinates measured from `origin`.
pub fn verify_stationary_field(
    field: &dyn PlanarField,
    grid: &Grid,
    origin: [f64; 2],
) -> StationarityReport {
    let mut div = 0.0f64;
    let mut transport = 0.0f64;
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let p = [grid.x(i) - origin[0], grid.y(j) - origin[1]];
            let jac = field.jacobian(p);
            div = div.max((jac[0][0] + jac[1][1]).abs());
            let b = field.value(p);
            let g = field.curl_gradient(p);
            transport = transport.max((b[0] * g[0] + b[1] * g[1]).abs());
        }
    }
    StationarityReport {
        div_residual: div,
        curl_transport_residual: transport,
    }
}
