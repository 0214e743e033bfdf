//! Bicharacteristics of the whistler symbol p(x, xi) = B(x).xi |xi|.
//!
//! The Hamiltonian system is
//!
//! ```text
//! dX/dt  = grad_xi p = B |xi| + (B.xi) xi/|xi|,
//! dXi/dt = -grad_x p = -(sum_i xi_i grad B_i) |xi|,
//! ```
//!
//! integrated with fixed-step classical RK4 in all six variables. Since the
//! backgrounds are z-independent, xi_z is conserved, as are p and either
//! xi_x (translational fields) or the angular momentum x xi_y - y xi_x
//! (axisymmetric fields).
//!
//! For B = y d_x with X(0) = (0, 1, 0), Xi(0) = (lam, -lam, 0) the flow is
//! explicit with theta0 = asinh(1):
//!
//! ```text
//! y = cosh(theta0)/cosh(lam t + theta0),  Xi_y = -lam sinh(lam t + theta0),
//! x = sqrt2 lam t + sqrt2 (tanh(lam t + theta0) - tanh theta0).
//! ```

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::background::{AffineField, BackgroundProfile, PlanarField, ProfileKind};

/// Errors raised by the ray integrator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RayError {
    #[error("frequency vector vanishes")]
    ZeroFrequency,
    #[error("|xi| collapsed below 1e-8 |xi(0)| at t = {0}")]
    FrequencyCollapse(f64),
    #[error("ray state became non-finite at t = {0}")]
    Overflow(f64),
    #[error("invalid step: dt = {dt}, t_end = {t_end}")]
    InvalidStep { dt: f64, t_end: f64 },
}

/// Conserved momentum associated with the background symmetry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    /// d_x B = 0, so xi_x is conserved.
    TranslationX,
    /// Rotation about the z axis, so x xi_y - y xi_x is conserved.
    Rotation,
    /// No planar symmetry known.
    None,
}

/// A planar background usable for ray tracing.
pub trait RayBackground: PlanarField {
    fn symmetry(&self) -> Symmetry;
}

impl RayBackground for BackgroundProfile {
    fn symmetry(&self) -> Symmetry {
        match self.kind() {
            ProfileKind::Translational => Symmetry::TranslationX,
            ProfileKind::Axisymmetric => Symmetry::Rotation,
        }
    }
}

impl RayBackground for AffineField {
    fn symmetry(&self) -> Symmetry {
        if self.a[0][0] == 0.0 && self.a[1][0] == 0.0 {
            Symmetry::TranslationX
        } else {
            Symmetry::None
        }
    }
}

/// Position, frequency and time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RayState {
    pub x: [f64; 3],
    pub xi: [f64; 3],
    pub t: f64,
}

/// Values of the conserved quantities (p, planar momentum, xi_z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Conserved {
    pub p: f64,
    /// xi_x or angular momentum; NaN when the field has no symmetry.
    pub momentum: f64,
    pub xi_z: f64,
}

/// Advisory raised when conserved drift exceeds 1e-4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepTooLarge {
    pub t: f64,
    pub drift: f64,
}

/// Time-ordered ray samples with their initial invariants.
#[derive(Debug, Clone, Serialize)]
pub struct RayTrajectory {
    pub samples: Vec<RayState>,
    pub conserved: Conserved,
    pub symmetry: Symmetry,
    pub step_too_large: Option<StepTooLarge>,
}

/// Maximum relative drift of each conserved quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftReport {
    pub p: f64,
    pub momentum: f64,
    pub xi_z: f64,
}

impl DriftReport {
    pub fn max(&self) -> f64 {
        [self.p, self.momentum, self.xi_z]
            .into_iter()
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max)
    }
}

fn norm3(v: &[f64; 3]) -> f64 {
    v[0].hypot(v[1]).hypot(v[2])
}

/// p = B(X).Xi |Xi|.
pub fn hamiltonian(field: &dyn PlanarField, x: [f64; 3], xi: [f64; 3]) -> Result<f64, RayError> {
    let k = norm3(&xi);
    if k == 0.0 {
        return Err(RayError::ZeroFrequency);
    }
    let b = field.value([x[0], x[1]]);
    Ok((b[0] * xi[0] + b[1] * xi[1]) * k)
}

fn invariants(field: &dyn RayBackground, s: &RayState) -> Conserved {
    let p = hamiltonian(field, s.x, s.xi).unwrap_or(f64::NAN);
    let momentum = match field.symmetry() {
        Symmetry::TranslationX => s.xi[0],
        Symmetry::Rotation => s.x[0] * s.xi[1] - s.x[1] * s.xi[0],
        Symmetry::None => f64::NAN,
    };
    Conserved {
        p,
        momentum,
        xi_z: s.xi[2],
    }
}

fn rel(a: f64, a0: f64) -> f64 {
    if !a0.is_finite() {
        return f64::NAN;
    }
    let d = (a - a0).abs();
    if a0 == 0.0 {
        d
    } else {
        d / a0.abs()
    }
}

fn vector_field(field: &dyn PlanarField, x: &[f64; 3], xi: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let k = norm3(xi);
    let p2 = [x[0], x[1]];
    let b = field.value(p2);
    let jac = field.jacobian(p2);
    let bxi = b[0] * xi[0] + b[1] * xi[1];
    let dx = [
        b[0] * k + bxi * xi[0] / k,
        b[1] * k + bxi * xi[1] / k,
        bxi * xi[2] / k,
    ];
    // (grad_x p)_j = sum_i xi_i d_j B_i |xi|
    let dxi = [
        -(xi[0] * jac[0][0] + xi[1] * jac[1][0]) * k,
        -(xi[0] * jac[0][1] + xi[1] * jac[1][1]) * k,
        0.0,
    ];
    (dx, dxi)
}

fn axpy(a: &[f64; 3], h: f64, b: &[f64; 3]) -> [f64; 3] {
    [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]]
}

/// One classical RK4 step of the Hamiltonian flow.
pub fn rk4_step(field: &dyn PlanarField, s: &RayState, h: f64) -> RayState {
    let (a1, b1) = vector_field(field, &s.x, &s.xi);
    let (a2, b2) = vector_field(field, &axpy(&s.x, 0.5 * h, &a1), &axpy(&s.xi, 0.5 * h, &b1));
    let (a3, b3) = vector_field(field, &axpy(&s.x, 0.5 * h, &a2), &axpy(&s.xi, 0.5 * h, &b2));
    let (a4, b4) = vector_field(field, &axpy(&s.x, h, &a3), &axpy(&s.xi, h, &b3));
    let mut x = s.x;
    let mut xi = s.xi;
    for i in 0..3 {
        x[i] += h / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]);
        xi[i] += h / 6.0 * (b1[i] + 2.0 * b2[i] + 2.0 * b3[i] + b4[i]);
    }
    RayState { x, xi, t: s.t + h }
}

/// Integrates a bicharacteristic to `t_end` with steps of (at most) `dt`.
pub fn integrate_ray(
    field: &dyn RayBackground,
    x0: [f64; 3],
    xi0: [f64; 3],
    t_end: f64,
    dt: f64,
) -> Result<RayTrajectory, RayError> {
    if !(dt > 0.0) || !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(RayError::InvalidStep { dt, t_end });
    }
    let k0 = norm3(&xi0);
    if k0 == 0.0 {
        return Err(RayError::ZeroFrequency);
    }
    let s0 = RayState {
        x: x0,
        xi: xi0,
        t: 0.0,
    };
    let conserved = invariants(field, &s0);
    let n = (t_end / dt).ceil() as usize;
    let h = if n > 0 { t_end / n as f64 } else { 0.0 };
    let mut samples = Vec::with_capacity(n + 1);
    samples.push(s0);
    let mut step_too_large = None;
    let mut s = s0;
    for i in 1..=n {
        s = rk4_step(field, &s, h);
        s.t = i as f64 * h;
        if !(s.x.iter().chain(&s.xi).all(|v| v.is_finite())) {
            return Err(RayError::Overflow(s.t));
        }
        let k = norm3(&s.xi);
        if !k.is_finite() {
            return Err(RayError::Overflow(s.t));
        }
        if k < 1e-8 * k0 {
            return Err(RayError::FrequencyCollapse(s.t));
        }
        if step_too_large.is_none() {
            let c = invariants(field, &s);
            let drift = [
                rel(c.p, conserved.p),
                rel(c.momentum, conserved.momentum),
                rel(c.xi_z, conserved.xi_z),
            ]
            .into_iter()
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
            if drift > 1e-4 {
                step_too_large = Some(StepTooLarge { t: s.t, drift });
            }
        }
        samples.push(s);
    }
    Ok(RayTrajectory {
        samples,
        conserved,
        symmetry: field.symmetry(),
        step_too_large,
    })
}

impl RayTrajectory {
    /// Wraps externally produced samples (e.g. a closed-form oracle).
    pub fn from_samples(field: &dyn RayBackground, samples: Vec<RayState>) -> RayTrajectory {
        let conserved = invariants(field, &samples[0]);
        RayTrajectory {
            samples,
            conserved,
            symmetry: field.symmetry(),
            step_too_large: None,
        }
    }

    pub fn last(&self) -> &RayState {
        self.samples.last().expect("trajectory is nonempty")
    }

    /// CSV dump: t, X (3), Xi (3), p, drift columns.
    pub fn write_csv<W: Write>(&self, field: &dyn RayBackground, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "t,x,y,z,xi_x,xi_y,xi_z,p,drift_p,drift_momentum,drift_xi_z"
        )?;
        for s in &self.samples {
            let c = invariants(field, s);
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                s.t,
                s.x[0],
                s.x[1],
                s.x[2],
                s.xi[0],
                s.xi[1],
                s.xi[2],
                c.p,
                rel(c.p, self.conserved.p),
                rel(c.momentum, self.conserved.momentum),
                rel(c.xi_z, self.conserved.xi_z)
            )?;
        }
        Ok(())
    }
}

/// Maximum relative drift of (p, momentum, xi_z) along a trajectory.
pub fn conserved_report(field: &dyn RayBackground, traj: &RayTrajectory) -> DriftReport {
    let mut d = DriftReport {
        p: 0.0,
        momentum: 0.0,
        xi_z: 0.0,
    };
    for s in &traj.samples {
        let c = invariants(field, s);
        d.p = d.p.max(rel(c.p, traj.conserved.p));
        d.momentum = d.momentum.max(rel(c.momentum, traj.conserved.momentum));
        d.xi_z = d.xi_z.max(rel(c.xi_z, traj.conserved.xi_z));
    }
    if !traj.conserved.momentum.is_finite() {
        d.momentum = f64::NAN;
    }
    d
}

/// asinh(1) = ln(1 + sqrt 2).
pub fn theta0() -> f64 {
    1.0f64.asinh()
}

/// Closed-form bicharacteristic on B = y d_x from X(0) = (0,1,0), Xi(0) = (lam,-lam,0).
pub fn explicit_ray_linear(lambda: f64, t: f64) -> RayState {
    let th0 = theta0();
    let th = lambda * t + th0;
    let s2 = std::f64::consts::SQRT_2;
    RayState {
        x: [
            s2 * lambda * t + s2 * (th.tanh() - th0.tanh()),
            th0.cosh() / th.cosh(),
            0.0,
        ],
        xi: [lambda, -lambda * th.sinh(), 0.0],
        t,
    }
}

/// Max relative error of (x, y, xi_x, xi_y) of an RK4 ray on B = y d_x
/// against the closed form.
pub fn linear_oracle_error(traj: &RayTrajectory, lambda: f64) -> f64 {
    let mut err = 0.0f64;
    for s in &traj.samples {
        let e = explicit_ray_linear(lambda, s.t);
        for (a, b) in [
            (s.x[1], e.x[1]),
            (s.xi[0], e.xi[0]),
            (s.xi[1], e.xi[1]),
            (s.x[0], e.x[0]),
        ] {
            let scale = b.abs().max(1e-300);
            if b != 0.0 {
                err = err.max((a - b).abs() / scale);
            }
        }
    }
    err
}
