//! Degenerating wave packets for the linearized electron-MHD system.
//!
//! In the renormalized variables (tau = lam t, eta) the packet is
//!
//! ```text
//! psi~ = w lam^{-1} Re(e^{i Theta} h),
//! b~z  = -(w/f) Re(e^{i Theta} (h + (i lam)^{-1} d_tau h)),
//! Theta = lam^2 t + lam x + lam G(eta),
//! ```
//!
//! with weight w = f^{1/2} for B = f(y) d_x and w = (f/r)^{1/2} for
//! B = f(r) d_theta (x is then the angle). By construction
//! d_t psi~ + f d_x b~z = 0 exactly. The amplitude solves the transport
//! equation (d_tau - G' d_eta) h = (1/2) G'' h (G' = sqrt(1 - F^2)), whose
//! characteristics are straight lines in the travel time s(eta), so
//!
//! ```text
//! h(tau, eta) = (G'(eta_f)/G'(eta))^{1/2} h0(eta_f),   s(eta_f) = s(eta) + tau,
//! ```
//!
//! with h0 = g0/w. d_tau h follows from differentiating this closed form.
//!
//! In the x-independent torus case the packet is a single Fourier column,
//! u = Re(e^{i lam x} A(y)), and is stored as complex y-profiles A(y) on a
//! periodic line; x-derivatives act as i lam.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::background::{BackgroundError, BackgroundProfile, ProfileKind};
use crate::spectral::{Grid, Line, ScalarField, SpectralError, Spectrum};

/// Errors raised by packet construction and evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PacketError {
    #[error("packet under-resolved at t = {t}: needs y-wavenumber {needed:.1}, grid allows {allowed:.1}")]
    UnderResolved { t: f64, needed: f64, allowed: f64 },
    #[error("packet support left the tabulated eta range at t = {0}")]
    Horizon(f64),
    #[error("invalid amplitude support ({0}, {1})")]
    InvalidSupport(f64, f64),
    #[error("lambda must be a positive integer")]
    InvalidLambda,
    #[error("operation requires a translational packet on a 2 pi periodic x-axis")]
    NotTorus,
    #[error("operation is only available for translational packets")]
    Unsupported,
    #[error("need at least 4 resolved times, got {0}")]
    InsufficientSamples(usize),
    #[error(transparent)]
    Background(#[from] BackgroundError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// How the amplitude depends on x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeMode {
    /// g0 = q0(y).
    XIndependent,
    /// g0 = p0(x) q0(y) with p0 = 1 on the torus (equivalent to x-independent).
    Product,
}

type AmpFn = dyn Fn(f64) -> [Complex64; 2] + Send + Sync;

/// Initial amplitude g0 (value and y-derivative) with its support.
#[derive(Clone)]
pub struct AmplitudeSpec {
    pub mode: AmplitudeMode,
    /// Support (y_lo, y_hi) of g0.
    pub support: (f64, f64),
    /// Support used for resolution estimates (tails below 1e-10 dropped).
    pub effective_support: (f64, f64),
    g0: Arc<AmpFn>,
}

impl std::fmt::Debug for AmplitudeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AmplitudeSpec")
            .field("mode", &self.mode)
            .field("support", &self.support)
            .finish()
    }
}

/// exp(-1/(1 - s^2)) and its derivative in s.
fn bump(s: f64) -> (f64, f64) {
    if s.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - s * s;
    let v = (-1.0 / q).exp();
    (v, v * (-2.0 * s / (q * q)))
}

/// Amplitude bandwidth constant, in units of the inverse support half-width.
const AMP_BANDWIDTH: f64 = 40.0;

/// Share of the Nyquist wavenumber the packet bandwidth may use for norms.
pub const NORM_FRACTION: f64 = 1.0;
/// Share of the Nyquist wavenumber allowed when third derivatives are taken.
pub const RESIDUAL_FRACTION: f64 = 0.45;

/// Fraction of the bump half-width outside which the bump is below 1e-10 of its peak.
const BUMP_EFFECTIVE: f64 = 0.98;

impl AmplitudeSpec {
    /// Smooth bump exp(-1/(1-s^2)) rescaled to (lo, hi).
    pub fn bump(lo: f64, hi: f64) -> AmplitudeSpec {
        let c = 0.5 * (lo + hi);
        let hw = 0.5 * (hi - lo);
        AmplitudeSpec {
            mode: AmplitudeMode::XIndependent,
            support: (lo, hi),
            effective_support: (c - BUMP_EFFECTIVE * hw, c + BUMP_EFFECTIVE * hw),
            g0: Arc::new(move |y| {
                let (v, d) = bump((y - c) / hw);
                [Complex64::new(v, 0.0), Complex64::new(d / hw, 0.0)]
            }),
        }
    }

    /// Default bump on ((y0 + y1)/2, y1).
    pub fn default_for(profile: &BackgroundProfile) -> AmplitudeSpec {
        AmplitudeSpec::bump(0.5 * (profile.y0() + profile.y1()), profile.y1())
    }

    /// Caller-supplied g0 returning (value, d/dy) on `support`.
    pub fn custom<F>(mode: AmplitudeMode, support: (f64, f64), g0: F) -> AmplitudeSpec
    where
        F: Fn(f64) -> [Complex64; 2] + Send + Sync + 'static,
    {
        AmplitudeSpec {
            mode,
            support,
            effective_support: support,
            g0: Arc::new(g0),
        }
    }

    pub fn with_mode(mut self, mode: AmplitudeMode) -> AmplitudeSpec {
        self.mode = mode;
        self
    }

    /// (g0, g0') at y; zero outside the support.
    pub fn eval(&self, y: f64) -> [Complex64; 2] {
        if y <= self.support.0 || y >= self.support.1 {
            return [Complex64::new(0.0, 0.0); 2];
        }
        (self.g0)(y)
    }
}

/// Result of [`backtrack`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Backtrack {
    /// Foot point eta0 with Y(tau; eta0) = eta.
    pub eta0: f64,
    /// x0 - x accumulated along the characteristic.
    pub x_shift: f64,
    /// Integrating factor alpha = int (1/2) G''(Y).
    pub alpha: f64,
}

/// Backward RK4 integration of the transport characteristics
/// dY/dtau = -G'(Y), dX/dtau = -(1 + F(Y)^2), with dalpha/dtau = G''(Y)/2.
/// Below eta_min the path is continued by the straight line G' = 1.
pub fn backtrack(profile: &BackgroundProfile, tau: f64, eta: f64) -> Backtrack {
    backtrack_with_step(profile, tau, eta, 1e-3)
}

/// As [`backtrack`] with a caller-chosen step.
pub fn backtrack_with_step(
    profile: &BackgroundProfile,
    tau: f64,
    eta: f64,
    step: f64,
) -> Backtrack {
    let rhs = |e: f64| -> [f64; 3] {
        if e < profile.eta_min() {
            return [1.0, 1.0, 0.0];
        }
        let y = profile.y_of_eta_unchecked(e.min(0.0));
        let (big_f, big_fy) = profile.eikonal(y);
        let gp = (1.0 - big_f * big_f).sqrt();
        let f = profile.f(y);
        // G'' in eta = f dG'/dy
        let gpp = f * (-big_f * big_fy / gp);
        [gp, 1.0 + big_f * big_f, 0.5 * gpp]
    };
    if tau <= 0.0 {
        return Backtrack {
            eta0: eta,
            x_shift: 0.0,
            alpha: 0.0,
        };
    }
    let n = (tau / step).ceil().max(1.0) as usize;
    let h = tau / n as f64;
    let (mut e, mut xs, mut a) = (eta, 0.0, 0.0);
    for _ in 0..n {
        let k1 = rhs(e);
        let k2 = rhs(e + 0.5 * h * k1[0]);
        let k3 = rhs(e + 0.5 * h * k2[0]);
        let k4 = rhs(e + h * k3[0]);
        e += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        xs += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        a += h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]);
    }
    Backtrack {
        eta0: e,
        x_shift: xs,
        alpha: a,
    }
}

/// A lambda-parameterized degenerating wave packet.
#[derive(Debug, Clone)]
pub struct WavePacket {
    profile: Arc<BackgroundProfile>,
    lambda: u32,
    amp: AmplitudeSpec,
    scale: f64,
    s_support: (f64, f64),
    s_effective: (f64, f64),
}

/// Per-point data that do not depend on time.
#[derive(Debug, Clone, Copy)]
struct Site {
    s: f64,
    g: f64,
    f: f64,
    w: f64,
    gp: f64,
}

/// Amplitude h and d_tau h at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeSample {
    pub h: Complex64,
    pub dtau_h: Complex64,
}

impl WavePacket {
    /// Builds a packet normalized so that ||b~(0)||_{L2} = 1, where
    /// ||b~||^2 = ||grad psi~||^2 + ||b~z||^2.
    pub fn new(
        profile: Arc<BackgroundProfile>,
        lambda: u32,
        amp: AmplitudeSpec,
    ) -> Result<WavePacket, PacketError> {
        if lambda == 0 {
            return Err(PacketError::InvalidLambda);
        }
        let (lo, hi) = amp.support;
        let y_floor = profile.y_node(0);
        if !(lo < hi && lo > y_floor && hi <= profile.y1() + 1e-12) {
            return Err(PacketError::InvalidSupport(lo, hi));
        }
        let s_of = |y: f64| profile.travel_time(profile.eta_of_y_unchecked(y.min(profile.y1())));
        let s_support = (s_of(lo), s_of(hi));
        let (elo, ehi) = amp.effective_support;
        let s_effective = (s_of(elo.max(lo)), s_of(ehi.min(hi)));
        let mut packet = WavePacket {
            profile,
            lambda,
            amp,
            scale: 1.0,
            s_support,
            s_effective,
        };
        let line = packet.reference_line()?;
        let n0 = packet.sampler(&line).evaluate(0.0)?.b_norm();
        if !(n0 > 0.0) {
            return Err(PacketError::InvalidSupport(lo, hi));
        }
        packet.scale = 1.0 / n0;
        Ok(packet)
    }

    /// Packet with the default bump amplitude on ((y0 + y1)/2, y1).
    pub fn with_default_amplitude(
        profile: Arc<BackgroundProfile>,
        lambda: u32,
    ) -> Result<WavePacket, PacketError> {
        let amp = AmplitudeSpec::default_for(&profile);
        WavePacket::new(profile, lambda, amp)
    }

    pub fn profile(&self) -> &Arc<BackgroundProfile> {
        &self.profile
    }
    pub fn lambda(&self) -> u32 {
        self.lambda
    }
    pub fn amplitude(&self) -> &AmplitudeSpec {
        &self.amp
    }
    /// Normalization factor applied to g0.
    pub fn scale(&self) -> f64 {
        self.scale
    }
    pub fn kind(&self) -> ProfileKind {
        self.profile.kind()
    }

    /// (c_f, C_f): the minimum of f' over the y-range visited up to time t
    /// and f'(y0).
    pub fn growth_constants(&self, t: f64) -> Result<(f64, f64), PacketError> {
        let lam = self.lambda as f64;
        let (lo, _) = self.support_at(lam * t).ok_or(PacketError::Horizon(t))?;
        let hi = self.amp.support.1;
        let c_f = (0..=256)
            .map(|i| self.profile.df(lo + (hi - lo) * i as f64 / 256.0))
            .fold(f64::INFINITY, f64::min);
        Ok((c_f, self.profile.c0()))
    }

    /// A fine line used for normalization: [0, 2 pi) for translational packets,
    /// an r-interval around the window for axisymmetric ones.
    pub fn reference_line(&self) -> Result<Line, PacketError> {
        self.packet_line(16384)
    }

    /// Line with n points suited to this packet's geometry.
    pub fn packet_line(&self, n: usize) -> Result<Line, PacketError> {
        Ok(match self.kind() {
            ProfileKind::Translational => Line::new(n, 0.0, 2.0 * std::f64::consts::PI)?,
            ProfileKind::Axisymmetric => {
                let (r0, r1) = (self.profile.y0(), self.profile.y1());
                let start = 0.5 * r0;
                Line::new(n, start, r1 + (r1 - r0) - start)?
            }
        })
    }

    fn site(&self, y: f64) -> Option<Site> {
        let p = &self.profile;
        if !(y > p.y0() && y <= p.y1()) || y <= p.y_node(0) {
            return None;
        }
        let eta = p.eta_of_y_unchecked(y);
        let v = p.eval(y);
        let w = match p.kind() {
            ProfileKind::Translational => v[0].sqrt(),
            ProfileKind::Axisymmetric => (v[0] / y).sqrt(),
        };
        Some(Site {
            s: p.travel_time(eta),
            g: p.g_of_eta_unchecked(eta),
            f: v[0],
            w,
            gp: p.g_prime_at_y(y),
        })
    }

    /// w'/w at y.
    fn log_weight_derivative(&self, y: f64) -> f64 {
        let v = self.profile.eval(y);
        match self.kind() {
            ProfileKind::Translational => 0.5 * v[1] / v[0],
            ProfileKind::Axisymmetric => 0.5 * (v[1] / v[0] - 1.0 / y),
        }
    }

    fn weight(&self, y: f64) -> f64 {
        let f = self.profile.f(y);
        match self.kind() {
            ProfileKind::Translational => f.sqrt(),
            ProfileKind::Axisymmetric => (f / y).sqrt(),
        }
    }

    /// h and d_tau h at a point with travel time `s` and speed G' = `gp`.
    fn amplitude_at(&self, s: f64, gp: f64, tau: f64) -> Option<AmplitudeSample> {
        let sf = s + tau;
        if sf <= self.s_support.0 || sf >= self.s_support.1 {
            return None;
        }
        let p = &self.profile;
        let eta_f = p.eta_of_travel(sf);
        let yf = p.y_of_eta_unchecked(eta_f);
        let gpf = p.g_prime_at_y(yf);
        let ea = (gpf / gp).sqrt();
        let g = self.amp.eval(yf);
        let (g0, g0y) = (g[0] * self.scale, g[1] * self.scale);
        let wf = self.weight(yf);
        let h0 = g0 / wf;
        let dh0_dy = (g0y - g0 * self.log_weight_derivative(yf)) / wf;
        let ff = p.f(yf);
        let dh0_deta = dh0_dy * ff;
        let (big_f, big_fy) = p.eikonal(yf);
        let gpp_f = ff * (-big_f * big_fy / gpf);
        Some(AmplitudeSample {
            h: h0 * ea,
            dtau_h: (h0 * (0.5 * gpp_f) + dh0_deta * gpf) * ea,
        })
    }

    /// Amplitude h(tau, eta) and d_tau h on a list of eta values (zero when
    /// the foot point lies outside the support).
    pub fn amplitude_h(&self, tau: f64, etas: &[f64]) -> Vec<AmplitudeSample> {
        let p = &self.profile;
        etas.iter()
            .map(|&eta| {
                let y = p.y_of_eta_unchecked(eta.clamp(p.eta_min(), 0.0));
                let zero = AmplitudeSample {
                    h: Complex64::new(0.0, 0.0),
                    dtau_h: Complex64::new(0.0, 0.0),
                };
                if eta < p.eta_min() || eta > 0.0 {
                    return zero;
                }
                self.amplitude_at(p.travel_time(eta), p.g_prime_at_y(y), tau)
                    .unwrap_or(zero)
            })
            .collect()
    }

    /// Image (y_lo, y_hi) of the effective amplitude support at time tau.
    pub fn support_at(&self, tau: f64) -> Option<(f64, f64)> {
        let p = &self.profile;
        let s_of = |s: f64| {
            let eta = p.eta_of_travel(s);
            if eta <= p.eta_min() {
                None
            } else {
                Some(p.y_of_eta_unchecked(eta))
            }
        };
        Some((
            s_of(self.s_effective.0 - tau)?,
            s_of(self.s_effective.1 - tau)?,
        ))
    }

    /// Largest local y-wavenumber lam G'/f of the phase over the effective support.
    pub fn phase_wavenumber(&self, tau: f64) -> Option<f64> {
        let (lo, _) = self.support_at(tau)?;
        Some(self.lambda as f64 * self.profile.g_prime_at_y(lo) / self.profile.f(lo))
    }

    /// Estimated y-bandwidth of the packet: phase wavenumber plus the spread
    /// of the compressed amplitude, AMP_BANDWIDTH / (half-width of the support).
    pub fn bandwidth(&self, tau: f64) -> Option<f64> {
        let (lo, hi) = self.support_at(tau)?;
        Some(self.phase_wavenumber(tau)? + AMP_BANDWIDTH / (0.5 * (hi - lo)))
    }

    /// Evaluation helper with cached per-point data on a line.
    pub fn sampler<'a>(&'a self, line: &'a Line) -> PacketSampler<'a> {
        let sites = line.points().into_iter().map(|y| self.site(y)).collect();
        PacketSampler {
            packet: self,
            line,
            sites,
        }
    }

    /// Line matching the y-axis of a solver grid.
    pub fn grid_line(grid: &Grid) -> Result<Line, PacketError> {
        Ok(Line::new(grid.ny(), 0.0, grid.ly())?)
    }

    /// Spectral column index of this packet on `grid`.
    pub fn grid_column(&self, grid: &Grid) -> Result<usize, PacketError> {
        if self.kind() != ProfileKind::Translational
            || (grid.lx() - 2.0 * std::f64::consts::PI).abs() > 1e-12
            || (grid.ly() - 2.0 * std::f64::consts::PI).abs() > 1e-12
        {
            return Err(PacketError::NotTorus);
        }
        let m = self.lambda as usize;
        if m >= grid.nx() / 2 {
            return Err(SpectralError::InvalidGrid(format!(
                "nx = {} cannot carry x-frequency {}",
                grid.nx(),
                m
            ))
            .into());
        }
        Ok(m)
    }
}

/// A packet bound to a line, caching the time-independent point data.
pub struct PacketSampler<'a> {
    packet: &'a WavePacket,
    line: &'a Line,
    sites: Vec<Option<Site>>,
}

/// Complex y-profiles of the packet at one time: u = Re(e^{i lam x} A(y)).
#[derive(Debug, Clone)]
pub struct PacketProfiles {
    pub t: f64,
    pub lambda: u32,
    pub kind: ProfileKind,
    /// Line sample points.
    pub points: Vec<f64>,
    pub h: f64,
    pub psi: Vec<Complex64>,
    pub bz: Vec<Complex64>,
    /// d_y psi (or d_r psi), computed spectrally.
    pub dpsi: Vec<Complex64>,
}

impl PacketProfiles {
    fn weight(&self, j: usize) -> f64 {
        match self.kind {
            ProfileKind::Translational => std::f64::consts::PI * self.h,
            ProfileKind::Axisymmetric => std::f64::consts::PI * self.h * self.points[j],
        }
    }

    /// L2 norm of Re(e^{i lam x} A) over the plane (torus or polar).
    pub fn l2(&self, a: &[Complex64]) -> f64 {
        a.iter()
            .enumerate()
            .map(|(j, c)| self.weight(j) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// L2 norm of the gradient of Re(e^{i lam x} A) given A and dA.
    pub fn grad_l2(&self, a: &[Complex64], da: &[Complex64]) -> f64 {
        let lam2 = (self.lambda as f64).powi(2);
        a.iter()
            .zip(da)
            .enumerate()
            .map(|(j, (c, d))| {
                let ang = match self.kind {
                    ProfileKind::Translational => lam2,
                    ProfileKind::Axisymmetric => lam2 / (self.points[j] * self.points[j]),
                };
                self.weight(j) * (ang * c.norm_sqr() + d.norm_sqr())
            })
            .sum::<f64>()
            .sqrt()
    }

    /// sqrt(||grad psi~||^2 + ||b~z||^2).
    pub fn b_norm(&self) -> f64 {
        (self.grad_l2(&self.psi, &self.dpsi).powi(2) + self.l2(&self.bz).powi(2)).sqrt()
    }

    /// In-plane components (b~x, b~y) = (d_y psi~, -d_x psi~) as profiles.
    pub fn bxy(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        let il = Complex64::new(0.0, -(self.lambda as f64));
        (self.dpsi.clone(), self.psi.iter().map(|c| c * il).collect())
    }

    /// Pairing <a, b> of two real fields Re(e^{i lam x} A), Re(e^{i lam x} B).
    pub fn pair(&self, a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(j, (x, y))| self.weight(j) * (x * y.conj()).re)
            .sum()
    }

    /// L^p norm of the vector |b~| = |(b~x, b~y, b~z)|, integrating the
    /// x-dependence with `phases` samples per period.
    pub fn b_lp(&self, p: f64, phases: usize) -> f64 {
        let (bx, by) = self.bxy();
        let mut acc = 0.0f64;
        for j in 0..self.points.len() {
            let comps = [bx[j], by[j], self.bz[j]];
            if comps.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
                continue;
            }
            let mut local = 0.0f64;
            for k in 0..phases {
                let ph = 2.0 * std::f64::consts::PI * k as f64 / phases as f64;
                let e = Complex64::from_polar(1.0, ph);
                let m2: f64 = comps.iter().map(|c| (e * c).re.powi(2)).sum();
                let m = m2.sqrt();
                if p.is_infinite() {
                    local = local.max(m);
                } else {
                    local += m.powf(p);
                }
            }
            if p.is_infinite() {
                acc = acc.max(local);
            } else {
                let x_measure = match self.kind {
                    ProfileKind::Translational => 2.0 * std::f64::consts::PI,
                    ProfileKind::Axisymmetric => 2.0 * std::f64::consts::PI * self.points[j],
                };
                acc += self.h * x_measure * local / phases as f64;
            }
        }
        if p.is_infinite() {
            acc
        } else {
            acc.powf(1.0 / p)
        }
    }
}

impl<'a> PacketSampler<'a> {
    pub fn line(&self) -> &Line {
        self.line
    }
    pub fn packet(&self) -> &WavePacket {
        self.packet
    }

    /// Raw (psi, bz) profiles at time t, without resolution checks.
    pub fn profiles_unchecked(&self, t: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let lam = self.packet.lambda as f64;
        let tau = lam * t;
        let mut psi = vec![Complex64::new(0.0, 0.0); self.sites.len()];
        let mut bz = psi.clone();
        for (j, site) in self.sites.iter().enumerate() {
            let Some(site) = site else { continue };
            let Some(a) = self.packet.amplitude_at(site.s, site.gp, tau) else {
                continue;
            };
            let e = Complex64::from_polar(1.0, lam * (tau + site.g));
            psi[j] = e * a.h * (site.w / lam);
            let corr = a.h + a.dtau_h / Complex64::new(0.0, lam);
            bz[j] = -e * corr * (site.w / site.f);
        }
        (psi, bz)
    }

    /// Checks the packet bandwidth against `fraction` of the line Nyquist.
    pub fn check_resolution(&self, t: f64, fraction: f64) -> Result<(), PacketError> {
        let tau = self.packet.lambda as f64 * t;
        let k = self.packet.bandwidth(tau).ok_or(PacketError::Horizon(t))?;
        let allowed = fraction * std::f64::consts::PI / self.line.h();
        if k > allowed {
            return Err(PacketError::UnderResolved {
                t,
                needed: k,
                allowed,
            });
        }
        Ok(())
    }

    /// Packet profiles at time t.
    pub fn evaluate(&self, t: f64) -> Result<PacketProfiles, PacketError> {
        self.check_resolution(t, NORM_FRACTION)?;
        let (psi, bz) = self.profiles_unchecked(t);
        let dpsi = self.line.deriv(&psi, 1);
        Ok(PacketProfiles {
            t,
            lambda: self.packet.lambda,
            kind: self.packet.kind(),
            points: self.line.points(),
            h: self.line.h(),
            psi,
            bz,
            dpsi,
        })
    }

    fn f_and_fpp(&self) -> (Vec<f64>, Vec<f64>) {
        let p = &self.packet.profile;
        let kind = self.packet.kind();
        self.line
            .points()
            .into_iter()
            .map(|y| {
                let v = p.eval(y);
                match kind {
                    ProfileKind::Translational => (v[0], v[2]),
                    ProfileKind::Axisymmetric => (v[0], v[2] + 3.0 * v[1] / y),
                }
            })
            .unzip()
    }

    /// Planar Laplacian of the mode Re(e^{i lam x} A).
    pub fn laplacian(&self, a: &[Complex64]) -> Vec<Complex64> {
        let lam2 = (self.packet.lambda as f64).powi(2);
        match self.packet.kind() {
            ProfileKind::Translational => {
                self.line.apply(a, |k| Complex64::new(-(lam2 + k * k), 0.0))
            }
            ProfileKind::Axisymmetric => {
                let d1 = self.line.deriv(a, 1);
                let d2 = self.line.deriv(a, 2);
                self.line
                    .points()
                    .iter()
                    .enumerate()
                    .map(|(j, &r)| d2[j] + d1[j] / r - a[j] * (lam2 / (r * r)))
                    .collect()
            }
        }
    }

    /// (-Laplacian)^{-1} of a translational mode (lam >= 1, so always invertible).
    pub fn inv_neg_laplacian(&self, a: &[Complex64]) -> Result<Vec<Complex64>, PacketError> {
        if self.packet.kind() != ProfileKind::Translational {
            return Err(PacketError::Unsupported);
        }
        let lam2 = (self.packet.lambda as f64).powi(2);
        Ok(self
            .line
            .apply(a, |k| Complex64::new(1.0 / (lam2 + k * k), 0.0)))
    }

    /// Fourth-order centered difference of the profiles in t.
    fn time_derivative(&self, t: f64, dt_fd: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let (p1, b1) = self.profiles_unchecked(t + dt_fd);
        let (m1, c1) = self.profiles_unchecked(t - dt_fd);
        let (p2, b2) = self.profiles_unchecked(t + 2.0 * dt_fd);
        let (m2, c2) = self.profiles_unchecked(t - 2.0 * dt_fd);
        let inv = 1.0 / (12.0 * dt_fd);
        let d = |a1: &[Complex64], a_1: &[Complex64], a2: &[Complex64], a_2: &[Complex64]| {
            (0..a1.len())
                .map(|j| ((a1[j] - a_1[j]) * 8.0 - (a2[j] - a_2[j])) * inv)
                .collect::<Vec<_>>()
        };
        (d(&p1, &m1, &p2, &m2), d(&b1, &c1, &b2, &c2))
    }

    /// Default finite-difference step for d_t: 1e-3 / lam^2.
    pub fn default_dt_fd(&self) -> f64 {
        1e-3 / (self.packet.lambda as f64).powi(2)
    }

    /// Error terms err_b = d_t b~z + f'' d_x psi~ - f d_x Lap psi~ and
    /// err_psi = d_t psi~ + f d_x b~z (with f'' -> f'' + 3f'/r in the
    /// axisymmetric case), with d_t by fourth-order centered differences.
    pub fn residual(&self, t: f64, dt_fd: f64) -> Result<Residual, PacketError> {
        self.check_resolution(t, RESIDUAL_FRACTION)?;
        let fields = self.evaluate(t)?;
        let (dpsi_t, dbz_t) = self.time_derivative(t, dt_fd);
        let (f, fpp) = self.f_and_fpp();
        let il = Complex64::new(0.0, self.packet.lambda as f64);
        let lap = self.laplacian(&fields.psi);
        let n = fields.psi.len();
        let mut err_b = vec![Complex64::new(0.0, 0.0); n];
        let mut err_psi = err_b.clone();
        for j in 0..n {
            err_b[j] = dbz_t[j] + il * fields.psi[j] * fpp[j] - il * lap[j] * f[j];
            err_psi[j] = dpsi_t[j] + il * fields.bz[j] * f[j];
        }
        let d_err_psi = self.line.deriv(&err_psi, 1);
        Ok(Residual {
            err_b_norm: fields.l2(&err_b),
            grad_err_psi_norm: fields.grad_l2(&err_psi, &d_err_psi),
            err_b,
            err_psi,
            fields,
        })
    }

    /// Hall lift u~z = -psi~, omega~ = -b~z and the in-plane velocity
    /// potential (-Lap)^{-1} omega~.
    pub fn hall_lift(&self, t: f64) -> Result<HallLift, PacketError> {
        let fields = self.evaluate(t)?;
        let uz: Vec<Complex64> = fields.psi.iter().map(|c| -c).collect();
        let omega: Vec<Complex64> = fields.bz.iter().map(|c| -c).collect();
        let phi = self.inv_neg_laplacian(&omega)?;
        let dphi = self.line.deriv(&phi, 1);
        let duz = self.line.deriv(&uz, 1);
        Ok(HallLift {
            uz_norm: fields.l2(&uz),
            u_xy_norm: fields.grad_l2(&phi, &dphi),
            grad_uz_norm: fields.grad_l2(&uz, &duz),
            omega_norm: fields.l2(&omega),
            uz,
            omega,
            phi,
            fields,
        })
    }

    /// Hall error terms of the lifted packet.
    pub fn hall_residuals(
        &self,
        t: f64,
        nu: f64,
        dt_fd: f64,
    ) -> Result<HallResiduals, PacketError> {
        let base = self.residual(t, dt_fd)?;
        let lift = self.hall_lift(t)?;
        let (dpsi_t, dbz_t) = self.time_derivative(t, dt_fd);
        let (f, fpp) = self.f_and_fpp();
        let il = Complex64::new(0.0, self.packet.lambda as f64);
        let psi = &base.fields.psi;
        let bz = &base.fields.bz;
        let lap_psi = self.laplacian(psi);
        let lap_bz = self.laplacian(bz);
        let lap_u = self.laplacian(&lift.uz);
        let lap_w = self.laplacian(&lift.omega);
        let n = psi.len();
        let zero = Complex64::new(0.0, 0.0);
        let (mut eu, mut ew, mut eb, mut ep) =
            (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
        let (mut r_u, mut r_w, mut gap) = (vec![zero; n], vec![zero; n], vec![zero; n]);
        for j in 0..n {
            let du_t = -dpsi_t[j];
            let dw_t = -dbz_t[j];
            eu[j] = du_t - il * f[j] * bz[j] - lap_u[j] * nu;
            ew[j] = dw_t + il * f[j] * lap_psi[j] - il * fpp[j] * psi[j] - lap_w[j] * nu;
            eb[j] =
                dbz_t[j] - il * f[j] * lap_psi[j] + il * fpp[j] * psi[j] - il * f[j] * lift.uz[j];
            ep[j] = dpsi_t[j] + il * f[j] * bz[j] - il * f[j] * lift.phi[j];
            r_u[j] = eu[j] - lap_psi[j] * nu;
            r_w[j] = ew[j] - lap_bz[j] * nu;
            gap[j] = eb[j] - (base.err_b[j] + il * f[j] * psi[j]);
        }
        let r_w_pot = self.inv_neg_laplacian(&r_w)?;
        let d_r_w_pot = self.line.deriv(&r_w_pot, 1);
        let d_ep = self.line.deriv(&ep, 1);
        let fields = &base.fields;
        Ok(HallResiduals {
            u_residual: fields.l2(&r_u),
            omega_residual: fields.grad_l2(&r_w_pot, &d_r_w_pot),
            errh_b: fields.l2(&eb),
            grad_errh_psi: fields.grad_l2(&ep, &d_ep),
            decomposition_gap: fields.l2(&gap),
            errh_u: eu,
            errh_omega: ew,
            errh_b_profile: eb,
            errh_psi: ep,
        })
    }
}

/// Packet error terms at one time.
#[derive(Debug, Clone)]
pub struct Residual {
    pub err_b_norm: f64,
    pub grad_err_psi_norm: f64,
    pub err_b: Vec<Complex64>,
    pub err_psi: Vec<Complex64>,
    pub fields: PacketProfiles,
}

/// Hall-lifted packet components.
#[derive(Debug, Clone)]
pub struct HallLift {
    /// ||u~z||.
    pub uz_norm: f64,
    /// ||grad_perp (-Lap)^{-1} omega~||.
    pub u_xy_norm: f64,
    pub grad_uz_norm: f64,
    pub omega_norm: f64,
    pub uz: Vec<Complex64>,
    pub omega: Vec<Complex64>,
    /// (-Lap)^{-1} omega~.
    pub phi: Vec<Complex64>,
    pub fields: PacketProfiles,
}

/// Norms of the Hall packet errors.
#[derive(Debug, Clone)]
pub struct HallResiduals {
    /// ||errh_u - nu Lap psi~|| (vanishes by construction).
    pub u_residual: f64,
    /// ||grad_perp (-Lap)^{-1} (errh_omega - nu Lap b~z)||.
    pub omega_residual: f64,
    pub errh_b: f64,
    pub grad_errh_psi: f64,
    /// ||errh_b - (err_b + f d_x psi~)||.
    pub decomposition_gap: f64,
    pub errh_u: Vec<Complex64>,
    pub errh_omega: Vec<Complex64>,
    pub errh_b_profile: Vec<Complex64>,
    pub errh_psi: Vec<Complex64>,
}

/// Fitted log-slope of a norm history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub label: String,
    /// d ln(norm)/dt.
    pub slope: f64,
    /// Half-width of the 95% interval from the fit residuals.
    pub ci: f64,
    /// Predicted slope interval from [c_f, C_f].
    pub bracket: (f64, f64),
}

/// Norm histories of a packet with fitted exponents.
#[derive(Debug, Clone, Serialize)]
pub struct DegenerationScan {
    pub lambda: u32,
    pub times: Vec<f64>,
    pub p_list: Vec<f64>,
    /// `lp[i][k]`: L^{p_i} norm of |b~| at `times[k]`.
    pub lp: Vec<Vec<f64>>,
    /// ||b~||_{H^1} at each time.
    pub h1: Vec<f64>,
    pub c_f: f64,
    pub big_c_f: f64,
    pub fits: Vec<ExponentFit>,
}

/// Ordinary least squares slope with a 95% half-width.
pub fn fit_slope(t: &[f64], v: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let vm = v.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|x| (x - tm).powi(2)).sum();
    let sxy: f64 = t.iter().zip(v).map(|(x, y)| (x - tm) * (y - vm)).sum();
    let slope = sxy / sxx;
    let resid: f64 = t
        .iter()
        .zip(v)
        .map(|(x, y)| (y - vm - slope * (x - tm)).powi(2))
        .sum();
    let ci = if t.len() > 2 {
        1.96 * (resid / (n - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    (slope, ci)
}

/// [`fit_slope`] restricted to the middle 60% of the time window.
pub fn fit_slope_middle(t: &[f64], v: &[f64]) -> (f64, f64) {
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let (a, b) = (t0 + 0.2 * (t1 - t0), t0 + 0.8 * (t1 - t0));
    let (ts, vs): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(v)
        .filter(|(x, _)| **x >= a - 1e-12 * (t1 - t0) && **x <= b + 1e-12 * (t1 - t0))
        .map(|(x, y)| (*x, *y))
        .unzip();
    if ts.len() < 3 {
        return fit_slope(t, v);
    }
    fit_slope(&ts, &vs)
}

/// H^s norm of the vector b~ from packet profiles (translational only).
pub fn packet_b_hs(line: &Line, prof: &PacketProfiles, s: f64) -> f64 {
    let (bx, by) = prof.bxy();
    let lam2 = (prof.lambda as f64).powi(2);
    let mut acc = 0.0;
    for comp in [&bx, &by, &prof.bz] {
        let c = line.forward(comp);
        for (cj, &k) in c.iter().zip(line.wavenumbers()) {
            acc += (1.0 + lam2 + k * k).powf(s) * cj.norm_sqr();
        }
    }
    (std::f64::consts::PI * line.length() * acc).sqrt()
}

/// L^p (and H^1) histories of |b~| at the given times with fitted exponents
/// (least squares over the middle 60% of the resolved window).
///
/// The bracket for p is [c_f, C_f] (1/2 - 1/p) lam as a growth rate, with
/// C_f = f'(y0) and c_f the minimum of f' over the visited y-range.
pub fn degeneration_scan(
    sampler: &PacketSampler<'_>,
    times: &[f64],
    p_list: &[f64],
) -> Result<DegenerationScan, PacketError> {
    let packet = sampler.packet();
    if packet.kind() != ProfileKind::Translational {
        return Err(PacketError::Unsupported);
    }
    let mut ok_times = Vec::new();
    let mut lp = vec![Vec::new(); p_list.len()];
    let mut h1 = Vec::new();
    for &t in times {
        let prof = match sampler.evaluate(t) {
            Ok(p) => p,
            Err(PacketError::UnderResolved { .. }) | Err(PacketError::Horizon(_)) => continue,
            Err(e) => return Err(e),
        };
        ok_times.push(t);
        for (i, &p) in p_list.iter().enumerate() {
            lp[i].push(prof.b_lp(p, 64));
        }
        h1.push(packet_b_hs(sampler.line(), &prof, 1.0));
    }
    if ok_times.len() < 4 {
        return Err(PacketError::InsufficientSamples(ok_times.len()));
    }
    let lam = packet.lambda() as f64;
    let t_last = *ok_times.last().expect("nonempty");
    let (c_f, big_c_f) = packet.growth_constants(t_last)?;
    let mut fits = Vec::new();
    for (i, &p) in p_list.iter().enumerate() {
        let logs: Vec<f64> = lp[i].iter().map(|v| v.ln()).collect();
        let (slope, ci) = fit_slope_middle(&ok_times, &logs);
        let q = 0.5 - if p.is_infinite() { 0.0 } else { 1.0 / p };
        let (a, b) = (c_f * q * lam, big_c_f * q * lam);
        fits.push(ExponentFit {
            label: format!(
                "L{}",
                if p.is_infinite() {
                    "inf".to_string()
                } else {
                    p.to_string()
                }
            ),
            slope,
            ci,
            bracket: (a.min(b), a.max(b)),
        });
    }
    let logs: Vec<f64> = h1.iter().map(|v| v.ln()).collect();
    let (slope, ci) = fit_slope_middle(&ok_times, &logs);
    fits.push(ExponentFit {
        label: "H1".into(),
        slope,
        ci,
        bracket: (c_f * lam, big_c_f * lam),
    });
    Ok(DegenerationScan {
        lambda: packet.lambda(),
        times: ok_times,
        p_list: p_list.to_vec(),
        lp,
        h1,
        c_f,
        big_c_f,
        fits,
    })
}

/// Axisymmetric packet around B = f(r) d_theta with radial amplitude g0(r).
pub fn build_packet_axi(
    profile_axi: Arc<BackgroundProfile>,
    lambda: u32,
    g0: AmplitudeSpec,
) -> Result<WavePacket, PacketError> {
    if profile_axi.kind() != ProfileKind::Axisymmetric {
        return Err(PacketError::Unsupported);
    }
    WavePacket::new(profile_axi, lambda, g0)
}

/// Packet fields sampled on a solver grid.
#[derive(Debug, Clone)]
pub struct PacketFields {
    pub bz: ScalarField,
    pub psi: ScalarField,
    pub bx: ScalarField,
    pub by: ScalarField,
}

/// Spectral column representation (b~z, psi~) of a translational packet on a grid.
pub fn packet_spectra(
    packet: &WavePacket,
    prof: &PacketProfiles,
    grid: &Arc<Grid>,
) -> Result<(Spectrum, Spectrum), PacketError> {
    let m = packet.grid_column(grid)?;
    if prof.psi.len() != grid.ny() {
        return Err(SpectralError::GridMismatch.into());
    }
    let mut out = Vec::with_capacity(2);
    for a in [&prof.bz, &prof.psi] {
        let mut col = a.clone();
        grid.fft_y(&mut col);
        let s = 0.5 / grid.ny() as f64;
        let mut spec = Spectrum::zeros(grid);
        for (dst, c) in spec.col_mut(m).iter_mut().zip(&col) {
            *dst = c * s;
        }
        // kill the y-Nyquist mode for consistency with odd derivatives
        spec.col_mut(m)[grid.ny() / 2] = Complex64::new(0.0, 0.0);
        out.push(spec);
    }
    let psi = out.pop().expect("two spectra");
    let bz = out.pop().expect("two spectra");
    Ok((bz, psi))
}

/// Packet fields (b~z, psi~, b~x, b~y) on a solver grid.
pub fn evaluate_on_grid(
    packet: &WavePacket,
    t: f64,
    grid: &Arc<Grid>,
) -> Result<PacketFields, PacketError> {
    let line = WavePacket::grid_line(grid)?;
    let prof = packet.sampler(&line).evaluate(t)?;
    let (bz, psi) = packet_spectra(packet, &prof, grid)?;
    let bx = psi.deriv(crate::spectral::Axis::Y, 1).to_field();
    let by = psi
        .deriv(crate::spectral::Axis::X, 1)
        .scale(-1.0)
        .to_field();
    Ok(PacketFields {
        bz: bz.to_field(),
        psi: psi.to_field(),
        bx,
        by,
    })
}

/// JSON sidecar of a packet snapshot.
#[derive(Debug, Clone, Serialize)]
pub struct SnapshotMeta {
    pub lambda: u32,
    pub t: f64,
    pub profile: String,
    pub y0: f64,
    pub y1: f64,
    pub c0: f64,
    pub normalization: f64,
    pub nx: usize,
    pub ny: usize,
}

/// Writes a snapshot CSV with columns x, y, bz, psi, bx, by.
pub fn write_snapshot<W: Write>(fields: &PacketFields, mut w: W) -> std::io::Result<()> {
    let g = fields.bz.grid().clone();
    writeln!(w, "x,y,bz,psi,bx,by")?;
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                g.x(i),
                g.y(j),
                fields.bz.at(i, j),
                fields.psi.at(i, j),
                fields.bx.at(i, j),
                fields.by.at(i, j)
            )?;
        }
    }
    Ok(())
}
