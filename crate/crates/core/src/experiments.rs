//! Experiment orchestration: configuration, runs, CSV tables and verdicts.
//!
//! Configurations are sectioned key=value files:
//!
//! ```text
//! [run]      experiment, seed, output_dir
//! [grid]     nx, ny, lx, ly                (lengths accept "2pi")
//! [profile]  kind, f, y1, slope, offset, r0, f_alpha, c0
//! [packet]   lambdas, lambda_t_end, line_n, samples, u0, amplitude
//! [solver]   t_end, dt, safety, every, s_list, p_list, nu, eta_diss,
//!            alpha, beta, mode, system
//! [fradiss]  epsilon, s0
//! [nonlinear] epsilon, s, n, s0
//! [rays]     t_end, dt
//! [tolerances] verdict brackets (see `Tolerances`)
//! ```
//!
//! Keys before the first section header may be given bare when the name is
//! unique (e.g. `experiment = norm_growth`, `lambdas = [8, 16]`). Lists are
//! comma separated, optionally bracketed. Unset keys take per-experiment
//! defaults.
//!
//! Each experiment emits one table per lambda (`<experiment>_<lambda>.csv`).
//! Verdicts are computed from those tables alone, so re-reading the CSVs of
//! a run reproduces its verdicts exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::background::{
    make_profile, AffineField, BackgroundError, BackgroundProfile, FSpec, ProfileKind,
};
use crate::rays::{conserved_report, explicit_ray_linear, integrate_ray, RayError};
use crate::solver::{
    self, Background, BackgroundMode, DiagnosticsRecord, Params, RunConfig, SolverError,
    SolverState, StopReason, TimeStep, Variant,
};
use crate::spectral::{Grid, SpectralError};
use crate::wavepacket::{
    degeneration_scan, fit_slope_middle, AmplitudeMode, AmplitudeSpec, ExponentFit, PacketError,
    WavePacket, NORM_FRACTION,
};

/// Configuration errors.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: key `{key}`: {reason}")]
    Parse {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("invalid `{key}`: {reason}")]
    Validation { key: String, reason: String },
}

impl ConfigError {
    fn parse(line: usize, key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Parse {
            line,
            key: key.to_string(),
            reason: reason.into(),
        }
    }
    fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Validation {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

/// Runtime errors of an experiment.
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error(transparent)]
    Background(#[from] BackgroundError),
    #[error(transparent)]
    Ray(#[from] RayError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("table {name}: {reason}")]
    Table { name: String, reason: String },
}

/// The available experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Rays,
    PacketValidate,
    NormGrowth,
    Degeneration,
    Fradiss,
    HallGrowth,
    NonlinearDemo,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Rays,
        ExperimentKind::PacketValidate,
        ExperimentKind::NormGrowth,
        ExperimentKind::Degeneration,
        ExperimentKind::Fradiss,
        ExperimentKind::HallGrowth,
        ExperimentKind::NonlinearDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Rays => "rays",
            ExperimentKind::PacketValidate => "packet_validate",
            ExperimentKind::NormGrowth => "norm_growth",
            ExperimentKind::Degeneration => "degeneration",
            ExperimentKind::Fradiss => "fradiss",
            ExperimentKind::HallGrowth => "hall_growth",
            ExperimentKind::NonlinearDemo => "nonlinear_demo",
        }
    }

    fn uses_solver(self) -> bool {
        matches!(
            self,
            ExperimentKind::NormGrowth
                | ExperimentKind::Fradiss
                | ExperimentKind::HallGrowth
                | ExperimentKind::NonlinearDemo
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                ConfigError::invalid(
                    "experiment",
                    format!("unknown `{s}`; expected one of {}", names.join(", ")),
                )
            })
    }
}

/// Box and resolution of the solver grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

/// Background profile choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "f")]
pub enum ProfileChoice {
    Sin,
    Linear { slope: f64, offset: f64 },
    AxiRing { r0: f64 },
    Admissible { f_alpha: f64, c0: f64 },
}

/// Background choice with its window request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileConfig {
    pub kind: ProfileKind,
    pub f: ProfileChoice,
    pub y1: f64,
}

/// Which background modes a fractional run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeChoice {
    Frozen,
    Evolving,
    Both,
}

/// Equation family of a fractional run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemChoice {
    Emhd,
    Hall,
}

/// Initial fluid data of Hall runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FluidStart {
    /// u(0) = 0.
    Zero,
    /// u(0) = packet lift (u~z = -psi~, omega~ = -b~z).
    Packet,
}

/// Verdict brackets. All are artifact choices: the underlying statements
/// carry implicit constants only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Lower bound of the normalized testing functional.
    pub tf_threshold: f64,
    /// H^1 rate / lam must lie in [h1_rate_lo c_f, h1_rate_hi C_f].
    pub h1_rate_lo: f64,
    pub h1_rate_hi: f64,
    /// Exponent ratio between 2 lam and lam.
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    /// max/min over lam of sup_t lam ||u(t)||.
    pub u_ratio_max: f64,
    /// Relative widening of the L^1 degeneration bracket.
    pub degeneration_rel: f64,
    /// |L^2 slope| / lam.
    pub l2_slope_max: f64,
    /// ||grad err_psi|| / ||b~||.
    pub err_psi_max: f64,
    /// max/min over lam of ||err_b|| on the shared time ladder.
    pub err_b_ratio_max: f64,
    /// Ray oracle relative error.
    pub ray_error_max: f64,
    /// Conserved-quantity drift per unit time.
    pub drift_max: f64,
    /// Energy identity gap / ||b||^2.
    pub energy_gap_max: f64,
    /// Testing-functional identity gap / ||b||.
    pub tf_identity_max: f64,
    /// Testing functional at t_* relative to its initial value.
    pub fradiss_tf_fraction: f64,
    /// Factor on the exponent of the H^{s0} growth bound lam^{eps c_f s0}.
    pub growth_margin: f64,
}

impl Default for Tolerances {
    fn default() -> Tolerances {
        Tolerances {
            tf_threshold: 0.5,
            h1_rate_lo: 0.7,
            h1_rate_hi: 1.3,
            ratio_lo: 1.6,
            ratio_hi: 2.4,
            u_ratio_max: 1.5,
            degeneration_rel: 0.25,
            l2_slope_max: 0.05,
            err_psi_max: 1e-6,
            err_b_ratio_max: 1.5,
            ray_error_max: 1e-8,
            drift_max: 1e-9,
            energy_gap_max: 1e-5,
            tf_identity_max: 1e-5,
            fradiss_tf_fraction: 0.5,
            growth_margin: 0.7,
        }
    }
}

/// A validated experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub grid: GridSpec,
    pub profile: ProfileConfig,
    pub lambdas: Vec<u32>,
    /// End of the run in units of lam t.
    pub lambda_t_end: f64,
    /// Fixed end time overriding lambda_t_end / lam.
    pub t_end: Option<f64>,
    /// Points of the packet line.
    pub line_n: usize,
    /// Points of the lam t ladder (line experiments).
    pub samples: usize,
    pub u0: FluidStart,
    pub amplitude: AmplitudeMode,
    pub dt: TimeStep,
    pub safety: f64,
    pub every: usize,
    pub s_list: Vec<f64>,
    pub p_list: Vec<f64>,
    pub nu: Vec<f64>,
    pub eta_diss: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mode: ModeChoice,
    pub system: SystemChoice,
    /// t_* = ln(lam^epsilon)/lam for fractional runs.
    pub fradiss_epsilon: f64,
    pub fradiss_s0: f64,
    /// Perturbation size epsilon lam^{-s-n} of the nonlinear demo.
    pub nl_epsilon: f64,
    pub nl_s: f64,
    pub nl_n: f64,
    pub nl_s0: f64,
    pub ray_t_end: f64,
    pub ray_dt: f64,
    pub tolerances: Tolerances,
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("run", &["experiment", "seed", "output_dir"]),
    ("grid", &["nx", "ny", "lx", "ly"]),
    (
        "profile",
        &["kind", "f", "y1", "slope", "offset", "r0", "f_alpha", "c0"],
    ),
    (
        "packet",
        &[
            "lambdas",
            "lambda_t_end",
            "line_n",
            "samples",
            "u0",
            "amplitude",
        ],
    ),
    (
        "solver",
        &[
            "t_end", "dt", "safety", "every", "s_list", "p_list", "nu", "eta_diss", "alpha",
            "beta", "mode", "system",
        ],
    ),
    ("fradiss", &["epsilon", "s0"]),
    ("nonlinear", &["epsilon", "s", "n", "s0"]),
    ("rays", &["t_end", "dt"]),
    (
        "tolerances",
        &[
            "tf_threshold",
            "h1_rate_lo",
            "h1_rate_hi",
            "ratio_lo",
            "ratio_hi",
            "u_ratio_max",
            "degeneration_rel",
            "l2_slope_max",
            "err_psi_max",
            "err_b_ratio_max",
            "ray_error_max",
            "drift_max",
            "energy_gap_max",
            "tf_identity_max",
            "fradiss_tf_fraction",
            "growth_margin",
        ],
    ),
];

/// Raw key=value entries with their line numbers.
struct RawConfig {
    entries: BTreeMap<(String, String), (usize, String)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<RawConfig, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') && !line.contains('=') {
                let name = line[1..line.len() - 1].trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(ConfigError::parse(line_no, name, "unknown section"));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::parse(line_no, line, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = match &section {
                Some(s) => {
                    let keys = SCHEMA.iter().find(|(n, _)| n == s).expect("known").1;
                    if !keys.contains(&key) {
                        return Err(ConfigError::parse(
                            line_no,
                            key,
                            format!("unknown key in [{s}]"),
                        ));
                    }
                    s.clone()
                }
                None => {
                    let owners: Vec<&str> = SCHEMA
                        .iter()
                        .filter(|(_, keys)| keys.contains(&key))
                        .map(|(s, _)| *s)
                        .collect();
                    match owners.as_slice() {
                        [one] => one.to_string(),
                        [] => return Err(ConfigError::parse(line_no, key, "unknown key")),
                        many => {
                            return Err(ConfigError::parse(
                                line_no,
                                key,
                                format!("ambiguous outside a section (in {})", many.join(", ")),
                            ))
                        }
                    }
                }
            };
            if entries
                .insert((sec.clone(), key.to_string()), (line_no, value.to_string()))
                .is_some()
            {
                return Err(ConfigError::parse(line_no, key, "duplicate key"));
            }
        }
        Ok(RawConfig { entries })
    }

    fn get<T>(
        &self,
        sec: &str,
        key: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Option<T>, ConfigError> {
        match self.entries.get(&(sec.to_string(), key.to_string())) {
            None => Ok(None),
            Some((line, v)) => parse(v)
                .map(Some)
                .map_err(|r| ConfigError::parse(*line, key, r)),
        }
    }
}

fn parse_real(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = if let Some(prefix) = s.strip_suffix("pi") {
        let p = prefix.trim().trim_end_matches('*').trim();
        let m = if p.is_empty() {
            1.0
        } else {
            p.parse::<f64>().map_err(|e| format!("`{s}`: {e}"))?
        };
        m * std::f64::consts::PI
    } else {
        s.parse::<f64>().map_err(|e| format!("`{s}`: {e}"))?
    };
    if v.is_nan() {
        return Err(format!("`{s}` is not a number"));
    }
    Ok(v)
}

fn parse_uint(s: &str) -> Result<u64, String> {
    s.trim().parse::<u64>().map_err(|e| format!("`{s}`: {e}"))
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    let s = s.trim();
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .unwrap_or(s);
    inner
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|p| !p.is_empty())
        .map(item)
        .collect()
}

fn parse_choice<T: Copy>(s: &str, options: &[(&str, T)]) -> Result<T, String> {
    options
        .iter()
        .find(|(n, _)| *n == s.trim())
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            format!("`{s}`; expected one of {}", names.join(", "))
        })
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

/// Reads a configuration for a given experiment. The file may omit
/// `experiment`; if it names one, it must agree with `kind`.
pub fn parse_config_as(path: &Path, kind: ExperimentKind) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_inner(&text, Some(kind))
}

/// Parses and validates configuration text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_inner(text, None)
}

fn parse_config_inner(
    text: &str,
    expected: Option<ExperimentKind>,
) -> Result<ExperimentConfig, ConfigError> {
    let raw = RawConfig::parse(text)?;
    let named = raw
        .get("run", "experiment", |s| Ok(s.trim().to_string()))?
        .map(|n| n.parse::<ExperimentKind>())
        .transpose()?;
    let kind = match (named, expected) {
        (Some(a), Some(b)) if a != b => {
            return Err(ConfigError::invalid(
                "experiment",
                format!("config names `{a}` but `{b}` was requested"),
            ))
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => return Err(ConfigError::invalid("experiment", "missing")),
    };
    let mut c = ExperimentConfig::defaults(kind);

    macro_rules! set {
        ($field:expr, $sec:literal, $key:literal, $parse:expr) => {
            if let Some(v) = raw.get($sec, $key, $parse)? {
                $field = v;
            }
        };
    }
    set!(c.seed, "run", "seed", parse_uint);
    if let Some(p) = raw.get("run", "output_dir", |s| Ok(PathBuf::from(s.trim())))? {
        c.output_dir = Some(p);
    }
    let uint = |s: &str| parse_uint(s).map(|v| v as usize);
    set!(c.grid.nx, "grid", "nx", uint);
    set!(c.grid.ny, "grid", "ny", uint);
    set!(c.grid.lx, "grid", "lx", parse_real);
    set!(c.grid.ly, "grid", "ly", parse_real);

    set!(c.profile.kind, "profile", "kind", |s| parse_choice(
        s,
        &[
            ("translational", ProfileKind::Translational),
            ("axisymmetric", ProfileKind::Axisymmetric)
        ]
    ));
    set!(c.profile.y1, "profile", "y1", parse_real);
    let f_name = raw.get("profile", "f", |s| {
        parse_choice(
            s,
            &[
                ("sin", 0),
                ("linear", 1),
                ("axi_ring", 2),
                ("admissible", 3),
            ],
        )
    })?;
    let get_real = |key: &'static str, default: f64| -> Result<f64, ConfigError> {
        Ok(raw.get("profile", key, parse_real)?.unwrap_or(default))
    };
    if let Some(f) = f_name {
        c.profile.f = match f {
            0 => ProfileChoice::Sin,
            1 => ProfileChoice::Linear {
                slope: get_real("slope", 1.0)?,
                offset: get_real("offset", 0.0)?,
            },
            2 => ProfileChoice::AxiRing {
                r0: get_real("r0", 1.0)?,
            },
            _ => ProfileChoice::Admissible {
                f_alpha: get_real("f_alpha", 0.25)?,
                c0: get_real("c0", 1.0)?,
            },
        };
        if f_name == Some(2) && raw.get("profile", "kind", |s| Ok(s.to_string()))?.is_none() {
            c.profile.kind = ProfileKind::Axisymmetric;
        }
    }

    let lam = |s: &str| -> Result<u32, String> {
        let v = parse_uint(s)?;
        u32::try_from(v).map_err(|_| format!("`{s}` too large"))
    };
    set!(c.lambdas, "packet", "lambdas", |s| parse_list(s, lam));
    set!(c.lambda_t_end, "packet", "lambda_t_end", parse_real);
    set!(c.line_n, "packet", "line_n", uint);
    set!(c.samples, "packet", "samples", uint);
    set!(c.u0, "packet", "u0", |s| parse_choice(
        s,
        &[("zero", FluidStart::Zero), ("packet", FluidStart::Packet)]
    ));
    set!(c.amplitude, "packet", "amplitude", |s| parse_choice(
        s,
        &[
            ("x_independent", AmplitudeMode::XIndependent),
            ("product", AmplitudeMode::Product)
        ]
    ));

    if let Some(t) = raw.get("solver", "t_end", |s| {
        if s.trim() == "auto" {
            Ok(None)
        } else {
            parse_real(s).map(Some)
        }
    })? {
        c.t_end = t;
    }
    set!(c.dt, "solver", "dt", |s| match s.trim() {
        "auto" => Ok(TimeStep::Auto),
        "auto_explicit" => Ok(TimeStep::AutoExplicit),
        other => parse_real(other).map(TimeStep::Fixed),
    });
    set!(c.safety, "solver", "safety", parse_real);
    set!(c.every, "solver", "every", uint);
    set!(c.s_list, "solver", "s_list", |s| parse_list(s, parse_real));
    set!(c.p_list, "solver", "p_list", |s| parse_list(s, parse_real));
    set!(c.nu, "solver", "nu", |s| parse_list(s, parse_real));
    set!(c.eta_diss, "solver", "eta_diss", parse_real);
    set!(c.alpha, "solver", "alpha", parse_real);
    set!(c.beta, "solver", "beta", parse_real);
    set!(c.mode, "solver", "mode", |s| parse_choice(
        s,
        &[
            ("frozen", ModeChoice::Frozen),
            ("evolving", ModeChoice::Evolving),
            ("both", ModeChoice::Both)
        ]
    ));
    set!(c.system, "solver", "system", |s| parse_choice(
        s,
        &[("emhd", SystemChoice::Emhd), ("hall", SystemChoice::Hall)]
    ));
    set!(c.fradiss_epsilon, "fradiss", "epsilon", parse_real);
    set!(c.fradiss_s0, "fradiss", "s0", parse_real);
    set!(c.nl_epsilon, "nonlinear", "epsilon", parse_real);
    set!(c.nl_s, "nonlinear", "s", parse_real);
    set!(c.nl_n, "nonlinear", "n", parse_real);
    set!(c.nl_s0, "nonlinear", "s0", parse_real);
    set!(c.ray_t_end, "rays", "t_end", parse_real);
    set!(c.ray_dt, "rays", "dt", parse_real);

    let t = &mut c.tolerances;
    set!(t.tf_threshold, "tolerances", "tf_threshold", parse_real);
    set!(t.h1_rate_lo, "tolerances", "h1_rate_lo", parse_real);
    set!(t.h1_rate_hi, "tolerances", "h1_rate_hi", parse_real);
    set!(t.ratio_lo, "tolerances", "ratio_lo", parse_real);
    set!(t.ratio_hi, "tolerances", "ratio_hi", parse_real);
    set!(t.u_ratio_max, "tolerances", "u_ratio_max", parse_real);
    set!(
        t.degeneration_rel,
        "tolerances",
        "degeneration_rel",
        parse_real
    );
    set!(t.l2_slope_max, "tolerances", "l2_slope_max", parse_real);
    set!(t.err_psi_max, "tolerances", "err_psi_max", parse_real);
    set!(
        t.err_b_ratio_max,
        "tolerances",
        "err_b_ratio_max",
        parse_real
    );
    set!(t.ray_error_max, "tolerances", "ray_error_max", parse_real);
    set!(t.drift_max, "tolerances", "drift_max", parse_real);
    set!(t.energy_gap_max, "tolerances", "energy_gap_max", parse_real);
    set!(
        t.tf_identity_max,
        "tolerances",
        "tf_identity_max",
        parse_real
    );
    set!(
        t.fradiss_tf_fraction,
        "tolerances",
        "fradiss_tf_fraction",
        parse_real
    );
    set!(t.growth_margin, "tolerances", "growth_margin", parse_real);

    c.validate()?;
    Ok(c)
}

impl ExperimentConfig {
    /// Defaults of an experiment (before validation).
    pub fn defaults(kind: ExperimentKind) -> ExperimentConfig {
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut c = ExperimentConfig {
            experiment: kind,
            seed: 0,
            output_dir: None,
            grid: GridSpec {
                nx: 128,
                ny: 8192,
                lx: two_pi,
                ly: two_pi,
            },
            profile: ProfileConfig {
                kind: ProfileKind::Translational,
                f: ProfileChoice::Sin,
                y1: 1.0,
            },
            lambdas: vec![8, 16, 32],
            lambda_t_end: 2.0,
            t_end: None,
            line_n: 16384,
            samples: 31,
            u0: FluidStart::Zero,
            amplitude: AmplitudeMode::XIndependent,
            dt: TimeStep::Auto,
            safety: 0.5,
            every: 20,
            s_list: vec![1.0, 2.0],
            p_list: vec![],
            nu: vec![0.0],
            eta_diss: 0.0,
            alpha: 0.0,
            beta: 0.0,
            mode: ModeChoice::Frozen,
            system: SystemChoice::Emhd,
            fradiss_epsilon: 0.3,
            fradiss_s0: 1.0,
            nl_epsilon: 0.01,
            nl_s: 1.0,
            nl_n: 1.0,
            nl_s0: 1.0,
            ray_t_end: 1.0,
            ray_dt: 1e-4,
            tolerances: Tolerances::default(),
        };
        match kind {
            ExperimentKind::Rays => c.lambdas = vec![2, 4, 8],
            ExperimentKind::PacketValidate => {
                c.lambda_t_end = 3.0;
                c.samples = 7;
            }
            ExperimentKind::Degeneration => {
                c.lambda_t_end = 3.0;
                c.samples = 31;
                c.p_list = vec![1.0, 2.0, f64::INFINITY];
            }
            ExperimentKind::NormGrowth => {}
            ExperimentKind::HallGrowth => {
                c.nu = vec![0.0, 0.01];
                c.dt = TimeStep::AutoExplicit;
                c.s_list = vec![1.0];
            }
            ExperimentKind::Fradiss => {
                c.lambdas = vec![16, 32];
                c.eta_diss = 0.1;
                c.alpha = 0.25;
                c.mode = ModeChoice::Both;
                c.dt = TimeStep::AutoExplicit;
                c.s_list = vec![1.0];
            }
            ExperimentKind::NonlinearDemo => {
                c.grid.nx = 64;
                c.grid.ny = 1024;
                c.lambdas = vec![4, 8];
                c.lambda_t_end = 1.5;
                c.every = 10;
                c.s_list = vec![1.0];
            }
        }
        c
    }

    /// Checks ranges and the resolution of every packet at t = 0.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn inv(key: &str, reason: impl Into<String>) -> ConfigError {
            ConfigError::invalid(key, reason)
        }
        if self.lambdas.is_empty() {
            return Err(inv("lambdas", "nonempty"));
        }
        if self.lambdas.contains(&0) {
            return Err(inv("lambdas", "entries must be positive"));
        }
        let g = &self.grid;
        if g.nx < 8 || g.ny < 8 || g.nx % 2 != 0 || g.ny % 2 != 0 {
            return Err(inv("grid", "nx and ny must be even and >= 8"));
        }
        if !(g.lx > 0.0 && g.ly > 0.0 && g.lx.is_finite() && g.ly.is_finite()) {
            return Err(inv("grid", "lx and ly must be positive"));
        }
        if !(self.lambda_t_end > 0.0) || !self.lambda_t_end.is_finite() {
            return Err(inv("lambda_t_end", "must be positive"));
        }
        if let Some(t) = self.t_end {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(inv("t_end", "must be >= 0"));
            }
        }
        if let TimeStep::Fixed(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(inv("dt", "must be positive, auto or auto_explicit"));
            }
        }
        if !(self.safety > 0.0) {
            return Err(inv("safety", "must be positive"));
        }
        if self.every == 0 {
            return Err(inv("every", "must be >= 1"));
        }
        if self.samples < 2 {
            return Err(inv("samples", "must be >= 2"));
        }
        if self.nu.is_empty() || self.nu.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(inv("nu", "nonempty list of values >= 0"));
        }
        if !(self.eta_diss >= 0.0) {
            return Err(inv("eta_diss", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(inv("alpha", "must lie in [0, 1]"));
        }
        if !(0.0..0.5).contains(&self.beta) {
            return Err(inv("beta", "must lie in [0, 1/2)"));
        }
        if self.p_list.iter().any(|p| !(*p >= 1.0)) {
            return Err(inv("p_list", "entries must be >= 1"));
        }
        if !(self.ray_dt > 0.0) || !(self.ray_t_end >= 0.0) {
            return Err(inv("rays", "dt must be positive and t_end >= 0"));
        }
        let needs_h = |s: f64, key: &str| -> Result<(), ConfigError> {
            if self.s_list.contains(&s) {
                Ok(())
            } else {
                Err(inv(
                    "s_list",
                    format!("must contain {s} for the {key} diagnostics"),
                ))
            }
        };
        match self.experiment {
            ExperimentKind::NormGrowth | ExperimentKind::HallGrowth => needs_h(1.0, "H^1")?,
            ExperimentKind::Fradiss => {
                needs_h(self.fradiss_s0, "H^{s0}")?;
                if !(self.fradiss_epsilon > 0.0) {
                    return Err(inv("fradiss.epsilon", "must be positive"));
                }
            }
            ExperimentKind::NonlinearDemo => {
                needs_h(self.nl_s0, "H^{s0}")?;
                if !(self.nl_epsilon > 0.0) {
                    return Err(inv("nonlinear.epsilon", "must be positive"));
                }
            }
            _ => {}
        }
        if self.experiment == ExperimentKind::Rays {
            return Ok(());
        }
        let profile = build_profile(&self.profile).map_err(|e| inv("profile", e.to_string()))?;
        let solver_run = self.experiment.uses_solver();
        if solver_run || self.experiment == ExperimentKind::Degeneration {
            if profile.kind() != ProfileKind::Translational {
                return Err(inv(
                    "profile.kind",
                    "this experiment needs a translational profile",
                ));
            }
        }
        if solver_run {
            if profile.trig().is_none() {
                return Err(inv("profile.f", "the solver needs a 2 pi periodic profile"));
            }
            let two_pi = 2.0 * std::f64::consts::PI;
            if (g.lx - two_pi).abs() > 1e-12 || (g.ly - two_pi).abs() > 1e-12 {
                return Err(inv("grid", "packet runs need lx = ly = 2 pi"));
            }
        }
        let grid = if solver_run {
            Some(Grid::new(g.nx, g.ny, g.lx, g.ly).map_err(|e| inv("grid", e.to_string()))?)
        } else {
            None
        };
        for &lam in &self.lambdas {
            let packet = build_packet(self, &profile, lam)
                .map_err(|e| inv("lambdas", format!("lambda = {lam}: {e}")))?;
            let line = match &grid {
                Some(grid) => {
                    packet
                        .grid_column(grid)
                        .map_err(|e| inv("lambdas", format!("lambda = {lam}: {e}")))?;
                    WavePacket::grid_line(grid)
                }
                None => packet.packet_line(self.line_n),
            }
            .map_err(|e| inv("line_n", e.to_string()))?;
            packet
                .sampler(&line)
                .check_resolution(0.0, NORM_FRACTION)
                .map_err(|e| {
                    inv(
                        "lambdas",
                        format!("lambda = {lam} unresolved at t = 0: {e}"),
                    )
                })?;
        }
        Ok(())
    }

    fn t_end_for(&self, lam: u32) -> f64 {
        self.t_end.unwrap_or(self.lambda_t_end / lam as f64)
    }

    fn dt_label(&self) -> String {
        match self.dt {
            TimeStep::Auto => format!("auto (cfl_dt, safety {})", self.safety),
            TimeStep::AutoExplicit => {
                format!("auto_explicit (explicit_dt, safety {})", self.safety)
            }
            TimeStep::Fixed(dt) => format!("{dt}"),
        }
    }
}

/// Builds the configured background profile.
pub fn build_profile(p: &ProfileConfig) -> Result<Arc<BackgroundProfile>, BackgroundError> {
    let spec = match p.f {
        ProfileChoice::Sin => FSpec::Sin,
        ProfileChoice::Linear { slope, offset } => FSpec::Linear { slope, offset },
        ProfileChoice::AxiRing { r0 } => FSpec::AxiRing { r0 },
        ProfileChoice::Admissible { f_alpha, c0 } => FSpec::admissible(f_alpha, c0)?,
    };
    Ok(Arc::new(make_profile(p.kind, spec, p.y1)?))
}

fn build_packet(
    cfg: &ExperimentConfig,
    profile: &Arc<BackgroundProfile>,
    lambda: u32,
) -> Result<WavePacket, PacketError> {
    let amp = AmplitudeSpec::default_for(profile).with_mode(cfg.amplitude);
    WavePacket::new(profile.clone(), lambda, amp)
}

/// A numeric table with scalar metadata. Missing entries are NaN and are
/// written as empty CSV fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub meta: Vec<(String, f64)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Version tag in every CSV header.
pub const TABLE_VERSION: u32 = 1;

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

impl Table {
    pub fn new(title: &str, columns: Vec<String>) -> Table {
        Table {
            title: title.to_string(),
            meta: Vec::new(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, v: f64) {
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = v,
            None => self.meta.push((key.to_string(), v)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<f64> {
        self.meta.iter().find(|(k, _)| k == key).map(|e| e.1)
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Column values (None if the column is absent).
    pub fn col(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.col_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Rows whose `name` column equals `value`.
    pub fn select(&self, name: &str, value: f64) -> Table {
        let mut t = self.clone();
        if let Some(i) = self.col_index(name) {
            t.rows.retain(|r| r[i] == value);
        }
        t
    }

    /// Distinct values of a column in first-seen order.
    pub fn distinct(&self, name: &str) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for v in self.col(name).unwrap_or_default() {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# degenwave {} v{TABLE_VERSION}", self.title)?;
        for (k, v) in &self.meta {
            writeln!(w, "# {k} = {v:?}")?;
        }
        writeln!(w, "{}", self.columns.join(","))?;
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|&v| fmt_value(v)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Table, String> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or("empty table")?
            .map_err(|e| e.to_string())?;
        let rest = first
            .strip_prefix("# degenwave ")
            .ok_or("missing version header")?;
        let (title, version) = rest.rsplit_once(" v").ok_or("missing version")?;
        if version.trim() != TABLE_VERSION.to_string() {
            return Err(format!("unsupported table version {version}"));
        }
        let mut t = Table::new(title, Vec::new());
        let mut header_seen = false;
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if !header_seen {
                if let Some(m) = line.strip_prefix("# ") {
                    let (k, v) = m
                        .split_once(" = ")
                        .ok_or(format!("bad meta line {}", i + 2))?;
                    let v: f64 = v.trim().parse().map_err(|e| format!("meta {k}: {e}"))?;
                    t.meta.push((k.to_string(), v));
                    continue;
                }
                t.columns = line.split(',').map(String::from).collect();
                header_seen = true;
                continue;
            }
            let row: Result<Vec<f64>, String> = line
                .split(',')
                .map(|c| {
                    if c.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        c.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2))
                    }
                })
                .collect();
            let row = row?;
            if row.len() != t.columns.len() {
                return Err(format!(
                    "line {}: expected {} fields",
                    i + 2,
                    t.columns.len()
                ));
            }
            t.rows.push(row);
        }
        if !header_seen {
            return Err("missing column header".into());
        }
        Ok(t)
    }
}

/// One pass/fail check against a bracket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub scope: String,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub pass: bool,
}

impl Verdict {
    fn new(name: &str, scope: String, value: f64, lo: Option<f64>, hi: Option<f64>) -> Verdict {
        let pass =
            value.is_finite() && lo.map_or(true, |l| value >= l) && hi.map_or(true, |h| value <= h);
        Verdict {
            name: name.to_string(),
            scope,
            value,
            lo,
            hi,
            pass,
        }
    }
}

/// A reported number without a verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub scope: String,
    pub value: f64,
}

/// Verdicts, fits and metrics derived from tables.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Derived {
    pub verdicts: Vec<Verdict>,
    pub fits: Vec<ScopedFit>,
    pub metrics: Vec<Metric>,
    pub notes: Vec<String>,
}

/// An exponent fit with its scope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScopedFit {
    pub scope: String,
    pub fit: ExponentFit,
}

impl Derived {
    fn metric(&mut self, name: &str, scope: String, value: f64) {
        self.metrics.push(Metric {
            name: name.to_string(),
            scope,
            value,
        });
    }
}

/// Version, grid and step stamp.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Environment {
    pub version: String,
    pub grid: Option<GridSpec>,
    pub dt: String,
    pub seed: u64,
    pub threads: usize,
}

/// Per-lambda run status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub lambda: u32,
    pub csv: String,
    pub label: String,
    pub stop: StopReason,
    pub steps: usize,
    pub cfl_warnings: usize,
}

/// Everything an experiment reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub environment: Environment,
    pub config: ExperimentConfig,
    pub runs: Vec<RunSummary>,
    #[serde(flatten)]
    pub derived: Derived,
    pub all_pass: bool,
}

/// Report plus the emitted tables (name without extension, table).
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub tables: Vec<(String, Table)>,
}

fn table_name(kind: ExperimentKind, lam: u32) -> String {
    format!("{}_{lam}", kind.name())
}

/// Runs an experiment in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let (tables, runs) = match cfg.experiment {
        ExperimentKind::Rays => (rays_tables(cfg)?, Vec::new()),
        ExperimentKind::PacketValidate => (packet_validate_tables(cfg)?, Vec::new()),
        ExperimentKind::Degeneration => (degeneration_tables(cfg)?, Vec::new()),
        ExperimentKind::NormGrowth
        | ExperimentKind::HallGrowth
        | ExperimentKind::Fradiss
        | ExperimentKind::NonlinearDemo => run_solver_experiment(cfg)?,
    };
    let derived = derive(cfg, &tables)?;
    let all_pass = derived.verdicts.iter().all(|v| v.pass);
    let report = ExperimentReport {
        experiment: cfg.experiment,
        environment: Environment {
            version: env!("CARGO_PKG_VERSION").to_string(),
            grid: cfg.experiment.uses_solver().then_some(cfg.grid),
            dt: if cfg.experiment == ExperimentKind::Rays {
                format!("{}", cfg.ray_dt)
            } else {
                cfg.dt_label()
            },
            seed: cfg.seed,
            threads: rayon::current_num_threads(),
        },
        config: cfg.clone(),
        runs,
        derived,
        all_pass,
    };
    Ok(ExperimentOutput { report, tables })
}

/// Runs `cfg`, which must be configured for `kind`.
fn run_as(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutput, ExperimentError> {
    if cfg.experiment != kind {
        return Err(ConfigError::invalid(
            "experiment",
            format!("config is for `{}`, not `{kind}`", cfg.experiment),
        )
        .into());
    }
    run_experiment(cfg)
}

/// Ray oracle and conserved quantities.
pub fn run_rays(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    run_as(ExperimentKind::Rays, cfg)
}

/// Structural residuals of the packet across lambda.
pub fn run_packet_validate(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    run_as(ExperimentKind::PacketValidate, cfg)
}

/// L^p decay exponents of the packet.
pub fn run_degeneration(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    run_as(ExperimentKind::Degeneration, cfg)
}

/// Testing functional and H^s growth of the linear electron-MHD solver.
pub fn run_norm_growth(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    run_as(ExperimentKind::NormGrowth, cfg)
}

/// As [`run_norm_growth`] for the Hall system over the viscosity list.
pub fn run_hall_growth(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    run_as(ExperimentKind::HallGrowth, cfg)
}

/// Testing functional and growth at t_* under fractional dissipation.
pub fn run_fradiss(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    run_as(ExperimentKind::Fradiss, cfg)
}

/// Small-perturbation run of the nonlinear electron-MHD system.
pub fn run_nonlinear_demo(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    run_as(ExperimentKind::NonlinearDemo, cfg)
}

impl ExperimentOutput {
    /// Writes `<name>.csv` tables, `report.json` and, optionally, two-column
    /// plot files `<name>__<column>.dat` (first column t or lambda_t).
    pub fn write(&self, dir: &Path, plot_data: bool) -> Result<(), ExperimentError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ExperimentError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, table) in &self.tables {
            let path = dir.join(format!("{name}.csv"));
            let f = std::fs::File::create(&path).map_err(io(&path))?;
            let mut w = std::io::BufWriter::new(f);
            table.write(&mut w).map_err(io(&path))?;
            w.flush().map_err(io(&path))?;
            if plot_data {
                write_plot_data(dir, name, table)?;
            }
        }
        let path = dir.join("report.json");
        let json = serde_json::to_string_pretty(&self.report).expect("report serializes");
        std::fs::write(&path, json + "\n").map_err(io(&path))?;
        Ok(())
    }
}

fn write_plot_data(dir: &Path, name: &str, table: &Table) -> Result<(), ExperimentError> {
    let x = ["lambda_t", "t"]
        .into_iter()
        .find(|c| table.col_index(c).is_some());
    let Some(x) = x else { return Ok(()) };
    let xi = table.col_index(x).expect("present");
    for (ci, col) in table.columns.iter().enumerate() {
        if ci == xi || col == "t" || col == "lambda_t" {
            continue;
        }
        let path = dir.join(format!("{name}__{col}.dat"));
        let mut s = format!("# {x} {col}\n");
        for r in &table.rows {
            if r[ci].is_finite() {
                s.push_str(&format!("{:?} {:?}\n", r[xi], r[ci]));
            }
        }
        std::fs::write(&path, s).map_err(|source| ExperimentError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}

/// Reads the CSVs of a run back and recomputes its verdicts.
pub fn rederive_from_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<Derived, ExperimentError> {
    let mut names: Vec<String> = cfg
        .lambdas
        .iter()
        .map(|&l| table_name(cfg.experiment, l))
        .collect();
    if cfg.experiment == ExperimentKind::Rays {
        names.push("rays_drift".into());
    }
    let mut tables = Vec::new();
    for name in names {
        let path = dir.join(format!("{name}.csv"));
        let f = std::fs::File::open(&path).map_err(|source| ExperimentError::Io {
            path: path.clone(),
            source,
        })?;
        let t =
            Table::read(std::io::BufReader::new(f)).map_err(|reason| ExperimentError::Table {
                name: name.clone(),
                reason,
            })?;
        tables.push((name, t));
    }
    derive(cfg, &tables)
}

fn find<'a>(tables: &'a [(String, Table)], name: &str) -> Result<&'a Table, ExperimentError> {
    tables
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| ExperimentError::Table {
            name: name.to_string(),
            reason: "missing".into(),
        })
}

fn need_col(t: &Table, name: &str) -> Result<Vec<f64>, ExperimentError> {
    t.col(name).ok_or_else(|| ExperimentError::Table {
        name: t.title.clone(),
        reason: format!("missing column {name}"),
    })
}

fn need_meta(t: &Table, key: &str) -> Result<f64, ExperimentError> {
    t.meta(key).ok_or_else(|| ExperimentError::Table {
        name: t.title.clone(),
        reason: format!("missing metadata {key}"),
    })
}

/// Verdicts, fits and metrics from tables (pure).
pub fn derive(
    cfg: &ExperimentConfig,
    tables: &[(String, Table)],
) -> Result<Derived, ExperimentError> {
    match cfg.experiment {
        ExperimentKind::Rays => derive_rays(cfg, tables),
        ExperimentKind::PacketValidate => derive_packet_validate(cfg, tables),
        ExperimentKind::Degeneration => derive_degeneration(cfg, tables),
        ExperimentKind::NormGrowth => derive_growth(cfg, tables, None),
        ExperimentKind::HallGrowth => derive_growth(cfg, tables, Some("nu")),
        ExperimentKind::Fradiss => derive_fradiss(cfg, tables),
        ExperimentKind::NonlinearDemo => derive_nonlinear(cfg, tables),
    }
}

// ---------------------------------------------------------------- rays

const RAY_PROFILES: [&str; 4] = ["sin", "linear", "axi_ring", "admissible"];

fn rays_tables(cfg: &ExperimentConfig) -> Result<Vec<(String, Table)>, ExperimentError> {
    let field = AffineField::exceptional(1.0, 0.0);
    let mut tables: Vec<(String, Table)> = cfg
        .lambdas
        .par_iter()
        .map(|&lam| -> Result<(String, Table), ExperimentError> {
            let l = lam as f64;
            let traj = integrate_ray(
                &field,
                [0.0, 1.0, 0.0],
                [l, -l, 0.0],
                cfg.ray_t_end,
                cfg.ray_dt,
            )?;
            let cols = [
                "t",
                "x",
                "y",
                "xi_x",
                "xi_y",
                "x_exact",
                "y_exact",
                "xi_x_exact",
                "xi_y_exact",
            ];
            let mut t = Table::new("rays", cols.iter().map(|s| s.to_string()).collect());
            t.set_meta("lambda", l);
            for s in &traj.samples {
                let e = explicit_ray_linear(l, s.t);
                t.rows.push(vec![
                    s.t, s.x[0], s.x[1], s.xi[0], s.xi[1], e.x[0], e.x[1], e.xi[0], e.xi[1],
                ]);
            }
            Ok((table_name(cfg.experiment, lam), t))
        })
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drift = Table::new(
        "rays_drift",
        [
            "profile",
            "t_end",
            "p_drift",
            "momentum_drift",
            "xi_z_drift",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    );
    for (i, name) in RAY_PROFILES.iter().enumerate() {
        let (kind, f, y1) = match *name {
            "sin" => (ProfileKind::Translational, ProfileChoice::Sin, 1.0),
            "linear" => (
                ProfileKind::Translational,
                ProfileChoice::Linear {
                    slope: 1.0,
                    offset: 0.0,
                },
                1.0,
            ),
            "axi_ring" => (
                ProfileKind::Axisymmetric,
                ProfileChoice::AxiRing { r0: 1.0 },
                1.5,
            ),
            _ => (
                ProfileKind::Translational,
                ProfileChoice::Admissible {
                    f_alpha: 0.25,
                    c0: 1.0,
                },
                1.0,
            ),
        };
        let profile = build_profile(&ProfileConfig { kind, f, y1 })?;
        let mid = 0.5 * (profile.y0() + profile.y1());
        let x0 = match kind {
            ProfileKind::Translational => [0.0, mid, 0.0],
            ProfileKind::Axisymmetric => [mid, 0.0, 0.0],
        };
        let angle: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let xi_z: f64 = rng.gen_range(-2.0..2.0);
        let xi0 = [4.0 * angle.cos(), 4.0 * angle.sin(), xi_z];
        let traj = integrate_ray(profile.as_ref(), x0, xi0, cfg.ray_t_end, cfg.ray_dt)?;
        let d = conserved_report(profile.as_ref(), &traj);
        drift.set_meta(&format!("profile_{name}"), i as f64);
        drift
            .rows
            .push(vec![i as f64, cfg.ray_t_end, d.p, d.momentum, d.xi_z]);
    }
    tables.push(("rays_drift".into(), drift));
    Ok(tables)
}

fn derive_rays(
    cfg: &ExperimentConfig,
    tables: &[(String, Table)],
) -> Result<Derived, ExperimentError> {
    let tol = &cfg.tolerances;
    let mut d = Derived::default();
    for &lam in &cfg.lambdas {
        let t = find(tables, &table_name(cfg.experiment, lam))?;
        let mut err = 0.0f64;
        for (a, b) in [
            ("y", "y_exact"),
            ("xi_x", "xi_x_exact"),
            ("xi_y", "xi_y_exact"),
            ("x", "x_exact"),
        ] {
            for (u, v) in need_col(t, a)?.into_iter().zip(need_col(t, b)?) {
                if v != 0.0 {
                    err = err.max((u - v).abs() / v.abs());
                }
            }
        }
        d.verdicts.push(Verdict::new(
            "ray_oracle_error",
            format!("lambda={lam}"),
            err,
            None,
            Some(tol.ray_error_max),
        ));
    }
    let drift = find(tables, "rays_drift")?;
    let t_end = need_col(drift, "t_end")?;
    for (i, name) in RAY_PROFILES.iter().enumerate() {
        let Some(r) = drift.rows.get(i) else { continue };
        let per_time = t_end[i].max(1.0);
        let m = r[2..]
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0f64, |a, v| a.max(*v));
        d.verdicts.push(Verdict::new(
            "conserved_drift_per_time",
            format!("profile={name}"),
            m / per_time,
            None,
            Some(tol.drift_max),
        ));
    }
    Ok(d)
}

// ---------------------------------------------------------------- packet_validate

fn ladder(cfg: &ExperimentConfig) -> Vec<f64> {
    let n = cfg.samples;
    (0..n)
        .map(|k| cfg.lambda_t_end * k as f64 / (n - 1) as f64)
        .collect()
}

fn is_resolution_stop(e: &PacketError) -> bool {
    matches!(
        e,
        PacketError::UnderResolved { .. } | PacketError::Horizon(_)
    )
}

fn packet_validate_tables(cfg: &ExperimentConfig) -> Result<Vec<(String, Table)>, ExperimentError> {
    let profile = build_profile(&cfg.profile)?;
    cfg.lambdas
        .par_iter()
        .map(|&lam| -> Result<(String, Table), ExperimentError> {
            let packet = build_packet(cfg, &profile, lam)?;
            let line = packet.packet_line(cfg.line_n)?;
            let sampler = packet.sampler(&line);
            let dt_fd = sampler.default_dt_fd();
            let l = lam as f64;
            let cols = [
                "lambda_t",
                "t",
                "resolved",
                "b_norm",
                "err_b",
                "grad_err_psi",
                "err_psi_rel",
                "u_lift_scaled",
            ];
            let mut t = Table::new(
                "packet_validate",
                cols.iter().map(|s| s.to_string()).collect(),
            );
            t.set_meta("lambda", l);
            t.set_meta("line_n", cfg.line_n as f64);
            for tau in ladder(cfg) {
                let time = tau / l;
                let row = match sampler.residual(time, dt_fd) {
                    Ok(r) => {
                        let b = r.fields.b_norm();
                        let lift = if packet.kind() == ProfileKind::Translational {
                            let h = sampler.hall_lift(time)?;
                            l * h.uz_norm.hypot(h.u_xy_norm)
                        } else {
                            f64::NAN
                        };
                        vec![
                            tau,
                            time,
                            1.0,
                            b,
                            r.err_b_norm,
                            r.grad_err_psi_norm,
                            r.grad_err_psi_norm / b,
                            lift,
                        ]
                    }
                    Err(e) if is_resolution_stop(&e) => {
                        let nan = f64::NAN;
                        vec![tau, time, 0.0, nan, nan, nan, nan, nan]
                    }
                    Err(e) => return Err(e.into()),
                };
                t.rows.push(row);
            }
            Ok((table_name(cfg.experiment, lam), t))
        })
        .collect()
}

fn derive_packet_validate(
    cfg: &ExperimentConfig,
    tables: &[(String, Table)],
) -> Result<Derived, ExperimentError> {
    let tol = &cfg.tolerances;
    let mut d = Derived::default();
    let mut per: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for &lam in &cfg.lambdas {
        let t = find(tables, &table_name(cfg.experiment, lam))?;
        let resolved = need_col(t, "resolved")?;
        let rel = need_col(t, "err_psi_rel")?;
        let n_res = resolved.iter().filter(|v| **v == 1.0).count();
        let worst = if n_res == 0 {
            f64::NAN
        } else {
            rel.iter()
                .filter(|v| v.is_finite())
                .fold(0.0f64, |a, v| a.max(*v))
        };
        d.verdicts.push(Verdict::new(
            "err_psi_relative",
            format!("lambda={lam}"),
            worst,
            None,
            Some(tol.err_psi_max),
        ));
        d.metric("resolved_samples", format!("lambda={lam}"), n_res as f64);
        per.push((need_col(t, "lambda_t")?, need_col(t, "err_b")?));
    }
    // shared ladder: lam t values present and resolved for every lam
    let mut worst_ratio = f64::NAN;
    let mut shared = 0usize;
    if let Some((taus, _)) = per.first() {
        for (k, tau) in taus.iter().enumerate() {
            let vals: Option<Vec<f64>> = per
                .iter()
                .map(|(ts, eb)| {
                    ts.iter()
                        .position(|x| x == tau)
                        .map(|i| eb[i])
                        .filter(|v| v.is_finite() && *v > 0.0)
                })
                .collect();
            let _ = k;
            if let Some(vals) = vals {
                shared += 1;
                let mx = vals.iter().cloned().fold(f64::MIN, f64::max);
                let mn = vals.iter().cloned().fold(f64::MAX, f64::min);
                let r = mx / mn;
                worst_ratio = if worst_ratio.is_nan() {
                    r
                } else {
                    worst_ratio.max(r)
                };
            }
        }
    }
    d.metric("shared_ladder_points", "all".into(), shared as f64);
    if per.len() > 1 {
        d.verdicts.push(Verdict::new(
            "err_b_lambda_uniformity",
            "max/min over lambda".into(),
            worst_ratio,
            None,
            Some(tol.err_b_ratio_max),
        ));
    }
    Ok(d)
}

// ---------------------------------------------------------------- degeneration

fn p_label(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p}")
    }
}

fn degeneration_tables(cfg: &ExperimentConfig) -> Result<Vec<(String, Table)>, ExperimentError> {
    let profile = build_profile(&cfg.profile)?;
    cfg.lambdas
        .par_iter()
        .map(|&lam| -> Result<(String, Table), ExperimentError> {
            let packet = build_packet(cfg, &profile, lam)?;
            let line = packet.packet_line(cfg.line_n)?;
            let sampler = packet.sampler(&line);
            let l = lam as f64;
            let times: Vec<f64> = ladder(cfg).iter().map(|tau| tau / l).collect();
            let scan = degeneration_scan(&sampler, &times, &cfg.p_list)?;
            let mut cols = vec!["t".to_string(), "lambda_t".into()];
            cols.extend(cfg.p_list.iter().map(|&p| format!("b_l{}", p_label(p))));
            cols.push("b_h1".into());
            let mut t = Table::new("degeneration", cols);
            t.set_meta("lambda", l);
            t.set_meta("c_f", scan.c_f);
            t.set_meta("C_f", scan.big_c_f);
            for (k, &time) in scan.times.iter().enumerate() {
                let mut row = vec![time, time * l];
                row.extend(scan.lp.iter().map(|v| v[k]));
                row.push(scan.h1[k]);
                t.rows.push(row);
            }
            Ok((table_name(cfg.experiment, lam), t))
        })
        .collect()
}

fn widen(a: f64, b: f64, rel: f64) -> (f64, f64) {
    let lo = (a * (1.0 - rel)).min(a * (1.0 + rel));
    let hi = (b * (1.0 - rel)).max(b * (1.0 + rel));
    (lo, hi)
}

fn log_fit(label: &str, t: &[f64], v: &[f64], bracket: (f64, f64)) -> ExponentFit {
    let (ts, ls): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(v)
        .filter(|(a, b)| a.is_finite() && b.is_finite() && **b > 0.0)
        .map(|(a, b)| (*a, b.ln()))
        .unzip();
    let (slope, ci) = if ts.len() >= 3 {
        fit_slope_middle(&ts, &ls)
    } else {
        (f64::NAN, f64::NAN)
    };
    ExponentFit {
        label: label.to_string(),
        slope,
        ci,
        bracket,
    }
}

fn derive_degeneration(
    cfg: &ExperimentConfig,
    tables: &[(String, Table)],
) -> Result<Derived, ExperimentError> {
    let tol = &cfg.tolerances;
    let mut d = Derived::default();
    for &lam in &cfg.lambdas {
        let l = lam as f64;
        let t = find(tables, &table_name(cfg.experiment, lam))?;
        let (c_f, big_c_f) = (need_meta(t, "c_f")?, need_meta(t, "C_f")?);
        let times = need_col(t, "t")?;
        let scope = format!("lambda={lam}");
        for &p in &cfg.p_list {
            let q = 0.5 - if p.is_infinite() { 0.0 } else { 1.0 / p };
            let (a, b) = (c_f * q * l, big_c_f * q * l);
            let fit = log_fit(
                &format!("L{}", p_label(p)),
                &times,
                &need_col(t, &format!("b_l{}", p_label(p)))?,
                (a.min(b), a.max(b)),
            );
            if p == 1.0 {
                let (lo, hi) = widen(fit.bracket.0, fit.bracket.1, tol.degeneration_rel);
                d.verdicts.push(Verdict::new(
                    "l1_decay_exponent",
                    scope.clone(),
                    fit.slope,
                    Some(lo),
                    Some(hi),
                ));
            } else if p == 2.0 {
                d.verdicts.push(Verdict::new(
                    "l2_flat",
                    scope.clone(),
                    (fit.slope / l).abs(),
                    None,
                    Some(tol.l2_slope_max),
                ));
            }
            d.metric(
                &format!("slope_over_lambda_L{}", p_label(p)),
                scope.clone(),
                fit.slope / l,
            );
            d.fits.push(ScopedFit {
                scope: scope.clone(),
                fit,
            });
        }
        let fit = log_fit("H1", &times, &need_col(t, "b_h1")?, (c_f * l, big_c_f * l));
        d.metric("slope_over_lambda_H1", scope.clone(), fit.slope / l);
        d.fits.push(ScopedFit { scope, fit });
    }
    Ok(d)
}

// ---------------------------------------------------------------- solver experiments

/// A single packet-initialized solver run.
struct PacketRunSpec {
    variant: Variant,
    params: Params,
    mode: BackgroundMode,
    u0: FluidStart,
    amplitude: f64,
    t_end: f64,
}

struct PacketRun {
    table: Table,
    summary: RunSummary,
    c_f: f64,
    big_c_f: f64,
}

fn diag_columns(s_list: &[f64], p_list: &[f64]) -> Vec<String> {
    let mut c = vec![
        "t".to_string(),
        "lambda_t".into(),
        "b_l2".into(),
        "u_l2".into(),
    ];
    c.extend(s_list.iter().map(|s| format!("b_h{s}")));
    c.extend(p_list.iter().map(|&p| format!("b_l{}", p_label(p))));
    c.extend(
        [
            "energy",
            "energy_gap",
            "tf_b",
            "tf_u",
            "nu_grad",
            "tf_gap",
            "u_lift",
            "bg_gap",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    c
}

fn diag_row(r: &DiagnosticsRecord, lam: f64, u_lift: f64, bg_gap: f64) -> Vec<f64> {
    let o = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let mut row = vec![r.t, r.t * lam, r.b_l2, o(r.u_l2)];
    row.extend(&r.hs);
    row.extend(&r.lp);
    row.extend([
        r.energy,
        o(r.energy_gap),
        o(r.tf_b),
        o(r.tf_u),
        o(r.nu_grad),
        o(r.tf_gap),
        u_lift,
        bg_gap,
    ]);
    row
}

fn packet_run(
    cfg: &ExperimentConfig,
    profile: &Arc<BackgroundProfile>,
    grid: &Arc<Grid>,
    lam: u32,
    spec: &PacketRunSpec,
) -> Result<PacketRun, ExperimentError> {
    let packet = build_packet(cfg, profile, lam)?;
    let line = WavePacket::grid_line(grid)?;
    let probe = solver::PacketProbe::new(&packet, &line, grid)?;
    let mut init: Vec<_> = probe
        .initial_fields(spec.variant)?
        .into_iter()
        .map(|s| s.scale(spec.amplitude))
        .collect();
    if spec.variant.is_hall() && spec.u0 == FluidStart::Packet {
        init[0] = init[3].scale(-1.0);
        init[1] = init[2].scale(-1.0);
    }
    let background = match spec.mode {
        BackgroundMode::Frozen => Background::Profile(profile.clone()),
        BackgroundMode::Evolving => Background::evolving(profile, &spec.params)?,
    };
    let background = Arc::new(background);
    let state = SolverState::new(
        spec.variant,
        spec.params,
        background.clone(),
        spec.mode,
        init,
    )?;
    let run_cfg = RunConfig {
        t_end: spec.t_end,
        dt: cfg.dt,
        safety: cfg.safety,
        every: cfg.every,
        s_list: cfg.s_list.clone(),
        p_list: cfg.p_list.clone(),
    };
    let out = solver::run(state, &run_cfg, Some(&probe))?;
    let l = lam as f64;
    let sampler = packet.sampler(&line);
    let f0 = background.samples(0.0, grid).f;
    let mut table = Table::new(
        cfg.experiment.name(),
        diag_columns(&cfg.s_list, &cfg.p_list),
    );
    for r in &out.records {
        let u_lift = if spec.variant.is_hall() {
            let h = sampler.hall_lift(r.t)?;
            h.uz_norm.hypot(h.u_xy_norm) * spec.amplitude
        } else {
            f64::NAN
        };
        let bg_gap = if spec.mode == BackgroundMode::Evolving {
            let ft = background.samples(r.t, grid).f;
            let s: f64 = ft.iter().zip(&f0).map(|(a, b)| (a - b).powi(2)).sum();
            (s * grid.dy()).sqrt()
        } else {
            0.0
        };
        table.rows.push(diag_row(r, l, u_lift, bg_gap));
    }
    let t_last = out.records.last().map_or(0.0, |r| r.t);
    let (c_f, big_c_f) = packet.growth_constants(t_last)?;
    let summary = RunSummary {
        lambda: lam,
        csv: format!("{}.csv", table_name(cfg.experiment, lam)),
        label: String::new(),
        stop: out.stop.clone(),
        steps: out.steps,
        cfl_warnings: out.cfl_warnings,
    };
    Ok(PacketRun {
        table,
        summary,
        c_f,
        big_c_f,
    })
}

/// Label column of a merged table plus the run specs per label.
fn solver_specs(
    cfg: &ExperimentConfig,
    lam: u32,
) -> (Option<&'static str>, Vec<(f64, PacketRunSpec)>) {
    let t_end = cfg.t_end_for(lam);
    let base = |variant, params, mode, amplitude: f64, t_end: f64| PacketRunSpec {
        variant,
        params,
        mode,
        u0: cfg.u0,
        amplitude,
        t_end,
    };
    match cfg.experiment {
        ExperimentKind::NormGrowth => (
            None,
            vec![(
                0.0,
                base(
                    Variant::EmhdLinear,
                    Params::default(),
                    BackgroundMode::Frozen,
                    1.0,
                    t_end,
                ),
            )],
        ),
        ExperimentKind::HallGrowth => (
            Some("nu"),
            cfg.nu
                .iter()
                .map(|&nu| {
                    let p = Params {
                        nu,
                        ..Params::default()
                    };
                    (
                        nu,
                        base(Variant::HallLinear, p, BackgroundMode::Frozen, 1.0, t_end),
                    )
                })
                .collect(),
        ),
        ExperimentKind::Fradiss => {
            let l = lam as f64;
            let t_star = cfg.t_end.unwrap_or((cfg.fradiss_epsilon * l.ln()) / l);
            let variant = match cfg.system {
                SystemChoice::Emhd => Variant::EmhdFradiss,
                SystemChoice::Hall => Variant::HallFradiss,
            };
            let params = Params {
                nu: if cfg.system == SystemChoice::Hall {
                    cfg.nu[0]
                } else {
                    0.0
                },
                eta_diss: cfg.eta_diss,
                alpha: cfg.alpha,
                beta: if cfg.system == SystemChoice::Hall {
                    cfg.beta
                } else {
                    0.0
                },
            };
            let modes: Vec<(f64, BackgroundMode)> = match cfg.mode {
                ModeChoice::Frozen => vec![(0.0, BackgroundMode::Frozen)],
                ModeChoice::Evolving => vec![(1.0, BackgroundMode::Evolving)],
                ModeChoice::Both => vec![
                    (0.0, BackgroundMode::Frozen),
                    (1.0, BackgroundMode::Evolving),
                ],
            };
            (
                Some("mode"),
                modes
                    .into_iter()
                    .map(|(v, m)| (v, base(variant, params, m, 1.0, t_star)))
                    .collect(),
            )
        }
        _ => {
            let amp = cfg.nl_epsilon * (lam as f64).powf(-cfg.nl_s - cfg.nl_n);
            (
                None,
                vec![(
                    0.0,
                    base(
                        Variant::EmhdNonlinear,
                        Params::default(),
                        BackgroundMode::Frozen,
                        amp,
                        t_end,
                    ),
                )],
            )
        }
    }
}

fn run_solver_experiment(
    cfg: &ExperimentConfig,
) -> Result<(Vec<(String, Table)>, Vec<RunSummary>), ExperimentError> {
    let profile = build_profile(&cfg.profile)?;
    let g = &cfg.grid;
    let grid = Grid::new(g.nx, g.ny, g.lx, g.ly)?;
    let jobs: Vec<(u32, f64, Option<&'static str>, PacketRunSpec)> = cfg
        .lambdas
        .iter()
        .flat_map(|&lam| {
            let (label, specs) = solver_specs(cfg, lam);
            specs.into_iter().map(move |(v, s)| (lam, v, label, s))
        })
        .collect();
    let results: Vec<(u32, f64, Option<&'static str>, PacketRun)> = jobs
        .into_par_iter()
        .map(|(lam, v, label, spec)| {
            packet_run(cfg, &profile, &grid, lam, &spec).map(|r| (lam, v, label, r))
        })
        .collect::<Result<_, _>>()?;
    let mut tables = Vec::new();
    let mut runs = Vec::new();
    for &lam in &cfg.lambdas {
        let mut merged: Option<Table> = None;
        let (mut c_f, mut big_c_f) = (f64::INFINITY, 0.0f64);
        for (_, v, label, r) in results.iter().filter(|x| x.0 == lam) {
            let mut r_table = r.table.clone();
            let mut summary = r.summary.clone();
            if let Some(label) = label {
                r_table.columns.insert(0, label.to_string());
                r_table.rows.iter_mut().for_each(|row| row.insert(0, *v));
                summary.label = format!("{label}={v}");
            }
            c_f = c_f.min(r.c_f);
            big_c_f = big_c_f.max(r.big_c_f);
            let completed = matches!(r.summary.stop, StopReason::Completed);
            let key = match label {
                Some(label) => format!("completed_{label}_{v}"),
                None => "completed".into(),
            };
            match &mut merged {
                None => {
                    r_table.set_meta(&key, completed as u8 as f64);
                    merged = Some(r_table);
                }
                Some(m) => {
                    m.set_meta(&key, completed as u8 as f64);
                    m.rows.extend(r_table.rows);
                }
            }
            runs.push(summary);
        }
        let mut t = merged.expect("one run per lambda");
        t.set_meta("lambda", lam as f64);
        t.set_meta("c_f", c_f);
        t.set_meta("C_f", big_c_f);
        tables.push((table_name(cfg.experiment, lam), t));
    }
    Ok((tables, runs))
}

fn tf_total(t: &Table) -> Result<Vec<f64>, ExperimentError> {
    let b = need_col(t, "tf_b")?;
    let u = need_col(t, "tf_u")?;
    Ok(b.iter()
        .zip(&u)
        .map(|(b, u)| if u.is_nan() { *b } else { b + u })
        .collect())
}

fn max_abs_finite(v: impl Iterator<Item = f64>) -> f64 {
    v.filter(|x| x.is_finite()).fold(0.0, |a, x| a.max(x.abs()))
}

fn derive_growth(
    cfg: &ExperimentConfig,
    tables: &[(String, Table)],
    label: Option<&str>,
) -> Result<Derived, ExperimentError> {
    let tol = &cfg.tolerances;
    let mut d = Derived::default();
    let first = find(tables, &table_name(cfg.experiment, cfg.lambdas[0]))?;
    let labels: Vec<f64> = match label {
        Some(l) => first.distinct(l),
        None => vec![f64::NAN],
    };
    for lv in labels {
        let prefix = match label {
            Some(l) => format!("{l}={lv} "),
            None => String::new(),
        };
        let subset = |lam: u32| -> Result<Table, ExperimentError> {
            let t = find(tables, &table_name(cfg.experiment, lam))?;
            Ok(match label {
                Some(l) => t.select(l, lv),
                None => t.clone(),
            })
        };
        // shared window: the shortest resolved run
        let mut window = f64::INFINITY;
        for &lam in &cfg.lambdas {
            let t = subset(lam)?;
            let last = need_col(&t, "t")?.last().copied().unwrap_or(0.0);
            window = window.min(last);
        }
        d.metric("shared_window_T", format!("{prefix}all"), window);
        let mut rates: BTreeMap<u32, f64> = BTreeMap::new();
        let mut u_peaks = Vec::new();
        for &lam in &cfg.lambdas {
            let l = lam as f64;
            let t = subset(lam)?;
            let scope = format!("{prefix}lambda={lam}");
            let times = need_col(&t, "t")?;
            let tf = tf_total(&t)?;
            let tf_min = times
                .iter()
                .zip(&tf)
                .filter(|(s, _)| **s <= window * (1.0 + 1e-12))
                .map(|(_, v)| *v)
                .fold(f64::INFINITY, f64::min);
            d.verdicts.push(Verdict::new(
                "testing_functional_min",
                scope.clone(),
                tf_min,
                Some(tol.tf_threshold),
                None,
            ));
            let full = find(tables, &table_name(cfg.experiment, lam))?;
            let (c_f, big_c_f) = (need_meta(full, "c_f")?, need_meta(full, "C_f")?);
            let h1 = need_col(&t, "b_h1")?;
            let fit = log_fit("H1", &times, &h1, (c_f * l, big_c_f * l));
            d.verdicts.push(Verdict::new(
                "h1_rate_over_lambda",
                scope.clone(),
                fit.slope / l,
                Some(tol.h1_rate_lo * c_f),
                Some(tol.h1_rate_hi * big_c_f),
            ));
            rates.insert(lam, fit.slope);
            d.fits.push(ScopedFit {
                scope: scope.clone(),
                fit,
            });
            if let Some(h2) = t.col("b_h2") {
                let f2 = log_fit("H2", &times, &h2, (2.0 * c_f * l, 2.0 * big_c_f * l));
                d.metric("h2_over_h1_rate", scope.clone(), f2.slope / rates[&lam]);
                d.fits.push(ScopedFit {
                    scope: scope.clone(),
                    fit: f2,
                });
            }
            let b = need_col(&t, "b_l2")?;
            let eg = need_col(&t, "energy_gap")?;
            let e_gap = max_abs_finite(eg.iter().zip(&b).map(|(g, b)| g / (b * b)));
            d.verdicts.push(Verdict::new(
                "energy_identity_gap",
                scope.clone(),
                e_gap,
                None,
                Some(tol.energy_gap_max),
            ));
            let tg = need_col(&t, "tf_gap")?;
            let t_gap = max_abs_finite(tg.iter().zip(&b).map(|(g, b)| g / b));
            d.verdicts.push(Verdict::new(
                "testing_identity_gap",
                scope.clone(),
                t_gap,
                None,
                Some(tol.tf_identity_max),
            ));
            d.metric(
                "lambda_t_reached",
                scope.clone(),
                times.last().copied().unwrap_or(0.0) * l,
            );
            if label == Some("nu") {
                let u = need_col(&t, "u_l2")?;
                let peak = u
                    .iter()
                    .filter(|v| v.is_finite())
                    .fold(0.0f64, |a, v| a.max(*v))
                    * l;
                d.metric("sup_lambda_u", scope.clone(), peak);
                let lift = need_col(&t, "u_lift")?;
                let lp = lift
                    .iter()
                    .filter(|v| v.is_finite())
                    .fold(0.0f64, |a, v| a.max(*v))
                    * l;
                d.metric("sup_lambda_u_lift", scope.clone(), lp);
                u_peaks.push(peak);
            }
        }
        for (&lam, &r) in &rates {
            if let Some(&r2) = rates.get(&(2 * lam)) {
                d.verdicts.push(Verdict::new(
                    "doubling_rate_ratio",
                    format!("{prefix}lambda={lam}->{}", 2 * lam),
                    r2 / r,
                    Some(tol.ratio_lo),
                    Some(tol.ratio_hi),
                ));
            }
        }
        if u_peaks.len() > 1 {
            let mx = u_peaks.iter().cloned().fold(f64::MIN, f64::max);
            let mn = u_peaks.iter().cloned().fold(f64::MAX, f64::min);
            d.verdicts.push(Verdict::new(
                "fluid_smallness_ratio",
                format!("{prefix}max/min of sup lambda ||u||"),
                mx / mn,
                None,
                Some(tol.u_ratio_max),
            ));
        }
    }
    Ok(d)
}

fn derive_fradiss(
    cfg: &ExperimentConfig,
    tables: &[(String, Table)],
) -> Result<Derived, ExperimentError> {
    let tol = &cfg.tolerances;
    let mut d = Derived::default();
    let asserted = cfg.alpha < 0.5;
    if !asserted {
        d.notes.push(format!(
            "alpha = {} >= 1/2: contrast run, verdicts are not asserted",
            cfg.alpha
        ));
    }
    let s0_col = format!("b_h{}", cfg.fradiss_s0);
    let first = find(tables, &table_name(cfg.experiment, cfg.lambdas[0]))?;
    let mut lams = cfg.lambdas.clone();
    lams.sort_unstable();
    for mode in first.distinct("mode") {
        let mname = if mode == 0.0 { "frozen" } else { "evolving" };
        let mut amps: Vec<(u32, f64)> = Vec::new();
        let mut tf_end = BTreeMap::new();
        for &lam in &lams {
            let l = lam as f64;
            let full = find(tables, &table_name(cfg.experiment, lam))?;
            let t = full.select("mode", mode);
            let scope = format!("mode={mname} lambda={lam}");
            let tf = tf_total(&t)?;
            let h = need_col(&t, &s0_col)?;
            let (Some(tf0), Some(tf1)) = (tf.first(), tf.last()) else {
                continue;
            };
            let ratio = tf1 / tf0;
            let amp = h.last().copied().unwrap_or(f64::NAN) / h[0];
            let c_f = need_meta(full, "c_f")?;
            let bound = l.powf(cfg.fradiss_epsilon * c_f * cfg.fradiss_s0 * tol.growth_margin);
            d.metric("tf_ratio_at_t_star", scope.clone(), ratio);
            d.metric("h_s0_amplification_at_t_star", scope.clone(), amp);
            d.metric("growth_bound", scope.clone(), bound);
            d.metric(
                "t_star",
                scope.clone(),
                need_col(&t, "t")?.last().copied().unwrap_or(0.0),
            );
            let bg = need_col(&t, "bg_gap")?;
            d.metric(
                "background_gap_at_t_star",
                scope.clone(),
                bg.last().copied().unwrap_or(f64::NAN),
            );
            tf_end.insert(lam, *tf1);
            if asserted {
                d.verdicts.push(Verdict::new(
                    "tf_at_t_star_over_initial",
                    scope.clone(),
                    ratio,
                    Some(tol.fradiss_tf_fraction),
                    None,
                ));
                d.verdicts.push(Verdict::new(
                    "h_s0_growth_factor",
                    scope.clone(),
                    amp,
                    Some(bound),
                    None,
                ));
            }
            amps.push((lam, amp));
        }
        if asserted && amps.len() > 1 {
            let min_ratio = amps
                .windows(2)
                .map(|w| w[1].1 / w[0].1)
                .fold(f64::INFINITY, f64::min);
            d.verdicts.push(Verdict::new(
                "amplification_increases_with_lambda",
                format!("mode={mname} min ratio of consecutive lambdas"),
                min_ratio,
                Some(1.0),
                None,
            ));
        }
        let _ = tf_end;
    }
    // frozen versus evolving testing functional at t_*
    if first.distinct("mode").len() == 2 {
        for &lam in &lams {
            let full = find(tables, &table_name(cfg.experiment, lam))?;
            let a = tf_total(&full.select("mode", 0.0))?;
            let b = tf_total(&full.select("mode", 1.0))?;
            if let (Some(x), Some(y)) = (a.last(), b.last()) {
                d.metric("tf_frozen_minus_evolving", format!("lambda={lam}"), x - y);
            }
        }
    }
    Ok(d)
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    for i in 1..xs.len() {
        if xs[i] >= x {
            let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
            return ys[i - 1] + w * (ys[i] - ys[i - 1]);
        }
    }
    *ys.last().unwrap_or(&f64::NAN)
}

fn derive_nonlinear(
    cfg: &ExperimentConfig,
    tables: &[(String, Table)],
) -> Result<Derived, ExperimentError> {
    let mut d = Derived::default();
    let s0_col = format!("b_h{}", cfg.nl_s0);
    let mut series = Vec::new();
    for &lam in &cfg.lambdas {
        let t = find(tables, &table_name(cfg.experiment, lam))?;
        let lt = need_col(t, "lambda_t")?;
        let h = need_col(t, &s0_col)?;
        let amp: Vec<f64> = h.iter().map(|v| v / h[0]).collect();
        let e = need_col(t, "energy")?;
        let drift = max_abs_finite(e.iter().map(|v| (v - e[0]) / e[0]));
        let tf = need_col(t, "tf_b")?;
        let b0 = need_col(t, "b_l2")?[0];
        let scope = format!("lambda={lam}");
        d.metric(
            "lambda_t_reached",
            scope.clone(),
            lt.last().copied().unwrap_or(0.0),
        );
        d.metric("energy_relative_drift", scope.clone(), drift);
        d.metric(
            "min_tf_over_b0",
            scope.clone(),
            tf.iter().map(|v| v / b0).fold(f64::INFINITY, f64::min),
        );
        if need_meta(t, "completed")? == 0.0 {
            d.notes.push(format!(
                "lambda = {lam}: stopped early (resolution exhausted)"
            ));
        }
        series.push((lam, lt, amp));
    }
    series.sort_by_key(|s| s.0);
    let common = series
        .iter()
        .map(|s| s.1.last().copied().unwrap_or(0.0))
        .fold(f64::INFINITY, f64::min);
    d.metric("matched_lambda_t", "all".into(), common);
    let amps: Vec<f64> = series
        .iter()
        .map(|(_, lt, a)| interp(lt, a, common))
        .collect();
    for ((lam, _, _), a) in series.iter().zip(&amps) {
        d.metric(
            "amplification_at_matched_lambda_t",
            format!("lambda={lam}"),
            *a,
        );
    }
    if amps.len() > 1 {
        let min_ratio = amps
            .windows(2)
            .map(|w| w[1] / w[0])
            .fold(f64::INFINITY, f64::min);
        d.verdicts.push(Verdict::new(
            "amplification_increases_with_lambda",
            "min ratio of consecutive lambdas".into(),
            min_ratio,
            Some(1.0),
            None,
        ));
    }
    Ok(d)
}
