//! Scenario files: TOML documents describing a filter problem, its initial
//! state and simulation settings.
//!
//! Two kinds exist. `linear_affine` spells out `x' = A x + B u + E y_cmd(t)`,
//! an affine nominal `k(x) = K x + kappa` and affine barriers. `builtin`
//! selects a hard-coded model (`aircraft` or `multi_agent`) whose parameters
//! may be overridden in a section of the same name. Matrices are written as
//! arrays of rows. Unknown keys are rejected.

mod aircraft;
mod multi_agent;

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;

use crate::frontend::{
    exponential_gains_from_poles, Barrier, CheckFailure, ClassK, FilterProblem,
    FrontendError, InputBounds, LinearSystem, NominalFn, SlackPolicy,
};
use crate::lqr::LqrError;
use crate::qp::WeightMatrix;
use crate::runtime::{Integrator, SimulationConfig, Trajectory};

pub use aircraft::AircraftConfig;
pub use multi_agent::MultiAgentConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error("LQR design failed: {0}")]
    Lqr(#[from] LqrError),
}

// ---------------------------------------------------------------- raw schema

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub kind: KindConfig,
    pub builtin: Option<String>,
    pub simulation: SimulationSection,
    pub system: Option<SystemSection>,
    pub nominal: Option<NominalSection>,
    pub weight: Option<WeightSection>,
    #[serde(default, rename = "barrier")]
    pub barriers: Vec<BarrierConfig>,
    pub bounds: Option<BoundsSection>,
    pub slack: Option<SlackSection>,
    pub command: Option<CommandSection>,
    pub aircraft: Option<AircraftConfig>,
    pub multi_agent: Option<MultiAgentConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindConfig {
    LinearAffine,
    Builtin,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub dt: f64,
    pub horizon: f64,
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorConfig {
    #[default]
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalSection {
    pub gain: Option<Vec<Vec<f64>>>,
    pub offset: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSection {
    pub matrix: Option<Vec<Vec<f64>>>,
    pub diagonal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaConfig {
    pub kind: AlphaKind,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaKind {
    Linear,
    Cubic,
}

impl AlphaConfig {
    fn to_class_k(&self) -> ClassK {
        match self.kind {
            AlphaKind::Linear => ClassK::Linear(self.gain),
            AlphaKind::Cubic => ClassK::Cubic(self.gain),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: BarrierType,
    /// `h(x) = c' x + d`.
    pub c: Vec<f64>,
    #[serde(default)]
    pub d: f64,
    /// Supplied gradient; defaults to `c`.
    pub gradient: Option<Vec<f64>>,
    pub alpha: Option<AlphaConfig>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub poles: Option<[f64; 2]>,
    /// Input gain of a feedthrough barrier.
    pub e: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierType {
    Affine,
    AffineExponential,
    Feedthrough,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackSection {
    pub penalty: Option<f64>,
    pub penalties: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandSection {
    /// `n x q` matrix `E` mapping the command into the drift (linear_affine only).
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(rename = "signal")]
    pub signals: Vec<SignalConfig>,
}

/// One command channel.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalConfig {
    Constant {
        value: f64,
    },
    /// `+amplitude` on `[start, start + width)`, `-amplitude` on the next `width`, zero elsewhere.
    Doublet {
        amplitude: f64,
        #[serde(default)]
        start: f64,
        width: f64,
    },
    /// `offset + amplitude sin(2 pi frequency t + phase)`.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl SignalConfig {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            SignalConfig::Constant { value } => value,
            SignalConfig::Doublet {
                amplitude,
                start,
                width,
            } => {
                if t >= start && t < start + width {
                    amplitude
                } else if t >= start + width && t < start + 2.0 * width {
                    -amplitude
                } else {
                    0.0
                }
            }
            SignalConfig::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } => offset + amplitude * (2.0 * std::f64::consts::PI * frequency * t + phase).sin(),
        }
    }

    fn validate(&self, at: &str, errs: &mut Vec<String>) {
        let ok = match *self {
            SignalConfig::Constant { value } => value.is_finite(),
            SignalConfig::Doublet {
                amplitude,
                start,
                width,
            } => amplitude.is_finite() && start.is_finite() && width > 0.0 && width.is_finite(),
            SignalConfig::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } => [amplitude, frequency, phase, offset].iter().all(|v| v.is_finite()),
        };
        if !ok {
            errs.push(format!("{at}: parameters must be finite (and width positive)"));
        }
    }
}

/// A vector-valued command built from per-channel signals.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandSignal(pub Vec<SignalConfig>);

impl CommandSignal {
    pub fn eval(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.0.len(), self.0.iter().map(|s| s.eval(t)))
    }
}

// ---------------------------------------------------------------- built scenario

/// A physical clearance verified on trajectories, separate from the barrier
/// values (barriers may include a margin).
#[derive(Debug, Clone, PartialEq)]
pub enum Clearance {
    /// Distance of the planar position stored at state index `pos` from `center`.
    Obstacle {
        name: String,
        pos: usize,
        center: [f64; 2],
        radius: f64,
    },
    /// Distance between two planar positions.
    Pair {
        name: String,
        first: usize,
        second: usize,
        radius: f64,
    },
}

impl Clearance {
    pub fn name(&self) -> &str {
        match self {
            Clearance::Obstacle { name, .. } | Clearance::Pair { name, .. } => name,
        }
    }

    /// Distance minus radius at state `x`.
    pub fn margin(&self, x: &DVector<f64>) -> f64 {
        match self {
            Clearance::Obstacle {
                pos, center, radius, ..
            } => (x[*pos] - center[0]).hypot(x[pos + 1] - center[1]) - radius,
            Clearance::Pair {
                first,
                second,
                radius,
                ..
            } => (x[*first] - x[*second]).hypot(x[first + 1] - x[second + 1]) - radius,
        }
    }
}

pub struct Scenario {
    pub name: String,
    pub problem: FilterProblem,
    pub x0: DVector<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub integrator: Integrator,
    pub clearances: Vec<Clearance>,
    /// Whether the problem data is affine in `x` for frozen `t`.
    pub affine: bool,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("x0", &self.x0)
            .field("dt", &self.dt)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl Scenario {
    pub fn simulation_config(&self) -> SimulationConfig {
        SimulationConfig {
            integrator: self.integrator,
            ..SimulationConfig::new(self.dt, self.horizon)
        }
    }

    /// The smallest clearance margin over all samples, with its name.
    pub fn worst_clearance(&self, traj: &Trajectory) -> Option<(String, f64)> {
        self.clearances
            .iter()
            .map(|c| {
                let worst = traj
                    .states
                    .iter()
                    .map(|x| c.margin(x))
                    .fold(f64::INFINITY, f64::min);
                (c.name().to_string(), worst)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Registration self-checks around the initial state.
    pub fn self_check(&self, seed: u64) -> Vec<CheckFailure> {
        self.problem.self_check(&self.x0, 16, seed)
    }
}

// ---------------------------------------------------------------- loading

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
    build(&load_config(path)?)
}

pub fn from_str(text: &str) -> Result<Scenario, ScenarioError> {
    build(&parse_config(text)?)
}

/// Validate every dimension, then build.
pub fn build(cfg: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    let errs = audit(cfg);
    if !errs.is_empty() {
        return Err(ScenarioError::Invalid(errs));
    }
    build_with_weight(cfg, None)
}

/// Build with the weight replaced (used by checks that must proceed past an
/// invalid weight).
pub fn build_with_weight(
    cfg: &ScenarioConfig,
    weight_override: Option<DMatrix<f64>>,
) -> Result<Scenario, ScenarioError> {
    let integrator = match cfg.simulation.integrator {
        IntegratorConfig::Rk4 => Integrator::Rk4,
        IntegratorConfig::Euler => Integrator::Euler,
    };
    let mut sc = match cfg.kind {
        KindConfig::LinearAffine => build_linear(cfg, weight_override)?,
        KindConfig::Builtin => match cfg.builtin.as_deref() {
            Some("aircraft") => {
                let w = weight_override.or_else(|| cfg.weight.as_ref().map(|w| weight_matrix(Some(w), aircraft::INPUTS)));
                aircraft::build(cfg.aircraft.clone().unwrap_or_default(), cfg.command.as_ref(), w)?
            }
            Some("multi_agent") => {
                let w = weight_override
                    .or_else(|| cfg.weight.as_ref().map(|w| weight_matrix(Some(w), multi_agent::INPUTS)));
                multi_agent::build(cfg.multi_agent.clone().unwrap_or_default(), w)?
            }
            other => return Err(ScenarioError::Invalid(vec![format!("unknown builtin {other:?}")])),
        },
    };
    sc.name = cfg.name.clone();
    sc.dt = cfg.simulation.dt;
    sc.horizon = cfg.simulation.horizon;
    sc.integrator = integrator;
    if let Some(x0) = &cfg.simulation.x0 {
        sc.x0 = DVector::from_column_slice(x0);
    }
    Ok(sc)
}

fn matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

/// Shape of a row-major matrix, or an error if rows are ragged.
fn shape(rows: &[Vec<f64>], at: &str, errs: &mut Vec<String>) -> Option<(usize, usize)> {
    let c = rows.first().map_or(0, Vec::len);
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != c) {
        errs.push(format!("{at}: row {i} has {} entries, row 0 has {c}", row.len()));
        return None;
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        errs.push(format!("{at}: entries must be finite"));
    }
    Some((rows.len(), c))
}

fn expect_shape(rows: &[Vec<f64>], at: &str, want: (usize, usize), errs: &mut Vec<String>) {
    if let Some(got) = shape(rows, at, errs) {
        if got != want {
            errs.push(format!("{at}: shape {}x{}, expected {}x{}", got.0, got.1, want.0, want.1));
        }
    }
}

fn expect_len(v: &[f64], at: &str, want: usize, errs: &mut Vec<String>) {
    if v.len() != want {
        errs.push(format!("{at}: length {}, expected {want}", v.len()));
    }
    if v.iter().any(|x| x.is_nan()) {
        errs.push(format!("{at}: entries must not be NaN"));
    }
}

/// Dimension audit: every problem with the document, without building anything.
pub fn audit(cfg: &ScenarioConfig) -> Vec<String> {
    let mut errs = Vec::new();
    if cfg.schema_version != SCHEMA_VERSION {
        errs.push(format!(
            "schema_version: {} is not supported (expected {SCHEMA_VERSION})",
            cfg.schema_version
        ));
    }
    let sim = &cfg.simulation;
    if !(sim.dt > 0.0 && sim.dt.is_finite()) {
        errs.push(format!("simulation.dt: must be positive, got {}", sim.dt));
    }
    if !(sim.horizon >= sim.dt && sim.horizon.is_finite()) {
        errs.push(format!("simulation.horizon: must be at least dt, got {}", sim.horizon));
    }
    let (n, _m) = match cfg.kind {
        KindConfig::LinearAffine => {
            for (key, present) in [
                ("builtin", cfg.builtin.is_some()),
                ("aircraft", cfg.aircraft.is_some()),
                ("multi_agent", cfg.multi_agent.is_some()),
            ] {
                if present {
                    errs.push(format!("{key}: not allowed for kind = \"linear_affine\""));
                }
            }
            let Some(sys) = &cfg.system else {
                errs.push("system: required for kind = \"linear_affine\"".into());
                return errs;
            };
            let Some((n, n2)) = shape(&sys.a, "system.a", &mut errs) else {
                return errs;
            };
            if n != n2 {
                errs.push(format!("system.a: must be square, got {n}x{n2}"));
            }
            let m = match shape(&sys.b, "system.b", &mut errs) {
                Some((bn, m)) => {
                    if bn != n {
                        errs.push(format!("system.b: {bn} rows, expected {n}"));
                    }
                    m
                }
                None => return errs,
            };
            audit_linear(cfg, n, m, &mut errs);
            (n, m)
        }
        KindConfig::Builtin => {
            let dims = match cfg.builtin.as_deref() {
                Some("aircraft") => {
                    if cfg.multi_agent.is_some() {
                        errs.push("multi_agent: not allowed for builtin = \"aircraft\"".into());
                    }
                    aircraft::audit(cfg.aircraft.as_ref(), cfg.command.as_ref(), &mut errs)
                }
                Some("multi_agent") => {
                    if cfg.aircraft.is_some() {
                        errs.push("aircraft: not allowed for builtin = \"multi_agent\"".into());
                    }
                    if cfg.command.is_some() {
                        errs.push("command: not used by builtin = \"multi_agent\"".into());
                    }
                    multi_agent::audit(cfg.multi_agent.as_ref(), &mut errs)
                }
                Some(other) => {
                    errs.push(format!("builtin: unknown model {other:?} (expected aircraft or multi_agent)"));
                    return errs;
                }
                None => {
                    errs.push("builtin: required for kind = \"builtin\"".into());
                    return errs;
                }
            };
            for (key, present) in [
                ("system", cfg.system.is_some()),
                ("nominal", cfg.nominal.is_some()),
                ("barrier", !cfg.barriers.is_empty()),
                ("bounds", cfg.bounds.is_some()),
                ("slack", cfg.slack.is_some()),
            ] {
                if present {
                    errs.push(format!("{key}: not allowed for kind = \"builtin\" (use the model's section)"));
                }
            }
            if cfg.weight.is_some() {
                audit_weight(cfg.weight.as_ref(), dims.1, &mut errs);
            }
            dims
        }
    };
    if let Some(x0) = &sim.x0 {
        expect_len(x0, "simulation.x0", n, &mut errs);
    } else if cfg.kind == KindConfig::LinearAffine {
        errs.push("simulation.x0: required for kind = \"linear_affine\"".into());
    }
    errs
}

fn audit_weight(w: Option<&WeightSection>, m: usize, errs: &mut Vec<String>) {
    match w {
        None => {}
        Some(WeightSection {
            matrix: Some(mx),
            diagonal: None,
        }) => expect_shape(mx, "weight.matrix", (m, m), errs),
        Some(WeightSection {
            matrix: None,
            diagonal: Some(d),
        }) => expect_len(d, "weight.diagonal", m, errs),
        Some(_) => errs.push("weight: give exactly one of matrix or diagonal".into()),
    }
}

fn audit_linear(cfg: &ScenarioConfig, n: usize, m: usize, errs: &mut Vec<String>) {
    if let Some(nom) = &cfg.nominal {
        if let Some(g) = &nom.gain {
            expect_shape(g, "nominal.gain", (m, n), errs);
        }
        if let Some(o) = &nom.offset {
            expect_len(o, "nominal.offset", m, errs);
        }
    }
    audit_weight(cfg.weight.as_ref(), m, errs);
    for (i, b) in cfg.barriers.iter().enumerate() {
        let at = format!("barrier[{i}] ({})", b.name);
        if b.name.is_empty() || !b.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            errs.push(format!("{at}.name: use letters, digits, '_' or '-'"));
        }
        expect_len(&b.c, &format!("{at}.c"), n, errs);
        if let Some(g) = &b.gradient {
            expect_len(g, &format!("{at}.gradient"), n, errs);
        }
        let allowed: &[&str] = match b.kind {
            BarrierType::Affine => &["alpha"],
            BarrierType::AffineExponential => &["k1", "k2", "poles"],
            BarrierType::Feedthrough => &["e"],
        };
        for (key, present) in [
            ("alpha", b.alpha.is_some()),
            ("k1", b.k1.is_some()),
            ("k2", b.k2.is_some()),
            ("poles", b.poles.is_some()),
            ("e", b.e.is_some()),
        ] {
            if present && !allowed.contains(&key) {
                errs.push(format!("{at}.{key}: not used by this barrier type"));
            }
        }
        match b.kind {
            BarrierType::Affine => {
                if b.alpha.is_none() {
                    errs.push(format!("{at}.alpha: required"));
                }
            }
            BarrierType::AffineExponential => {
                let gains = b.k1.is_some() && b.k2.is_some();
                if gains == b.poles.is_some() {
                    errs.push(format!("{at}: give either k1 and k2, or poles"));
                }
            }
            BarrierType::Feedthrough => match &b.e {
                Some(e) => expect_len(e, &format!("{at}.e"), m, errs),
                None => errs.push(format!("{at}.e: required")),
            },
        }
    }
    let mut names: Vec<&str> = cfg.barriers.iter().map(|b| b.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        errs.push(format!("barrier names must be unique ({:?} repeats)", w[0]));
    }
    if let Some(bounds) = &cfg.bounds {
        expect_len(&bounds.lower, "bounds.lower", m, errs);
        expect_len(&bounds.upper, "bounds.upper", m, errs);
    }
    if let Some(s) = &cfg.slack {
        match (s.penalty, &s.penalties) {
            (Some(_), None) => {}
            (None, Some(p)) => expect_len(p, "slack.penalties", cfg.barriers.len(), errs),
            _ => errs.push("slack: give exactly one of penalty or penalties".into()),
        }
    }
    if let Some(cmd) = &cfg.command {
        for (i, s) in cmd.signals.iter().enumerate() {
            s.validate(&format!("command.signal[{i}]"), errs);
        }
        match &cmd.matrix {
            Some(e) => expect_shape(e, "command.matrix", (n, cmd.signals.len()), errs),
            None => errs.push("command.matrix: required for kind = \"linear_affine\"".into()),
        }
    }
}

pub(crate) fn weight_matrix(w: Option<&WeightSection>, m: usize) -> DMatrix<f64> {
    match w {
        Some(WeightSection {
            matrix: Some(mx), ..
        }) => matrix(mx),
        Some(WeightSection {
            diagonal: Some(d), ..
        }) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
        _ => DMatrix::identity(m, m),
    }
}

fn build_linear(cfg: &ScenarioConfig, weight_override: Option<DMatrix<f64>>) -> Result<Scenario, ScenarioError> {
    let sys = cfg.system.as_ref().expect("audited");
    let a = matrix(&sys.a);
    let b = matrix(&sys.b);
    let (n, m) = (a.nrows(), b.ncols());
    let mut system = LinearSystem::new(a.clone(), b)?;
    if let Some(cmd) = &cfg.command {
        let e = matrix(cmd.matrix.as_ref().expect("audited"));
        let signal = CommandSignal(cmd.signals.clone());
        system = system.with_exogenous(move |t| &e * signal.eval(t));
    }
    let gain = cfg
        .nominal
        .as_ref()
        .and_then(|nm| nm.gain.as_ref())
        .map_or_else(|| DMatrix::zeros(m, n), |g| matrix(g));
    let offset = cfg
        .nominal
        .as_ref()
        .and_then(|nm| nm.offset.as_ref())
        .map_or_else(|| DVector::zeros(m), |o| DVector::from_column_slice(o));
    let nominal: NominalFn = Arc::new(move |x: &DVector<f64>, _t| &gain * x + &offset);
    let weight = weight_override.unwrap_or_else(|| weight_matrix(cfg.weight.as_ref(), m));

    let mut barriers = Vec::new();
    for bc in &cfg.barriers {
        let c = DVector::from_column_slice(&bc.c);
        let mut barrier = match bc.kind {
            BarrierType::Affine => Barrier::affine(&bc.name, c, bc.d, bc.alpha.as_ref().expect("audited").to_class_k()),
            BarrierType::AffineExponential => {
                let (k1, k2) = match bc.poles {
                    Some([p1, p2]) => exponential_gains_from_poles(p1, p2).map_err(|e| match e {
                        FrontendError::InvalidGain { reason, .. } => FrontendError::InvalidGain {
                            barrier: bc.name.clone(),
                            reason,
                        },
                        other => other,
                    })?,
                    None => (bc.k1.expect("audited"), bc.k2.expect("audited")),
                };
                Barrier::affine_exponential(&bc.name, c, bc.d, k1, k2, &a)
            }
            BarrierType::Feedthrough => {
                Barrier::feedthrough(&bc.name, c, bc.d, DVector::from_column_slice(bc.e.as_ref().expect("audited")))
            }
        };
        if let Some(g) = &bc.gradient {
            let g = DVector::from_column_slice(g);
            let cv = DVector::from_column_slice(&bc.c);
            let d = bc.d;
            barrier = Barrier::new(
                &bc.name,
                Arc::new(move |x: &DVector<f64>| cv.dot(x) + d),
                Arc::new(move |_x: &DVector<f64>| g.clone()),
                barrier.kind().clone(),
            );
        }
        barriers.push(barrier);
    }
    let count = barriers.len();
    let mut builder = FilterProblem::builder(system, nominal, weight).barriers(barriers);
    if let Some(bounds) = &cfg.bounds {
        builder = builder.input_bounds(InputBounds {
            lower: DVector::from_column_slice(&bounds.lower),
            upper: DVector::from_column_slice(&bounds.upper),
        });
    }
    if let Some(s) = &cfg.slack {
        let policy = match (s.penalty, &s.penalties) {
            (Some(rho), _) => SlackPolicy::uniform(rho, count),
            (None, Some(p)) => SlackPolicy {
                penalties: p.iter().map(|&r| Some(r)).collect(),
            },
            (None, None) => unreachable!("audited"),
        };
        builder = builder.slack(policy);
    }
    let problem = builder.build()?;
    Ok(Scenario {
        name: String::new(),
        problem,
        x0: DVector::zeros(n),
        dt: 0.0,
        horizon: 0.0,
        integrator: Integrator::Rk4,
        clearances: Vec::new(),
        affine: true,
    })
}

/// Physical input dimension declared by the document, if it names a known model.
pub fn input_dim(cfg: &ScenarioConfig) -> Option<usize> {
    match cfg.kind {
        KindConfig::LinearAffine => Some(cfg.system.as_ref().and_then(|s| s.b.first()).map_or(0, Vec::len)),
        KindConfig::Builtin => match cfg.builtin.as_deref() {
            Some("aircraft") => Some(aircraft::INPUTS),
            Some("multi_agent") => Some(multi_agent::INPUTS),
            _ => None,
        },
    }
}

/// Validate a weight without building anything else.
pub fn check_weight(cfg: &ScenarioConfig) -> Result<(), String> {
    let Some(m) = input_dim(cfg) else {
        return Ok(());
    };
    let w = match cfg.kind {
        KindConfig::LinearAffine => weight_matrix(cfg.weight.as_ref(), m),
        KindConfig::Builtin => match (cfg.builtin.as_deref(), &cfg.weight) {
            (Some("aircraft"), None) => aircraft::filter_weight(cfg.aircraft.as_ref()),
            _ => weight_matrix(cfg.weight.as_ref(), m),
        },
    };
    WeightMatrix::new(w).map(|_| ()).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_D: &str = r#"
schema_version = 1
name = "wall"
kind = "linear_affine"

[simulation]
dt = 0.01
horizon = 1.0
x0 = [0.0]

[system]
a = [[0.0]]
b = [[1.0]]

[nominal]
offset = [1.0]

[[barrier]]
name = "wall"
type = "affine"
c = [-1.0]
d = 1.0
alpha = { kind = "linear", gain = 1.0 }
"#;

    #[test]
    fn parses_and_builds() {
        let sc = from_str(ONE_D).unwrap();
        assert_eq!(sc.name, "wall");
        assert_eq!(sc.problem.row_count(), 1);
        assert_eq!(sc.simulation_config().samples(), 100);
        assert!(sc.self_check(1).is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = ONE_D.replace("horizon = 1.0", "horizon = 1.0\nhorizn = 2.0");
        let err = from_str(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse(ref m) if m.contains("horizn")), "{err}");
    }

    #[test]
    fn dimension_errors_are_all_listed() {
        let text = ONE_D
            .replace("x0 = [0.0]", "x0 = [0.0, 1.0]")
            .replace("c = [-1.0]", "c = [-1.0, 2.0]");
        match from_str(&text).unwrap_err() {
            ScenarioError::Invalid(errs) => {
                assert_eq!(errs.len(), 2, "{errs:?}");
                assert!(errs.iter().any(|e| e.starts_with("simulation.x0")));
                assert!(errs.iter().any(|e| e.contains("wall") && e.contains(".c")));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn schema_version_is_checked() {
        let text = ONE_D.replace("schema_version = 1", "schema_version = 7");
        assert!(matches!(from_str(&text), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn doublet_signal() {
        let s = SignalConfig::Doublet {
            amplitude: 0.3,
            start: 1.0,
            width: 2.0,
        };
        assert_eq!(s.eval(0.5), 0.0);
        assert_eq!(s.eval(1.0), 0.3);
        assert_eq!(s.eval(3.0), -0.3);
        assert_eq!(s.eval(5.0), 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let text = ONE_D.replace("d = 1.0\n", "d = 1.0\ngradient = [1.0]\n");
        let sc = from_str(&text).unwrap();
        let fails = sc.self_check(3);
        assert_eq!(fails.len(), 1);
        assert!(fails[0].to_string().contains("wall"));
    }
}
