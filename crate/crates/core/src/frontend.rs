//! Assembles the state-dependent QP data from dynamics, barriers, input
//! bounds and slack relaxation.
//!
//! Row layout of an assembled [`ConstraintSet`], which is stable across calls:
//!
//! 1. one row per barrier, in registration order;
//! 2. input-bound rows, for each input `j` in order: the lower bound (if
//!    finite) then the upper bound (if finite).
//!
//! The decision vector is `(u, delta)` where `delta` holds one slack per
//! slacked barrier, in barrier order. A slacked barrier row reads
//! `b' u - delta_i + a <= 0`. Nonnegativity of `delta` is not stacked as
//! extra rows: with the quadratic penalty `rho_i delta_i^2` and nominal
//! slack zero, a negative slack is never optimal.
//!
//! User-supplied closures must be safe to call concurrently (`Send + Sync`);
//! [`FilterProblem`] is shared read-only between simulations.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::qp::{ConstraintSet, WeightError, WeightMatrix};

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// A function of state and time.
pub type TimedVectorFn = Arc<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>;

/// `x' = f(x, t) + g(x, t) u`.
pub trait ControlAffineSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn drift(&self, x: &DVector<f64>, t: f64) -> DVector<f64>;
    fn input_matrix(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64>;

    fn velocity(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
        self.drift(x, t) + self.input_matrix(x, t) * u
    }
}

/// `x' = A x + B u + w(t)`.
#[derive(Clone)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    exogenous: Option<Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, FrontendError> {
        if !a.is_square() {
            return Err(FrontendError::Dimension {
                what: "A".into(),
                got: a.ncols(),
                expected: a.nrows(),
            });
        }
        if b.nrows() != a.nrows() {
            return Err(FrontendError::Dimension {
                what: "B rows".into(),
                got: b.nrows(),
                expected: a.nrows(),
            });
        }
        Ok(Self {
            a,
            b,
            exogenous: None,
        })
    }

    /// Add a time-varying input `w(t)` to the drift.
    pub fn with_exogenous<F>(mut self, w: F) -> Self
    where
        F: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        self.exogenous = Some(Arc::new(w));
        self
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
}

impl fmt::Debug for LinearSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearSystem")
            .field("a", &self.a)
            .field("b", &self.b)
            .field("exogenous", &self.exogenous.is_some())
            .finish()
    }
}

impl ControlAffineSystem for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn drift(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut f = &self.a * x;
        if let Some(w) = &self.exogenous {
            f += w(t);
        }
        f
    }

    fn input_matrix(&self, _x: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        self.b.clone()
    }
}

/// Class-K gain `alpha`, linear `c s` or cubic `c s^3`, with `c > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassK {
    Linear(f64),
    Cubic(f64),
}

impl ClassK {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            ClassK::Linear(c) => c * s,
            ClassK::Cubic(c) => c * s * s * s,
        }
    }

    fn gain(&self) -> f64 {
        match *self {
            ClassK::Linear(c) | ClassK::Cubic(c) => c,
        }
    }
}

/// Gains `(k1, k2)` whose closed-loop barrier dynamics
/// `h'' + (k1 + k2) h' + k1 k2 h = 0` have poles at `p1`, `p2`.
pub fn exponential_gains_from_poles(p1: f64, p2: f64) -> Result<(f64, f64), FrontendError> {
    if !(p1 < 0.0 && p2 < 0.0) {
        return Err(FrontendError::InvalidGain {
            barrier: String::new(),
            reason: format!("poles must be real and negative, got {p1}, {p2}"),
        });
    }
    Ok((-p1, -p2))
}

#[derive(Clone)]
pub enum BarrierKind {
    /// `L_f h + L_g h u + alpha(h) >= 0`.
    RelativeDegreeOne { alpha: ClassK },
    /// Relative degree two: `h'' + (k1 + k2) h' + k1 k2 h >= 0`.
    ///
    /// `lie_gradient(x, t)` must return the gradient of `L_f h = grad(h)' f`.
    ExponentialOrder2 {
        k1: f64,
        k2: f64,
        lie_gradient: TimedVectorFn,
    },
    /// `h(x, u) = value(x) + input_gain' u >= 0` enforced directly (outputs with feedthrough).
    Feedthrough { input_gain: DVector<f64> },
}

impl fmt::Debug for BarrierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BarrierKind::RelativeDegreeOne { alpha } => {
                f.debug_struct("RelativeDegreeOne").field("alpha", alpha).finish()
            }
            BarrierKind::ExponentialOrder2 { k1, k2, .. } => f
                .debug_struct("ExponentialOrder2")
                .field("k1", k1)
                .field("k2", k2)
                .finish_non_exhaustive(),
            BarrierKind::Feedthrough { input_gain } => f
                .debug_struct("Feedthrough")
                .field("input_gain", input_gain)
                .finish(),
        }
    }
}

/// One barrier function `h_i` with its gradient and how its row is formed.
#[derive(Clone)]
pub struct Barrier {
    name: String,
    value: ScalarFn,
    gradient: VectorFn,
    kind: BarrierKind,
}

impl fmt::Debug for Barrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Barrier")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

impl Barrier {
    pub fn new(name: impl Into<String>, value: ScalarFn, gradient: VectorFn, kind: BarrierKind) -> Self {
        Self {
            name: name.into(),
            value,
            gradient,
            kind,
        }
    }

    /// `h(x) = c' x + d`.
    pub fn affine(name: impl Into<String>, c: DVector<f64>, d: f64, alpha: ClassK) -> Self {
        let cv = c.clone();
        Self::new(
            name,
            Arc::new(move |x: &DVector<f64>| cv.dot(x) + d),
            Arc::new(move |_x: &DVector<f64>| c.clone()),
            BarrierKind::RelativeDegreeOne { alpha },
        )
    }

    /// `h(x) = c' x + d` with relative degree two under `x' = A x + B u + w(t)`.
    pub fn affine_exponential(
        name: impl Into<String>,
        c: DVector<f64>,
        d: f64,
        k1: f64,
        k2: f64,
        a: &DMatrix<f64>,
    ) -> Self {
        let cv = c.clone();
        let cg = c.clone();
        let lie = a.tr_mul(&c);
        Self::new(
            name,
            Arc::new(move |x: &DVector<f64>| cv.dot(x) + d),
            Arc::new(move |_x: &DVector<f64>| cg.clone()),
            BarrierKind::ExponentialOrder2 {
                k1,
                k2,
                lie_gradient: Arc::new(move |_x: &DVector<f64>, _t| lie.clone()),
            },
        )
    }

    /// `h(x, u) = c' x + d + e' u`.
    pub fn feedthrough(name: impl Into<String>, c: DVector<f64>, d: f64, e: DVector<f64>) -> Self {
        let cv = c.clone();
        Self::new(
            name,
            Arc::new(move |x: &DVector<f64>| cv.dot(x) + d),
            Arc::new(move |_x: &DVector<f64>| c.clone()),
            BarrierKind::Feedthrough { input_gain: e },
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &BarrierKind {
        &self.kind
    }

    /// `h(x)`; for feedthrough barriers this is the state part only.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }

    /// `h` including the input term of feedthrough barriers.
    pub fn value_with_input(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        match &self.kind {
            BarrierKind::Feedthrough { input_gain } => self.value(x) + input_gain.dot(u),
            _ => self.value(x),
        }
    }

    fn validate(&self, m: usize) -> Result<(), FrontendError> {
        let bad = |reason: String| FrontendError::InvalidGain {
            barrier: self.name.clone(),
            reason,
        };
        match &self.kind {
            BarrierKind::RelativeDegreeOne { alpha } => {
                let c = alpha.gain();
                if !(c > 0.0 && c.is_finite()) {
                    return Err(bad(format!("class-K gain must be positive, got {c}")));
                }
            }
            BarrierKind::ExponentialOrder2 { k1, k2, .. } => {
                if !(*k1 > 0.0 && *k2 > 0.0 && k1.is_finite() && k2.is_finite()) {
                    return Err(bad(format!("exponential gains must be positive, got {k1}, {k2}")));
                }
            }
            BarrierKind::Feedthrough { input_gain } => {
                if input_gain.len() != m {
                    return Err(FrontendError::Dimension {
                        what: format!("feedthrough gain of {}", self.name),
                        got: input_gain.len(),
                        expected: m,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Row `b' u + a <= 0` over the system inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub b: DVector<f64>,
    pub a: f64,
}

impl ConstraintRow {
    /// The input cannot influence this row at the evaluated state.
    pub fn is_vanishing(&self) -> bool {
        self.b.norm() < 1e-12
    }
}

/// The affine-in-`u` row enforcing one barrier at `(x, t)`.
pub fn constraint_row(
    barrier: &Barrier,
    system: &dyn ControlAffineSystem,
    x: &DVector<f64>,
    t: f64,
) -> ConstraintRow {
    let f = system.drift(x, t);
    let g = system.input_matrix(x, t);
    match &barrier.kind {
        BarrierKind::RelativeDegreeOne { alpha } => {
            let grad = barrier.gradient(x);
            let lf = grad.dot(&f);
            let lg = g.tr_mul(&grad);
            ConstraintRow {
                b: -lg,
                a: -lf - alpha.eval(barrier.value(x)),
            }
        }
        BarrierKind::ExponentialOrder2 {
            k1,
            k2,
            lie_gradient,
        } => {
            let h = barrier.value(x);
            let lf = barrier.gradient(x).dot(&f);
            let grad_lf = lie_gradient(x, t);
            let lf2 = grad_lf.dot(&f);
            let lglf = g.tr_mul(&grad_lf);
            ConstraintRow {
                b: -lglf,
                a: -lf2 - (k1 + k2) * lf - k1 * k2 * h,
            }
        }
        BarrierKind::Feedthrough { input_gain } => ConstraintRow {
            b: -input_gain.clone(),
            a: -barrier.value(x),
        },
    }
}

/// Per-component input bounds; use infinities for absent sides.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl InputBounds {
    pub fn symmetric(limit: f64, m: usize) -> Self {
        Self {
            lower: DVector::from_element(m, -limit),
            upper: DVector::from_element(m, limit),
        }
    }

    fn row_count(&self) -> usize {
        self.lower.iter().filter(|v| v.is_finite()).count()
            + self.upper.iter().filter(|v| v.is_finite()).count()
    }
}

/// Per-barrier slack penalty `rho_i`; `None` leaves the barrier hard.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackPolicy {
    pub penalties: Vec<Option<f64>>,
}

impl SlackPolicy {
    pub fn uniform(rho: f64, barriers: usize) -> Self {
        Self {
            penalties: vec![Some(rho); barriers],
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrontendError {
    #[error("{what}: got dimension {got}, expected {expected}")]
    Dimension {
        what: String,
        got: usize,
        expected: usize,
    },
    #[error("weight: {0}")]
    Weight(#[from] WeightError),
    #[error("barrier {barrier:?}: {reason}")]
    InvalidGain { barrier: String, reason: String },
    #[error("slack penalty for barrier {index} must be positive and finite, got {value}")]
    InvalidSlack { index: usize, value: f64 },
    #[error("input bound {index}: lower {lower} exceeds upper {upper}")]
    InvalidBounds { index: usize, lower: f64, upper: f64 },
}

/// Nominal controller `k(x, t)`.
pub type NominalFn = TimedVectorFn;

/// The full safety-filter QP: dynamics, barriers, nominal controller and weight.
#[derive(Clone)]
pub struct FilterProblem {
    system: Arc<dyn ControlAffineSystem>,
    barriers: Vec<Barrier>,
    nominal: NominalFn,
    input_weight: WeightMatrix,
    bounds: Option<InputBounds>,
    slack: Option<SlackPolicy>,
    weight: WeightMatrix,
    slack_slot: Vec<Option<usize>>,
}

impl fmt::Debug for FilterProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilterProblem")
            .field("n", &self.state_dim())
            .field("m", &self.input_dim())
            .field("barriers", &self.barriers)
            .field("bounds", &self.bounds)
            .field("slack", &self.slack)
            .finish_non_exhaustive()
    }
}

pub struct FilterProblemBuilder {
    system: Arc<dyn ControlAffineSystem>,
    nominal: NominalFn,
    weight: DMatrix<f64>,
    barriers: Vec<Barrier>,
    bounds: Option<InputBounds>,
    slack: Option<SlackPolicy>,
}

impl FilterProblemBuilder {
    pub fn barrier(mut self, b: Barrier) -> Self {
        self.barriers.push(b);
        self
    }

    pub fn barriers<I: IntoIterator<Item = Barrier>>(mut self, bs: I) -> Self {
        self.barriers.extend(bs);
        self
    }

    pub fn input_bounds(mut self, bounds: InputBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn slack(mut self, policy: SlackPolicy) -> Self {
        self.slack = Some(policy);
        self
    }

    pub fn build(self) -> Result<FilterProblem, FrontendError> {
        let m = self.system.input_dim();
        if self.weight.nrows() != m {
            return Err(FrontendError::Dimension {
                what: "weight".into(),
                got: self.weight.nrows(),
                expected: m,
            });
        }
        let input_weight = WeightMatrix::new(self.weight)?;
        for b in &self.barriers {
            b.validate(m)?;
        }
        if let Some(bounds) = &self.bounds {
            for (what, v) in [("lower bounds", &bounds.lower), ("upper bounds", &bounds.upper)] {
                if v.len() != m {
                    return Err(FrontendError::Dimension {
                        what: what.into(),
                        got: v.len(),
                        expected: m,
                    });
                }
            }
            for j in 0..m {
                if bounds.lower[j] > bounds.upper[j] || bounds.lower[j].is_nan() || bounds.upper[j].is_nan() {
                    return Err(FrontendError::InvalidBounds {
                        index: j,
                        lower: bounds.lower[j],
                        upper: bounds.upper[j],
                    });
                }
            }
        }
        let mut slack_slot = vec![None; self.barriers.len()];
        let mut penalties = Vec::new();
        if let Some(policy) = &self.slack {
            if policy.penalties.len() != self.barriers.len() {
                return Err(FrontendError::Dimension {
                    what: "slack penalties".into(),
                    got: policy.penalties.len(),
                    expected: self.barriers.len(),
                });
            }
            for (i, rho) in policy.penalties.iter().enumerate() {
                if let Some(rho) = *rho {
                    if !(rho > 0.0 && rho.is_finite()) {
                        return Err(FrontendError::InvalidSlack { index: i, value: rho });
                    }
                    slack_slot[i] = Some(penalties.len());
                    penalties.push(rho);
                }
            }
        }
        let weight = input_weight.augmented(&penalties)?;
        Ok(FilterProblem {
            system: self.system,
            barriers: self.barriers,
            nominal: self.nominal,
            input_weight,
            bounds: self.bounds,
            slack: self.slack,
            weight,
            slack_slot,
        })
    }
}

/// QP data at one `(x, t)`.
#[derive(Debug, Clone)]
pub struct Assembled<'a> {
    pub constraints: ConstraintSet,
    pub nominal: DVector<f64>,
    pub weight: &'a WeightMatrix,
}

/// A failed registration self-check.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckFailure {
    Gradient { barrier: String, relative_error: f64 },
    LieGradient { barrier: String, relative_error: f64 },
    /// An exponential barrier whose `L_g h` is not zero.
    RelativeDegree { barrier: String, lg_norm: f64 },
    NonFinite { what: String },
}

impl fmt::Display for CheckFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckFailure::Gradient { barrier, relative_error } => write!(
                f,
                "gradient of barrier {barrier:?} disagrees with finite differences (relative error {relative_error:.3e})"
            ),
            CheckFailure::LieGradient { barrier, relative_error } => write!(
                f,
                "Lie-derivative gradient of barrier {barrier:?} disagrees with finite differences (relative error {relative_error:.3e})"
            ),
            CheckFailure::RelativeDegree { barrier, lg_norm } => write!(
                f,
                "barrier {barrier:?} is declared relative degree two but |L_g h| = {lg_norm:.3e}"
            ),
            CheckFailure::NonFinite { what } => write!(f, "non-finite value in {what}"),
        }
    }
}

/// Relative tolerance of the finite-difference gradient check.
pub const GRADIENT_CHECK_TOL: f64 = 1e-5;

fn central_difference<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>) -> DVector<f64> {
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

fn relative_error(exact: &DVector<f64>, approx: &DVector<f64>) -> f64 {
    (exact - approx).norm() / exact.norm().max(1.0)
}

impl FilterProblem {
    pub fn builder<S>(system: S, nominal: NominalFn, weight: DMatrix<f64>) -> FilterProblemBuilder
    where
        S: ControlAffineSystem + 'static,
    {
        Self::builder_shared(Arc::new(system), nominal, weight)
    }

    pub fn builder_shared(
        system: Arc<dyn ControlAffineSystem>,
        nominal: NominalFn,
        weight: DMatrix<f64>,
    ) -> FilterProblemBuilder {
        FilterProblemBuilder {
            system,
            nominal,
            weight,
            barriers: Vec::new(),
            bounds: None,
            slack: None,
        }
    }

    pub fn system(&self) -> &dyn ControlAffineSystem {
        self.system.as_ref()
    }

    pub fn barriers(&self) -> &[Barrier] {
        &self.barriers
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    /// Number of physical inputs `m`.
    pub fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    /// `m` plus the number of slacked barriers.
    pub fn decision_dim(&self) -> usize {
        self.weight.dim()
    }

    pub fn row_count(&self) -> usize {
        self.barriers.len() + self.bounds.as_ref().map_or(0, InputBounds::row_count)
    }

    /// Decision-space weight `diag(R, rho)`.
    pub fn weight(&self) -> &WeightMatrix {
        &self.weight
    }

    pub fn input_weight(&self) -> &WeightMatrix {
        &self.input_weight
    }

    pub fn input_bounds(&self) -> Option<&InputBounds> {
        self.bounds.as_ref()
    }

    pub fn slack_policy(&self) -> Option<&SlackPolicy> {
        self.slack.as_ref()
    }

    /// `k(x, t)` over the physical inputs.
    pub fn nominal(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        (self.nominal)(x, t)
    }

    /// Physical input part of a decision vector.
    pub fn input_part(&self, decision: &DVector<f64>) -> DVector<f64> {
        decision.rows(0, self.input_dim()).into_owned()
    }

    /// Stack all rows at `(x, t)` over the decision vector.
    pub fn assemble(&self, x: &DVector<f64>, t: f64) -> Assembled<'_> {
        let m = self.input_dim();
        let d = self.decision_dim();
        let rows = self.row_count();
        let mut b = DMatrix::zeros(d, rows);
        let mut a = DVector::zeros(rows);
        for (i, barrier) in self.barriers.iter().enumerate() {
            let row = constraint_row(barrier, self.system.as_ref(), x, t);
            b.view_mut((0, i), (m, 1)).copy_from(&row.b);
            if let Some(slot) = self.slack_slot[i] {
                b[(m + slot, i)] = -1.0;
            }
            a[i] = row.a;
        }
        let mut r = self.barriers.len();
        if let Some(bounds) = &self.bounds {
            for j in 0..m {
                if bounds.lower[j].is_finite() {
                    b[(j, r)] = -1.0;
                    a[r] = bounds.lower[j];
                    r += 1;
                }
                if bounds.upper[j].is_finite() {
                    b[(j, r)] = 1.0;
                    a[r] = -bounds.upper[j];
                    r += 1;
                }
            }
        }
        let mut nominal = DVector::zeros(d);
        nominal.rows_mut(0, m).copy_from(&self.nominal(x, t));
        Assembled {
            constraints: ConstraintSet::new(b, a).unwrap_or_else(|e| {
                panic!("assembled rows at t = {t} are not finite: {e}")
            }),
            nominal,
            weight: &self.weight,
        }
    }

    /// `h_i` for every barrier, with the physical input applied to feedthrough barriers.
    pub fn barrier_values(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.barriers.len(),
            self.barriers.iter().map(|b| b.value_with_input(x, u)),
        )
    }

    /// Finite-difference checks of every barrier gradient (and Lie-derivative
    /// gradient) at `samples` states drawn around `center` with unit spread.
    pub fn self_check(&self, center: &DVector<f64>, samples: usize, seed: u64) -> Vec<CheckFailure> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut failures: Vec<CheckFailure> = Vec::new();
        let record = |f: CheckFailure, failures: &mut Vec<CheckFailure>| {
            let same = |a: &CheckFailure, b: &CheckFailure| {
                std::mem::discriminant(a) == std::mem::discriminant(b) && check_name(a) == check_name(b)
            };
            if !failures.iter().any(|g| same(g, &f)) {
                failures.push(f);
            }
        };
        for _ in 0..samples.max(1) {
            let x = center
                + DVector::from_fn(center.len(), |_, _| rng.random_range(-1.0..1.0));
            for barrier in &self.barriers {
                let grad = barrier.gradient(&x);
                if !barrier.value(&x).is_finite() || grad.iter().any(|v| !v.is_finite()) {
                    record(
                        CheckFailure::NonFinite {
                            what: format!("barrier {:?}", barrier.name),
                        },
                        &mut failures,
                    );
                    continue;
                }
                let fd = central_difference(|y| barrier.value(y), &x);
                let err = relative_error(&grad, &fd);
                if err > GRADIENT_CHECK_TOL {
                    record(
                        CheckFailure::Gradient {
                            barrier: barrier.name.clone(),
                            relative_error: err,
                        },
                        &mut failures,
                    );
                }
                if let BarrierKind::ExponentialOrder2 { lie_gradient, .. } = &barrier.kind {
                    let t = 0.0;
                    let lf = |y: &DVector<f64>| barrier.gradient(y).dot(&self.system.drift(y, t));
                    let exact = lie_gradient(&x, t);
                    let err = relative_error(&exact, &central_difference(lf, &x));
                    if err > GRADIENT_CHECK_TOL {
                        record(
                            CheckFailure::LieGradient {
                                barrier: barrier.name.clone(),
                                relative_error: err,
                            },
                            &mut failures,
                        );
                    }
                    let lg = self.system.input_matrix(&x, t).tr_mul(&grad).norm();
                    if lg > 1e-9 * grad.norm().max(1.0) {
                        record(
                            CheckFailure::RelativeDegree {
                                barrier: barrier.name.clone(),
                                lg_norm: lg,
                            },
                            &mut failures,
                        );
                    }
                }
            }
        }
        failures
    }
}

fn check_name(f: &CheckFailure) -> &str {
    match f {
        CheckFailure::Gradient { barrier, .. }
        | CheckFailure::LieGradient { barrier, .. }
        | CheckFailure::RelativeDegree { barrier, .. } => barrier,
        CheckFailure::NonFinite { what } => what,
    }
}
