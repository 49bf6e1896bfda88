//! Pointwise active-set region tests.
//!
//! A state lies in region `R_I` iff `B_I` has full column rank, the candidate
//! multipliers are nonnegative and every row outside `I` is strictly slack at
//! `u_I`. The two trigger values summarize the last two conditions so a
//! cached index set can be re-validated with one candidate evaluation.

use nalgebra::DVector;

use crate::qp::{
    candidate, ActiveSet, Candidate, ConstraintSet, RankDeficient, Tolerances, WeightMatrix,
};

/// `s1_min = min(lambda_I)` (`+inf` for `I = {}`) and
/// `s2_max = max_{j not in I} b_j' u_I + a_j` (`-inf` when `I` holds every row).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerValues {
    pub s1_min: f64,
    pub s2_max: f64,
}

impl TriggerValues {
    pub fn from_candidate(cand: &Candidate, constraints: &ConstraintSet) -> Self {
        let s1_min = cand
            .multipliers
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let set = &cand.index_set;
        let s2_max = (0..constraints.len())
            .filter(|&j| !set.contains(j))
            .map(|j| constraints.row_value(j, &cand.control))
            .fold(f64::NEG_INFINITY, f64::max);
        Self { s1_min, s2_max }
    }

    pub fn dual_ok(&self, tol: &Tolerances) -> bool {
        self.s1_min >= -tol.dual
    }

    pub fn primal_ok(&self, tol: &Tolerances) -> bool {
        self.s2_max < tol.primal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reason {
    RankFailed,
    DualNegative,
    InactiveViolated,
    Member,
}

impl Reason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Reason::RankFailed => "rank_failed",
            Reason::DualNegative => "dual_negative",
            Reason::InactiveViolated => "inactive_violated",
            Reason::Member => "member",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipResult {
    pub reason: Reason,
    /// Present whenever the rank test passed.
    pub candidate: Option<Candidate>,
    pub triggers: Option<TriggerValues>,
}

impl MembershipResult {
    pub fn in_region(&self) -> bool {
        self.reason == Reason::Member
    }
}

/// Evaluate the rank, dual and strict-inactive tests in that order.
pub fn membership(
    constraints: &ConstraintSet,
    nominal: &DVector<f64>,
    weight: &WeightMatrix,
    set: &ActiveSet,
    tol: &Tolerances,
) -> MembershipResult {
    let cand = match candidate(constraints, nominal, weight, set, tol) {
        Ok(c) => c,
        Err(_) => {
            return MembershipResult {
                reason: Reason::RankFailed,
                candidate: None,
                triggers: None,
            }
        }
    };
    let trig = TriggerValues::from_candidate(&cand, constraints);
    let reason = if !trig.dual_ok(tol) {
        Reason::DualNegative
    } else if !trig.primal_ok(tol) {
        Reason::InactiveViolated
    } else {
        Reason::Member
    };
    MembershipResult {
        reason,
        candidate: Some(cand),
        triggers: Some(trig),
    }
}

pub fn triggers(
    constraints: &ConstraintSet,
    nominal: &DVector<f64>,
    weight: &WeightMatrix,
    set: &ActiveSet,
    tol: &Tolerances,
) -> Result<TriggerValues, RankDeficient> {
    let cand = candidate(constraints, nominal, weight, set, tol)?;
    Ok(TriggerValues::from_candidate(&cand, constraints))
}
