//! Oracles returning the optimal active set `I*(x)` for one QP instance.
//!
//! Two realizations are provided:
//!
//! * [`theta_enumerate`] walks subsets by increasing cardinality, then
//!   lexicographically, and returns the first one whose region test passes.
//! * [`theta_active_set`] is an active-set iteration that starts from a warm
//!   working set. It keeps the working set dual feasible (every multiplier
//!   nonnegative), drops the most negative multiplier, and adds the most
//!   violated excluded row with a ratio step that removes a blocking row
//!   when its multiplier would cross zero. It needs no feasible starting
//!   point, which is what makes warm starts from a stale set possible.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::qp::{
    candidate, gram_factorize_indices, kkt_residuals_full, ActiveSet, ConstraintSet, KktReport,
    Tolerances, WeightMatrix,
};
use crate::region::membership;

/// Largest number of subset checks [`theta_enumerate`] accepts.
pub const SUBSET_BUDGET: u128 = 1_000_000;

/// Penalty on the squared slack in the feasibility probe.
pub const PROBE_PENALTY: f64 = 1e6;

/// Probe slack above which the QP is declared infeasible.
pub const PROBE_SLACK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    DegenerateLICQ,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::DegenerateLICQ => "degenerate_licq",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub control: DVector<f64>,
    /// Length `p`, zero off the active set.
    pub multipliers: DVector<f64>,
    pub active_set: ActiveSet,
    /// Subset checks for enumeration; adds plus drops for the active-set iteration.
    pub iterations: usize,
    pub status: Status,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn kkt(
        &self,
        constraints: &ConstraintSet,
        nominal: &DVector<f64>,
        weight: &WeightMatrix,
    ) -> KktReport {
        kkt_residuals_full(
            &self.control,
            &self.multipliers,
            constraints,
            nominal,
            weight,
        )
    }

    /// Distance of the instance from a region boundary: the smaller of the
    /// least active multiplier and the least inactive slack `-(b_j' u + a_j)`.
    /// `+inf` when there is nothing to be close to.
    pub fn boundary_margin(&self, constraints: &ConstraintSet) -> f64 {
        (0..constraints.len())
            .map(|i| {
                if self.active_set.contains(i) {
                    self.multipliers[i]
                } else {
                    -constraints.row_value(i, &self.control)
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration needs {subsets} subset checks, budget is {budget}")]
    BudgetExceeded { subsets: u128, budget: u128 },
}

/// `sum_{k <= max_card} C(p, k)`, saturating.
pub fn subset_count(p: usize, max_card: usize) -> u128 {
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    for k in 0..=max_card.min(p) {
        total = total.saturating_add(binom);
        binom = binom.saturating_mul((p - k) as u128) / (k as u128 + 1);
    }
    total
}

/// Selects which oracle realizes `Theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Theta {
    Enumerate,
    #[default]
    ActiveSet,
}

impl Theta {
    /// Run the oracle; `warm` is ignored by enumeration.
    pub fn solve(
        &self,
        constraints: &ConstraintSet,
        nominal: &DVector<f64>,
        weight: &WeightMatrix,
        warm: &ActiveSet,
        tol: &Tolerances,
    ) -> Result<SolveResult, OracleError> {
        match self {
            Theta::Enumerate => theta_enumerate(constraints, nominal, weight, tol),
            Theta::ActiveSet => Ok(theta_active_set(constraints, nominal, weight, warm, tol)),
        }
    }
}

impl FromStr for Theta {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "enumerate" => Ok(Theta::Enumerate),
            "activeset" | "active-set" | "active_set" => Ok(Theta::ActiveSet),
            other => Err(format!("unknown oracle {other:?}, expected enumerate|activeset")),
        }
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Theta::Enumerate => "enumerate",
            Theta::ActiveSet => "activeset",
        })
    }
}

fn optimal_result(
    constraints: &ConstraintSet,
    nominal: &DVector<f64>,
    weight: &WeightMatrix,
    set: &ActiveSet,
    iterations: usize,
    tol: &Tolerances,
) -> Option<SolveResult> {
    let cand = candidate(constraints, nominal, weight, set, tol).ok()?;
    let res = SolveResult {
        multipliers: cand.full_multipliers(constraints.len()),
        control: cand.control,
        active_set: cand.index_set,
        iterations,
        status: Status::Optimal,
    };
    #[cfg(debug_assertions)]
    if crate::audit::enabled() {
        crate::audit::record(&res.kkt(constraints, nominal, weight));
    }
    Some(res)
}

fn failed_result(
    constraints: &ConstraintSet,
    nominal: &DVector<f64>,
    weight: &WeightMatrix,
    iterations: usize,
) -> SolveResult {
    let probe = feasibility_probe(constraints, nominal, weight);
    SolveResult {
        status: if probe.feasible {
            Status::DegenerateLICQ
        } else {
            Status::Infeasible
        },
        control: probe.control,
        multipliers: DVector::zeros(constraints.len()),
        active_set: ActiveSet::empty(),
        iterations,
    }
}

/// Reference oracle: test every subset with `|I| <= m` in order.
pub fn theta_enumerate(
    constraints: &ConstraintSet,
    nominal: &DVector<f64>,
    weight: &WeightMatrix,
    tol: &Tolerances,
) -> Result<SolveResult, OracleError> {
    let p = constraints.len();
    let max_card = constraints.dim().min(p);
    let subsets = subset_count(p, max_card);
    if subsets > SUBSET_BUDGET {
        return Err(OracleError::BudgetExceeded {
            subsets,
            budget: SUBSET_BUDGET,
        });
    }
    let mut checked = 0;
    for card in 0..=max_card {
        for combo in (0..p).combinations(card) {
            checked += 1;
            let set = ActiveSet::new(combo).expect("combinations are distinct");
            let res = membership(constraints, nominal, weight, &set, tol);
            if res.in_region() {
                let cand = res.candidate.expect("member implies a candidate");
                let res = SolveResult {
                    multipliers: cand.full_multipliers(p),
                    control: cand.control,
                    active_set: set,
                    iterations: checked,
                    status: Status::Optimal,
                };
                #[cfg(debug_assertions)]
                if crate::audit::enabled() {
                    crate::audit::record(&res.kkt(constraints, nominal, weight));
                }
                return Ok(res);
            }
        }
    }
    Ok(failed_result(constraints, nominal, weight, checked))
}

/// Active-set oracle warm-started at `warm`.
pub fn theta_active_set(
    constraints: &ConstraintSet,
    nominal: &DVector<f64>,
    weight: &WeightMatrix,
    warm: &ActiveSet,
    tol: &Tolerances,
) -> SolveResult {
    match dual_active_set(constraints, nominal, weight, warm, tol) {
        Outcome::Optimal { set, iterations } => {
            optimal_result(constraints, nominal, weight, &set, iterations, tol)
                .unwrap_or_else(|| failed_result(constraints, nominal, weight, iterations))
        }
        Outcome::Infeasible { iterations } | Outcome::Stalled { iterations } => {
            failed_result(constraints, nominal, weight, iterations)
        }
    }
}

/// Result of relaxing every row by one penalized slack `s >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityProbe {
    /// Optimal `s`.
    pub slack: f64,
    /// The `u` part of the relaxed optimum.
    pub control: DVector<f64>,
    pub feasible: bool,
}

/// Solve `min ||u - k||_R^2 + M s^2` s.t. `b_i' u + a_i <= s`, `s >= 0`.
///
/// The relaxed problem is always feasible; the original is declared
/// infeasible when the optimal slack exceeds [`PROBE_SLACK_TOL`].
pub fn feasibility_probe(
    constraints: &ConstraintSet,
    nominal: &DVector<f64>,
    weight: &WeightMatrix,
) -> FeasibilityProbe {
    let m = constraints.dim();
    let p = constraints.len();
    let mut b = DMatrix::zeros(m + 1, p + 1);
    b.view_mut((0, 0), (m, p)).copy_from(constraints.b());
    for i in 0..p {
        b[(m, i)] = -1.0;
    }
    b[(m, p)] = -1.0;
    let mut a = DVector::zeros(p + 1);
    a.rows_mut(0, p).copy_from(constraints.a());
    let relaxed = ConstraintSet::new(b, a).expect("relaxed rows are finite");
    let aug_weight = weight
        .augmented(&[PROBE_PENALTY])
        .expect("block diagonal of positive definite blocks");
    let aug_nominal = nominal.clone().insert_row(m, 0.0);
    let tol = Tolerances::default();
    let solved = match dual_active_set(&relaxed, &aug_nominal, &aug_weight, &ActiveSet::empty(), &tol)
    {
        Outcome::Optimal { set, .. } => candidate(&relaxed, &aug_nominal, &aug_weight, &set, &tol).ok(),
        _ => None,
    };
    match solved {
        Some(c) => {
            let slack = c.control[m].max(0.0);
            FeasibilityProbe {
                slack,
                control: c.control.rows(0, m).into_owned(),
                feasible: slack <= PROBE_SLACK_TOL,
            }
        }
        None => FeasibilityProbe {
            slack: f64::INFINITY,
            control: nominal.clone(),
            feasible: false,
        },
    }
}

enum Outcome {
    Optimal { set: ActiveSet, iterations: usize },
    Infeasible { iterations: usize },
    Stalled { iterations: usize },
}

struct Iterate {
    work: Vec<usize>,
    lambda: DVector<f64>,
    control: DVector<f64>,
}

/// Recompute the closed-form candidate for the working set and drop the most
/// negative multiplier until the set is dual feasible.
fn settle(
    it: &mut Iterate,
    constraints: &ConstraintSet,
    nominal: &DVector<f64>,
    weight: &WeightMatrix,
    tol: &Tolerances,
    iterations: &mut usize,
) -> bool {
    loop {
        let Ok(fact) = gram_factorize_indices(constraints, weight, &it.work, tol.rank) else {
            return false;
        };
        let (lam, u) = crate::qp::candidate_from_factorization(&fact, nominal);
        let worst = lam
            .iter()
            .enumerate()
            .filter(|(_, l)| **l < -tol.dual)
            .min_by(|x, y| x.1.total_cmp(y.1))
            .map(|(k, _)| k);
        match worst {
            Some(k) => {
                it.work.remove(k);
                *iterations += 1;
            }
            None => {
                it.lambda.fill(0.0);
                for (k, &i) in it.work.iter().enumerate() {
                    it.lambda[i] = lam[k].max(0.0);
                }
                it.control = u;
                return true;
            }
        }
    }
}

fn dual_active_set(
    constraints: &ConstraintSet,
    nominal: &DVector<f64>,
    weight: &WeightMatrix,
    warm: &ActiveSet,
    tol: &Tolerances,
) -> Outcome {
    let p = constraints.len();
    let cap = 50 * (p + 1);
    let mut iterations = 0usize;

    // Prune the warm start to a linearly independent working set.
    let mut work: Vec<usize> = Vec::new();
    for &i in warm.indices().iter().filter(|&&i| i < p) {
        let mut trial = work.clone();
        trial.push(i);
        if gram_factorize_indices(constraints, weight, &trial, tol.rank).is_ok() {
            work = trial;
        }
    }
    let mut it = Iterate {
        work,
        lambda: DVector::zeros(p),
        control: nominal.clone(),
    };
    if !settle(&mut it, constraints, nominal, weight, tol, &mut iterations) {
        return Outcome::Stalled { iterations };
    }

    let objective = |u: &DVector<f64>| 0.5 * weight.quad_form(&(u - nominal));
    let mut best = objective(&it.control);
    let mut stalled_steps = 0usize;
    let mut bland = false;

    loop {
        if iterations > cap {
            return Outcome::Stalled { iterations };
        }
        let values = constraints.values(&it.control);
        let mut entering: Option<(usize, f64)> = None;
        for j in (0..p).filter(|j| !it.work.contains(j)) {
            if values[j] >= tol.primal && entering.is_none_or(|(_, v)| !bland && values[j] > v) {
                entering = Some((j, values[j]));
            }
        }
        let Some((j, _)) = entering else {
            let mut set = it.work.clone();
            set.sort_unstable();
            return Outcome::Optimal {
                set: ActiveSet::new(set).expect("working set has no duplicates"),
                iterations,
            };
        };

        let bj = constraints.b().column(j).into_owned();
        let rinv_bj = weight.inverse() * &bj;
        let mut lambda_j = 0.0;
        loop {
            if iterations > cap {
                return Outcome::Stalled { iterations };
            }
            let Ok(fact) = gram_factorize_indices(constraints, weight, &it.work, tol.rank) else {
                return Outcome::Stalled { iterations };
            };
            let r = fact.solve(&fact.rinv_b().tr_mul(&bj));
            let z = -(&rinv_bj - fact.rinv_b() * &r);
            let mut with_j = it.work.clone();
            with_j.push(j);
            let dependent = gram_factorize_indices(constraints, weight, &with_j, tol.rank).is_err();
            let full_step = if dependent {
                f64::INFINITY
            } else {
                let slope = -bj.dot(&z);
                let vj = constraints.row_value(j, &it.control);
                if slope > 0.0 {
                    (vj / slope).max(0.0)
                } else {
                    f64::INFINITY
                }
            };
            let mut partial: Option<(usize, f64)> = None;
            for (k, &i) in it.work.iter().enumerate() {
                if r[k] > 1e-14 {
                    let t = (it.lambda[i] / r[k]).max(0.0);
                    if partial.is_none_or(|(_, best_t)| t < best_t) {
                        partial = Some((k, t));
                    }
                }
            }
            if full_step.is_infinite() && partial.is_none() {
                return Outcome::Infeasible { iterations };
            }
            let (step, drop) = match partial {
                Some((k, t)) if t < full_step => (t, Some(k)),
                _ => (full_step, None),
            };
            if !dependent {
                it.control += &z * step;
            }
            for (k, &i) in it.work.iter().enumerate() {
                it.lambda[i] -= step * r[k];
            }
            lambda_j += step;
            iterations += 1;
            match drop {
                Some(k) => {
                    let i = it.work.remove(k);
                    it.lambda[i] = 0.0;
                }
                None => {
                    it.work.push(j);
                    it.lambda[j] = lambda_j;
                    break;
                }
            }
        }
        if !settle(&mut it, constraints, nominal, weight, tol, &mut iterations) {
            return Outcome::Stalled { iterations };
        }

        let obj = objective(&it.control);
        if obj > best * (1.0 + 1e-14) + 1e-300 {
            best = obj;
            stalled_steps = 0;
        } else {
            stalled_steps += 1;
            if stalled_steps >= 3 * p.max(1) {
                bland = true;
            }
        }
    }
}
