//! Explicit piecewise-affine control law for QPs whose data is affine in `x`:
//!
//! ```text
//! k(x) = K x + kappa,   a(x) = Gamma x + eta,   B constant.
//! ```
//!
//! On every region the optimal control is `u = K_I x + kappa_I` and the
//! region itself is a polyhedron in `x` with non-strict dual rows and strict
//! primal rows.

use nalgebra::{DMatrix, DVector, SVD};
use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::frontend::FilterProblem;
use crate::oracle::{subset_count, theta_active_set, OracleError, Status, SUBSET_BUDGET};
use crate::qp::{
    gram_factorize, ActiveSet, ConstraintSet, RankDeficient, Tolerances, WeightError, WeightMatrix,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AffineError {
    #[error("{what}: got {got:?}, expected {expected:?}")]
    Dimension {
        what: &'static str,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("weight: {0}")]
    Weight(#[from] WeightError),
    #[error("QP data is not affine in the state: {0}")]
    NotAffine(String),
    #[error("no precomputed region contains the state")]
    NoRegionFound,
    #[error("no non-empty region to take a Lipschitz constant over")]
    NoRegions,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// QP data `(B, Gamma, eta, K, kappa, R)` with `a(x) = Gamma x + eta` and `k(x) = K x + kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineProblem {
    b: DMatrix<f64>,
    gamma: DMatrix<f64>,
    eta: DVector<f64>,
    gain: DMatrix<f64>,
    offset: DVector<f64>,
    weight: WeightMatrix,
}

impl AffineProblem {
    /// `b` is `m x p` with rows stored as columns, `gamma` is `p x n`, `gain` is `m x n`.
    pub fn new(
        b: DMatrix<f64>,
        gamma: DMatrix<f64>,
        eta: DVector<f64>,
        gain: DMatrix<f64>,
        offset: DVector<f64>,
        weight: WeightMatrix,
    ) -> Result<Self, AffineError> {
        let (m, p) = b.shape();
        let n = gain.ncols();
        let checks = [
            ("Gamma", gamma.shape(), (p, n)),
            ("eta", (eta.len(), 1), (p, 1)),
            ("K", gain.shape(), (m, n)),
            ("kappa", (offset.len(), 1), (m, 1)),
            ("R", (weight.dim(), weight.dim()), (m, m)),
        ];
        for (what, got, expected) in checks {
            if got != expected {
                return Err(AffineError::Dimension { what, got, expected });
            }
        }
        Ok(Self {
            b,
            gamma,
            eta,
            gain,
            offset,
            weight,
        })
    }

    /// Constant data viewed as an affine problem over a single dummy state.
    pub fn constant(constraints: &ConstraintSet, nominal: &DVector<f64>, weight: &WeightMatrix) -> Self {
        let (m, p) = (constraints.dim(), constraints.len());
        Self {
            b: constraints.b().clone(),
            gamma: DMatrix::zeros(p, 1),
            eta: constraints.a().clone(),
            gain: DMatrix::zeros(m, 1),
            offset: nominal.clone(),
            weight: weight.clone(),
        }
    }

    /// Read the affine data off a filter problem at time `t` by probing the
    /// origin and the unit vectors, then verify affinity at random states.
    pub fn from_filter_problem(problem: &FilterProblem, t: f64, seed: u64) -> Result<Self, AffineError> {
        let n = problem.state_dim();
        let base = problem.assemble(&DVector::zeros(n), t);
        let b = base.constraints.b().clone();
        let eta = base.constraints.a().clone();
        let offset = base.nominal.clone();
        let (d, p) = b.shape();
        let mut gamma = DMatrix::zeros(p, n);
        let mut gain = DMatrix::zeros(d, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            let qp = problem.assemble(&e, t);
            check_same_b(&b, qp.constraints.b())?;
            gamma.set_column(j, &(qp.constraints.a() - &eta));
            gain.set_column(j, &(&qp.nominal - &offset));
        }
        let affine = Self::new(b, gamma, eta, gain, offset, problem.weight().clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..4 {
            let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let qp = problem.assemble(&x, t);
            check_same_b(&affine.b, qp.constraints.b())?;
            let pa = affine.constraint_offsets(&x);
            let pk = affine.nominal_at(&x);
            if !close(&pa, qp.constraints.a()) {
                return Err(AffineError::NotAffine("constraint offsets a(x)".into()));
            }
            if !close(&pk, &qp.nominal) {
                return Err(AffineError::NotAffine("nominal controller k(x)".into()));
            }
        }
        Ok(affine)
    }

    pub fn state_dim(&self) -> usize {
        self.gain.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn row_count(&self) -> usize {
        self.b.ncols()
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn weight(&self) -> &WeightMatrix {
        &self.weight
    }

    pub fn constraint_offsets(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gamma * x + &self.eta
    }

    pub fn nominal_at(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gain * x + &self.offset
    }

    /// The pointwise QP at `x`.
    pub fn constraints_at(&self, x: &DVector<f64>) -> ConstraintSet {
        ConstraintSet::new(self.b.clone(), self.constraint_offsets(x))
            .expect("affine data evaluated at a finite state stays finite")
    }
}

fn close(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    a.iter()
        .zip(b.iter())
        .all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs())))
}

fn check_same_b(reference: &DMatrix<f64>, other: &DMatrix<f64>) -> Result<(), AffineError> {
    let same = reference
        .iter()
        .zip(other.iter())
        .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()));
    if same {
        Ok(())
    } else {
        Err(AffineError::NotAffine("input rows B depend on the state".into()))
    }
}

/// `normal' x + offset <= 0`, or `< 0` when `strict`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub normal: DVector<f64>,
    pub offset: f64,
    pub strict: bool,
}

impl HalfSpace {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) + self.offset
    }
}

/// Closed-form law on one region: `lambda = G x + g`, `u = K_I x + kappa_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRegionLaw {
    pub index_set: ActiveSet,
    pub multiplier_gain: DMatrix<f64>,
    pub multiplier_offset: DVector<f64>,
    pub control_gain: DMatrix<f64>,
    pub control_offset: DVector<f64>,
    /// Dual rows `-(G x + g)_i <= 0` first, then strict primal rows for `j` not in `I`.
    pub polyhedron: Vec<HalfSpace>,
    /// The non-strict closure of the polyhedron is empty.
    pub empty: bool,
}

impl AffineRegionLaw {
    pub fn control(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.control_gain * x + &self.control_offset
    }

    pub fn multipliers(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.multiplier_gain * x + &self.multiplier_offset
    }

    /// Membership with the usual tolerances: dual rows may be `tol.dual`
    /// positive, strict rows must stay below `tol.primal`.
    pub fn contains(&self, x: &DVector<f64>, tol: &Tolerances) -> bool {
        self.polyhedron.iter().all(|h| {
            let v = h.value(x);
            if h.strict {
                v < tol.primal
            } else {
                v <= tol.dual
            }
        })
    }

    /// `||K_I||_2`.
    pub fn spectral_norm(&self) -> f64 {
        spectral_norm(&self.control_gain)
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SVD::try_new(m.clone(), false, false, 1e-10, 0)
        .map(|svd| svd.singular_values.max())
        .unwrap_or_else(|| m.norm())
}

/// Closed-form law for one index set.
pub fn precompute_region(
    problem: &AffineProblem,
    set: &ActiveSet,
    tol: &Tolerances,
) -> Result<AffineRegionLaw, RankDeficient> {
    let n = problem.state_dim();
    let m = problem.input_dim();
    let shape = ConstraintSet::new(problem.b.clone(), problem.eta.clone())
        .expect("affine problem data is finite");
    let fact = gram_factorize(&shape, &problem.weight, set, tol)?;
    let idx = set.indices();
    let b_active = fact.b_active();
    let gamma_active = problem.gamma.select_rows(idx);
    let eta_active = problem.eta.select_rows(idx);

    let g_mat = fact.solve_matrix(&(b_active.tr_mul(&problem.gain) + gamma_active));
    let g_vec = fact.solve(&(b_active.tr_mul(&problem.offset) + eta_active));
    let control_gain = &problem.gain - fact.rinv_b() * &g_mat;
    let control_offset = &problem.offset - fact.rinv_b() * &g_vec;

    let mut polyhedron = Vec::with_capacity(problem.row_count());
    for r in 0..idx.len() {
        polyhedron.push(HalfSpace {
            normal: -g_mat.row(r).transpose(),
            offset: -g_vec[r],
            strict: false,
        });
    }
    for j in (0..problem.row_count()).filter(|&j| !set.contains(j)) {
        let bj = problem.b.column(j);
        let normal = control_gain.tr_mul(&bj) + problem.gamma.row(j).transpose();
        polyhedron.push(HalfSpace {
            normal,
            offset: bj.dot(&control_offset) + problem.eta[j],
            strict: true,
        });
    }
    debug_assert_eq!(control_gain.shape(), (m, n));
    Ok(AffineRegionLaw {
        index_set: set.clone(),
        multiplier_gain: g_mat,
        multiplier_offset: g_vec,
        control_gain,
        control_offset,
        polyhedron,
        empty: false,
    })
}

/// Whether `{x : normal' x + offset <= 0}` over all rows is empty.
pub fn closure_is_empty(polyhedron: &[HalfSpace], n: usize) -> bool {
    if polyhedron.is_empty() {
        return false;
    }
    let mut b = DMatrix::zeros(n, polyhedron.len());
    let mut a = DVector::zeros(polyhedron.len());
    for (i, h) in polyhedron.iter().enumerate() {
        b.set_column(i, &h.normal);
        a[i] = h.offset;
    }
    let Ok(rows) = ConstraintSet::new(b, a) else {
        return false;
    };
    let res = theta_active_set(
        &rows,
        &DVector::zeros(n),
        &WeightMatrix::identity(n),
        &ActiveSet::empty(),
        &Tolerances::default(),
    );
    res.status == Status::Infeasible
}

/// Laws for every full-rank index set with `|I| <= min(m, p)`, in
/// cardinality-then-lexicographic order, each flagged empty or not.
pub fn enumerate_regions(problem: &AffineProblem, tol: &Tolerances) -> Result<Vec<AffineRegionLaw>, AffineError> {
    let p = problem.row_count();
    let max_card = problem.input_dim().min(p);
    let subsets = subset_count(p, max_card);
    if subsets > SUBSET_BUDGET {
        return Err(OracleError::BudgetExceeded {
            subsets,
            budget: SUBSET_BUDGET,
        }
        .into());
    }
    let n = problem.state_dim();
    let mut laws = Vec::new();
    for card in 0..=max_card {
        for combo in (0..p).combinations(card) {
            let set = ActiveSet::new(combo).expect("combinations are distinct");
            if let Ok(mut law) = precompute_region(problem, &set, tol) {
                law.empty = closure_is_empty(&law.polyhedron, n);
                laws.push(law);
            }
        }
    }
    Ok(laws)
}

/// `max ||K_I||_2` over the non-empty laws accepted by `select`.
pub fn lipschitz_constant<F>(laws: &[AffineRegionLaw], select: F) -> Result<f64, AffineError>
where
    F: Fn(&AffineRegionLaw) -> bool,
{
    laws.iter()
        .filter(|l| !l.empty && select(l))
        .map(AffineRegionLaw::spectral_norm)
        .reduce(f64::max)
        .ok_or(AffineError::NoRegions)
}

/// Stateless explicit evaluation: the first non-empty law containing `x`.
pub fn eval_affine(
    laws: &[AffineRegionLaw],
    x: &DVector<f64>,
    tol: &Tolerances,
) -> Result<(DVector<f64>, ActiveSet), AffineError> {
    laws.iter()
        .find(|l| !l.empty && l.contains(x, tol))
        .map(|l| (l.control(x), l.index_set.clone()))
        .ok_or(AffineError::NoRegionFound)
}

/// Explicit evaluator that checks the last hit region first.
#[derive(Debug, Clone)]
pub struct AffineEvaluator<'a> {
    laws: &'a [AffineRegionLaw],
    last_hit: Option<usize>,
    tol: Tolerances,
}

impl<'a> AffineEvaluator<'a> {
    pub fn new(laws: &'a [AffineRegionLaw], tol: Tolerances) -> Self {
        Self {
            laws,
            last_hit: None,
            tol,
        }
    }

    pub fn eval(&mut self, x: &DVector<f64>) -> Result<(DVector<f64>, &'a ActiveSet), AffineError> {
        if let Some(i) = self.last_hit {
            let law = &self.laws[i];
            if law.contains(x, &self.tol) {
                return Ok((law.control(x), &law.index_set));
            }
        }
        let (i, law) = self
            .laws
            .iter()
            .enumerate()
            .find(|(_, l)| !l.empty && l.contains(x, &self.tol))
            .ok_or(AffineError::NoRegionFound)?;
        self.last_hit = Some(i);
        Ok((law.control(x), &law.index_set))
    }
}

/// Outcome of comparing explicit evaluation with the active-set oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCheck {
    /// States where both sides were compared.
    pub compared: usize,
    /// States skipped as infeasible or within `boundary` of a region boundary.
    pub skipped: usize,
    pub max_gap: f64,
}

/// Compare [`eval_affine`] against a cold oracle solve at `samples` states
/// drawn uniformly from the box `center +- radius`.
pub fn grid_check(
    problem: &AffineProblem,
    laws: &[AffineRegionLaw],
    center: &DVector<f64>,
    radius: f64,
    samples: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<GridCheck, AffineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GridCheck {
        compared: 0,
        skipped: 0,
        max_gap: 0.0,
    };
    for _ in 0..samples {
        let x = DVector::from_fn(center.len(), |i, _| center[i] + rng.random_range(-radius..=radius));
        let c = problem.constraints_at(&x);
        let k = problem.nominal_at(&x);
        let res = theta_active_set(&c, &k, &problem.weight, &ActiveSet::empty(), tol);
        if res.status != Status::Optimal || res.boundary_margin(&c) < 1e-7 {
            out.skipped += 1;
            continue;
        }
        let (u, _) = eval_affine(laws, &x, tol)?;
        out.max_gap = out.max_gap.max((u - &res.control).amax());
        out.compared += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::theta_enumerate;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    /// `min (u - 1)^2 / 2  s.t.  u + x <= 0`.
    fn scalar() -> AffineProblem {
        AffineProblem::new(
            dmatrix![1.0],
            dmatrix![1.0],
            dvector![0.0],
            dmatrix![0.0],
            dvector![1.0],
            WeightMatrix::identity(1),
        )
        .unwrap()
    }

    #[test]
    fn scalar_regions() {
        let tol = Tolerances::default();
        let laws = enumerate_regions(&scalar(), &tol).unwrap();
        assert_eq!(laws.len(), 2);
        // Empty set: u = 1, valid while 1 + x < 0.
        let free = &laws[0];
        assert_eq!(free.control_gain, dmatrix![0.0]);
        assert_eq!(free.control_offset, dvector![1.0]);
        assert_eq!(free.polyhedron.len(), 1);
        assert_eq!(free.polyhedron[0].normal, dvector![1.0]);
        assert_eq!(free.polyhedron[0].offset, 1.0);
        assert!(free.polyhedron[0].strict);
        // Active: lambda = 1 + x, u = -x.
        let act = &laws[1];
        assert_eq!(act.multiplier_gain, dmatrix![1.0]);
        assert_eq!(act.multiplier_offset, dvector![1.0]);
        assert_eq!(act.control_gain, dmatrix![-1.0]);
        assert_eq!(act.control_offset, dvector![0.0]);
        assert!(!act.polyhedron[0].strict);
        assert!(laws.iter().all(|l| !l.empty));
        assert_eq!(lipschitz_constant(&laws, |_| true).unwrap(), 1.0);
    }

    #[test]
    fn evaluator_matches_enumeration() {
        let problem = AffineProblem::new(
            dmatrix![1.0, 0.0, -1.0; 0.0, 1.0, 0.5],
            dmatrix![1.0, 0.0; 0.0, -1.0; 0.3, 0.3],
            dvector![0.5, -0.2, -1.0],
            dmatrix![0.4, 0.0; -0.1, 0.7],
            dvector![1.0, 1.0],
            WeightMatrix::diagonal(&[1.0, 2.0]).unwrap(),
        )
        .unwrap();
        let tol = Tolerances::default();
        let laws = enumerate_regions(&problem, &tol).unwrap();
        let mut ev = AffineEvaluator::new(&laws, tol);
        for i in 0..40 {
            let s = i as f64 * 0.37;
            let x = dvector![3.0 * s.sin(), 2.0 * (1.3 * s).cos()];
            let reference = theta_enumerate(
                &problem.constraints_at(&x),
                &problem.nominal_at(&x),
                problem.weight(),
                &tol,
            )
            .unwrap();
            assert_eq!(reference.status, Status::Optimal);
            let (u, _) = ev.eval(&x).unwrap();
            assert!((u - &reference.control).amax() < 1e-9);
            let (u2, _) = eval_affine(&laws, &x, &tol).unwrap();
            assert!((u2 - &reference.control).amax() < 1e-9);
        }
    }

    #[test]
    fn empty_regions_are_flagged() {
        // Rows u <= -1 and u <= 1 with k = 0: only {0} is ever optimal.
        let c = ConstraintSet::from_rows(1, [(dvector![1.0], 1.0), (dvector![1.0], -1.0)]).unwrap();
        let problem = AffineProblem::constant(&c, &dvector![0.0], &WeightMatrix::identity(1));
        let laws = enumerate_regions(&problem, &Tolerances::default()).unwrap();
        let live: Vec<_> = laws.iter().filter(|l| !l.empty).map(|l| l.index_set.clone()).collect();
        assert_eq!(live, vec![ActiveSet::new([0]).unwrap()]);
    }

    #[test]
    fn budget_guard() {
        let p = 40;
        let m = 20;
        let c = ConstraintSet::new(DMatrix::identity(m, p), DVector::zeros(p)).unwrap();
        let problem = AffineProblem::constant(&c, &DVector::zeros(m), &WeightMatrix::identity(m));
        assert!(matches!(
            enumerate_regions(&problem, &Tolerances::default()),
            Err(AffineError::Oracle(OracleError::BudgetExceeded { .. }))
        ));
    }

    #[test]
    fn rejects_bad_dimensions() {
        let err = AffineProblem::new(
            dmatrix![1.0],
            dmatrix![1.0, 2.0],
            dvector![0.0],
            dmatrix![0.0],
            dvector![1.0],
            WeightMatrix::identity(1),
        );
        assert!(matches!(err, Err(AffineError::Dimension { what: "Gamma", .. })));
    }
}
