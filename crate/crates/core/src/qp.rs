//! Parametric QP data and the closed-form candidate for a trial active set.
//!
//! The safety filter solves
//!
//! ```text
//!     minimize    1/2 ||u - k||_R^2
//!     subject to  b_i' u + a_i <= 0,   i = 0..p
//! ```
//!
//! For an index set `I` whose rows are linearly independent, the candidate
//! multipliers and control are
//!
//! ```text
//!     lambda_I = (B_I' R^-1 B_I)^-1 (B_I' k + a_I)
//!     u_I      = k - R^-1 B_I lambda_I
//! ```
//!
//! Everything in here is a pure function of its arguments.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Numerical thresholds shared by the region tests, the oracles and the
/// explicit controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// `B_I` has full column rank iff `sigma_min(R^-1/2 B_I) > rank * max(sigma_max, 1)`.
    pub rank: f64,
    /// Multipliers down to `-dual` count as nonnegative.
    pub dual: f64,
    /// Inactive rows must satisfy `b_j' u_I + a_j < primal`.
    pub primal: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank: 1e-9,
            dual: 1e-9,
            primal: 1e-9,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("weight matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("weight matrix is empty")]
    Empty,
    #[error("weight matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("weight matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("weight matrix has non-finite entries")]
    NonFinite,
}

/// The input-space metric `R`, symmetric positive definite.
///
/// Holds the Cholesky factor `R = L L'` and the explicit inverse, both of
/// which every candidate evaluation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl WeightMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self, WeightError> {
        let (rows, cols) = entries.shape();
        if rows != cols {
            return Err(WeightError::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(WeightError::Empty);
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(WeightError::NonFinite);
        }
        let scale = entries.amax().max(f64::MIN_POSITIVE);
        let asymmetry = (&entries - entries.transpose()).amax() / scale;
        if asymmetry > 1e-12 {
            return Err(WeightError::NotSymmetric { asymmetry });
        }
        // Factor the exactly symmetric part so tiny asymmetry cannot leak in.
        let sym = (&entries + entries.transpose()) * 0.5;
        let chol = Cholesky::new(sym).ok_or(WeightError::NotPositiveDefinite)?;
        if chol.l_dirty().diagonal().iter().any(|d| *d <= 0.0) {
            return Err(WeightError::NotPositiveDefinite);
        }
        let inverse = chol.inverse();
        Ok(Self {
            entries,
            chol_lower: chol.l(),
            inverse,
        })
    }

    pub fn identity(m: usize) -> Self {
        Self::new(DMatrix::identity(m, m)).expect("identity is positive definite")
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self, WeightError> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Lower Cholesky factor `L` with `R = L L'`.
    pub fn cholesky_lower(&self) -> &DMatrix<f64> {
        &self.chol_lower
    }

    /// `||v||_R^2`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.entries * v))
    }

    /// Block-diagonal `diag(self, extra)`.
    pub fn augmented(&self, extra: &[f64]) -> Result<Self, WeightError> {
        let m = self.dim();
        let mut out = DMatrix::zeros(m + extra.len(), m + extra.len());
        out.view_mut((0, 0), (m, m)).copy_from(&self.entries);
        for (i, rho) in extra.iter().enumerate() {
            out[(m + i, m + i)] = *rho;
        }
        Self::new(out)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("row {row} has length {got}, expected {expected}")]
    DimensionMismatch {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("row {row} has non-finite data")]
    NonFinite { row: usize },
}

/// Stacked rows `b_i' u + a_i <= 0` evaluated at one query state.
///
/// `b` is stored column-wise (`m x p`), so `B_I` is a column gather.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    b: DMatrix<f64>,
    a: DVector<f64>,
}

impl ConstraintSet {
    pub fn new(b: DMatrix<f64>, a: DVector<f64>) -> Result<Self, ConstraintError> {
        if b.ncols() != a.len() {
            return Err(ConstraintError::DimensionMismatch {
                row: a.len().min(b.ncols()),
                got: b.ncols(),
                expected: a.len(),
            });
        }
        for i in 0..a.len() {
            if !a[i].is_finite() || b.column(i).iter().any(|v| !v.is_finite()) {
                return Err(ConstraintError::NonFinite { row: i });
            }
        }
        Ok(Self { b, a })
    }

    /// Build from `(b_i, a_i)` pairs; `m` fixes the input dimension even when there are no rows.
    pub fn from_rows<I>(m: usize, rows: I) -> Result<Self, ConstraintError>
    where
        I: IntoIterator<Item = (DVector<f64>, f64)>,
    {
        let rows: Vec<_> = rows.into_iter().collect();
        let mut b = DMatrix::zeros(m, rows.len());
        let mut a = DVector::zeros(rows.len());
        for (i, (bi, ai)) in rows.into_iter().enumerate() {
            if bi.len() != m {
                return Err(ConstraintError::DimensionMismatch {
                    row: i,
                    got: bi.len(),
                    expected: m,
                });
            }
            b.set_column(i, &bi);
            a[i] = ai;
        }
        Self::new(b, a)
    }

    pub fn empty(m: usize) -> Self {
        Self {
            b: DMatrix::zeros(m, 0),
            a: DVector::zeros(0),
        }
    }

    /// Input (decision) dimension `m`.
    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    /// Number of rows `p`.
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    /// `b_i' u + a_i`.
    pub fn row_value(&self, i: usize, u: &DVector<f64>) -> f64 {
        self.b.column(i).dot(u) + self.a[i]
    }

    /// All row values `B' u + a`.
    pub fn values(&self, u: &DVector<f64>) -> DVector<f64> {
        self.b.tr_mul(u) + &self.a
    }

    fn gather(&self, indices: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let b = DMatrix::from_fn(self.dim(), indices.len(), |r, c| self.b[(r, indices[c])]);
        let a = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.a[i]));
        (b, a)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActiveSetError {
    #[error("index {index} appears more than once")]
    Duplicate { index: usize },
}

/// A sorted set of constraint indices naming one region.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ActiveSet(Vec<usize>);

impl ActiveSet {
    pub fn new<I: IntoIterator<Item = usize>>(indices: I) -> Result<Self, ActiveSetError> {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        if let Some(w) = v.windows(2).find(|w| w[0] == w[1]) {
            return Err(ActiveSetError::Duplicate { index: w[0] });
        }
        Ok(Self(v))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// `{0, .., p-1}`.
    pub fn full(p: usize) -> Self {
        Self((0..p).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn with(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        if let Err(pos) = v.binary_search(&i) {
            v.insert(pos, i);
        }
        Self(v)
    }

    pub fn without(&self, i: usize) -> Self {
        Self(self.0.iter().copied().filter(|&j| j != i).collect())
    }

    /// Semicolon-joined indices, the CSV encoding. Empty set is the empty string.
    pub fn to_csv_field(&self) -> String {
        self.0
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn parse_csv_field(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.is_empty() || s == "-" {
            return Ok(Self::empty());
        }
        let idx = s
            .split(';')
            .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(idx).map_err(|e| e.to_string())
    }
}

impl fmt::Display for ActiveSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// `B_I` failed the full-column-rank test.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("B_I is rank deficient (sigma_min {sigma_min:e}, sigma_max {sigma_max:e})")]
pub struct RankDeficient {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Factorization of `H_I = B_I' R^-1 B_I` for the index order it was built with.
#[derive(Debug, Clone)]
pub struct GramFactorization {
    indices: Vec<usize>,
    b_active: DMatrix<f64>,
    a_active: DVector<f64>,
    rinv_b: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl GramFactorization {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `H_I` itself (`0 x 0` for the empty set).
    pub fn gram(&self) -> DMatrix<f64> {
        self.b_active.tr_mul(&self.rinv_b)
    }

    /// `R^-1 B_I`.
    pub fn rinv_b(&self) -> &DMatrix<f64> {
        &self.rinv_b
    }

    pub fn b_active(&self) -> &DMatrix<f64> {
        &self.b_active
    }

    /// Solve `H_I x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        assert_eq!(rhs.len(), self.indices.len(), "rhs length must equal |I|");
        match &self.chol {
            Some(c) => c.solve(rhs),
            None => DVector::zeros(0),
        }
    }

    /// Solve `H_I X = rhs` for a matrix right-hand side.
    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(rhs.nrows(), self.indices.len(), "rhs rows must equal |I|");
        match &self.chol {
            Some(c) => c.solve(rhs),
            None => DMatrix::zeros(0, rhs.ncols()),
        }
    }
}

/// Factor `H_I` for the rows in `indices` (in the given order), or report rank deficiency.
///
/// Panics when an index is out of range or the weight dimension does not match.
pub fn gram_factorize_indices(
    constraints: &ConstraintSet,
    weight: &WeightMatrix,
    indices: &[usize],
    rank_tol: f64,
) -> Result<GramFactorization, RankDeficient> {
    let m = constraints.dim();
    assert_eq!(weight.dim(), m, "weight dimension must equal input dimension");
    assert!(
        indices.iter().all(|&i| i < constraints.len()),
        "active-set index out of range"
    );
    let (b_active, a_active) = constraints.gather(indices);
    let rinv_b = weight.inverse() * &b_active;
    if indices.is_empty() {
        return Ok(GramFactorization {
            indices: Vec::new(),
            b_active,
            a_active,
            rinv_b,
            chol: None,
        });
    }
    if indices.len() > m {
        return Err(RankDeficient {
            sigma_min: 0.0,
            sigma_max: f64::NAN,
        });
    }
    // Singular values of L^-1 B_I equal those of R^-1/2 B_I.
    let whitened = weight
        .cholesky_lower()
        .solve_lower_triangular(&b_active)
        .expect("Cholesky factor has a positive diagonal");
    let sv = whitened.singular_values();
    let sigma_max = sv.max();
    let sigma_min = sv.min();
    // Written so that NaN fails.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(sigma_min > rank_tol * sigma_max.max(1.0)) {
        return Err(RankDeficient {
            sigma_min,
            sigma_max,
        });
    }
    let gram = whitened.tr_mul(&whitened);
    let chol = Cholesky::new(gram).ok_or(RankDeficient {
        sigma_min,
        sigma_max,
    })?;
    Ok(GramFactorization {
        indices: indices.to_vec(),
        b_active,
        a_active,
        rinv_b,
        chol: Some(chol),
    })
}

/// Factor `H_I` for an active set.
pub fn gram_factorize(
    constraints: &ConstraintSet,
    weight: &WeightMatrix,
    set: &ActiveSet,
    tol: &Tolerances,
) -> Result<GramFactorization, RankDeficient> {
    gram_factorize_indices(constraints, weight, set.indices(), tol.rank)
}

/// Candidate multipliers and control for one index set.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// `lambda_I`, in the order of `index_set`.
    pub multipliers: DVector<f64>,
    /// `u_I`.
    pub control: DVector<f64>,
    pub index_set: ActiveSet,
}

impl Candidate {
    /// Multipliers scattered into a length-`p` vector, zero off the index set.
    pub fn full_multipliers(&self, p: usize) -> DVector<f64> {
        let mut out = DVector::zeros(p);
        for (k, &i) in self.index_set.indices().iter().enumerate() {
            out[i] = self.multipliers[k];
        }
        out
    }
}

/// Closed-form `(lambda, u)` from an existing factorization.
///
/// The multipliers follow the factorization's index order.
pub fn candidate_from_factorization(
    fact: &GramFactorization,
    nominal: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    if fact.is_empty() {
        return (DVector::zeros(0), nominal.clone());
    }
    let rhs = fact.b_active.tr_mul(nominal) + &fact.a_active;
    let lambda = fact.solve(&rhs);
    let control = nominal - &fact.rinv_b * &lambda;
    (lambda, control)
}

/// The candidate for `set`; `u = k` for the empty set.
pub fn candidate(
    constraints: &ConstraintSet,
    nominal: &DVector<f64>,
    weight: &WeightMatrix,
    set: &ActiveSet,
    tol: &Tolerances,
) -> Result<Candidate, RankDeficient> {
    assert_eq!(nominal.len(), constraints.dim(), "nominal dimension mismatch");
    let fact = gram_factorize(constraints, weight, set, tol)?;
    let (multipliers, control) = candidate_from_factorization(&fact, nominal);
    Ok(Candidate {
        multipliers,
        control,
        index_set: set.clone(),
    })
}

/// Residuals of the four KKT conditions for a candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `||R(u - k) + B_I lambda_I||`.
    pub stationarity: f64,
    /// `max_i (b_i' u + a_i)`; `None` when there are no rows.
    pub primal: Option<f64>,
    /// `max(0, -min lambda)`.
    pub dual: f64,
    /// `max_i |lambda_i (b_i' u + a_i)|` with lambda zero off the index set.
    pub complementarity: f64,
}

impl KktReport {
    /// All four conditions hold to within `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.stationarity <= tol
            && self.primal.is_none_or(|v| v <= tol)
            && self.dual <= tol
            && self.complementarity <= tol
    }

    /// Largest of the four violation magnitudes (negative primal values count as zero).
    pub fn worst(&self) -> f64 {
        self.stationarity
            .max(self.primal.unwrap_or(0.0).max(0.0))
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(
    cand: &Candidate,
    constraints: &ConstraintSet,
    nominal: &DVector<f64>,
    weight: &WeightMatrix,
) -> KktReport {
    kkt_residuals_full(
        &cand.control,
        &cand.full_multipliers(constraints.len()),
        constraints,
        nominal,
        weight,
    )
}

/// KKT residuals for a control and a full-length multiplier vector.
pub fn kkt_residuals_full(
    control: &DVector<f64>,
    multipliers: &DVector<f64>,
    constraints: &ConstraintSet,
    nominal: &DVector<f64>,
    weight: &WeightMatrix,
) -> KktReport {
    let stationarity =
        (weight.matrix() * (control - nominal) + constraints.b() * multipliers).norm();
    let values = constraints.values(control);
    let primal = if values.is_empty() {
        None
    } else {
        Some(values.max())
    };
    let dual = if multipliers.is_empty() {
        0.0
    } else {
        (-multipliers.min()).max(0.0)
    };
    let complementarity = multipliers
        .iter()
        .zip(values.iter())
        .map(|(l, v)| (l * v).abs())
        .fold(0.0, f64::max);
    KktReport {
        stationarity,
        primal,
        dual,
        complementarity,
    }
}
