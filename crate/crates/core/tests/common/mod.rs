#![allow(dead_code)]

use std::path::PathBuf;

use explicit_cbf::affine::{eval_affine, AffineProblem, AffineRegionLaw};
use explicit_cbf::oracle::{subset_count, theta_active_set, theta_enumerate, SUBSET_BUDGET};
use explicit_cbf::scenario::{self, Scenario};
use explicit_cbf::{membership, ActiveSet, ConstraintSet, SolveResult, Tolerances, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Every `*.toml` under the shipped scenario directory, sorted by name.
pub fn shipped_scenarios() -> Vec<(String, Scenario)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .expect("scenario directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let sc = scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (p.file_stem().unwrap().to_string_lossy().into_owned(), sc)
        })
        .collect()
}

pub fn load_shipped(name: &str) -> Scenario {
    let path = scenario_dir().join(format!("{name}.toml"));
    scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Reference solve: enumeration when it fits the budget, else a cold active-set solve.
pub fn fresh_solve(c: &ConstraintSet, k: &DVector<f64>, w: &WeightMatrix, tol: &Tolerances) -> SolveResult {
    if subset_count(c.len(), c.dim().min(c.len())) <= SUBSET_BUDGET {
        theta_enumerate(c, k, w, tol).unwrap()
    } else {
        theta_active_set(c, k, w, &ActiveSet::empty(), tol)
    }
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| gaussian(rng))
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gaussian(rng))
}

/// Random symmetric positive definite weight with condition number below ~20.
pub fn random_weight(rng: &mut ChaCha8Rng, m: usize) -> WeightMatrix {
    let a = random_matrix(rng, m, m) * 0.3;
    let w = &a * a.transpose() + DMatrix::identity(m, m);
    WeightMatrix::new(w).unwrap()
}

/// Random affine QP data over `n` states.
pub fn random_affine_problem(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> AffineProblem {
    AffineProblem::new(
        random_matrix(rng, m, p),
        random_matrix(rng, p, n),
        random_vector(rng, p),
        random_matrix(rng, m, n),
        random_vector(rng, m),
        random_weight(rng, m),
    )
    .unwrap()
}

pub fn random_state(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-radius..=radius))
}

/// Index of the first non-empty law containing `x`.
pub fn region_index(laws: &[AffineRegionLaw], x: &DVector<f64>, tol: &Tolerances) -> Option<usize> {
    laws.iter().position(|l| !l.empty && l.contains(x, tol))
}

/// `|u(y) - u(x)| / |y - x|` through the explicit law, `None` if either end
/// lies in no region (a measure-zero event).
pub fn segment_slope(laws: &[AffineRegionLaw], x: &DVector<f64>, y: &DVector<f64>, tol: &Tolerances) -> Option<f64> {
    let (ux, _) = eval_affine(laws, x, tol).ok()?;
    let (uy, _) = eval_affine(laws, y, tol).ok()?;
    Some((uy - ux).norm() / (y - x).norm())
}

/// Bisect the segment `x -> y` to the first change of region and return the
/// jump between the two laws there. `None` when both ends share a region.
pub fn boundary_gap(laws: &[AffineRegionLaw], x: &DVector<f64>, y: &DVector<f64>, tol: &Tolerances) -> Option<f64> {
    let at = |s: f64| x + (y - x) * s;
    let first = region_index(laws, x, tol)?;
    if region_index(laws, y, tol) == Some(first) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if region_index(laws, &at(mid), tol) == Some(first) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let z = at(hi);
    let next = region_index(laws, &z, tol)?;
    Some((laws[first].control(&z) - laws[next].control(&z)).amax())
}

/// Outcome of testing every index set at one sample.
pub enum PartitionSample {
    /// Infeasible or within the boundary margin; not counted.
    Skipped,
    /// Number of sets whose region test passed, and whether the oracle's set was among them.
    Counted { passing: usize, oracle_set_passes: bool },
}

/// Run the region test for all `2^p` index sets at `x`.
pub fn partition_sample(problem: &AffineProblem, x: &DVector<f64>, margin: f64, tol: &Tolerances) -> PartitionSample {
    let c = problem.constraints_at(x);
    let k = problem.nominal_at(x);
    let w = problem.weight();
    let res = fresh_solve(&c, &k, w, tol);
    if !res.is_optimal() || res.boundary_margin(&c) < margin {
        return PartitionSample::Skipped;
    }
    let p = c.len();
    let mut passing = 0;
    let mut oracle_set_passes = false;
    for mask in 0u32..(1 << p) {
        let set = ActiveSet::new((0..p).filter(|i| mask & (1 << i) != 0)).unwrap();
        if membership(&c, &k, w, &set, tol).in_region() {
            passing += 1;
            oracle_set_passes |= set == res.active_set;
        }
    }
    PartitionSample::Counted {
        passing,
        oracle_set_passes,
    }
}
