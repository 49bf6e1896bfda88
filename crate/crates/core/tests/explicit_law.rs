mod common;

use common::PartitionSample;
use explicit_cbf::affine::{
    enumerate_regions, eval_affine, grid_check, lipschitz_constant, AffineEvaluator, AffineProblem,
};
use explicit_cbf::table::RegionTable;
use explicit_cbf::{ActiveSet, Tolerances, WeightMatrix};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn one_dimensional() -> AffineProblem {
    // Row u + x <= 0 with nominal zero.
    AffineProblem::new(
        dmatrix![1.0],
        dmatrix![1.0],
        dvector![0.0],
        dmatrix![0.0],
        dvector![0.0],
        WeightMatrix::identity(1),
    )
    .unwrap()
}

#[test]
fn one_dimensional_laws_match_hand_values() {
    let tol = Tolerances::default();
    let laws = enumerate_regions(&one_dimensional(), &tol).unwrap();
    assert_eq!(laws.len(), 2);
    assert_eq!(laws[0].index_set, ActiveSet::empty());
    assert_eq!(laws[0].control_gain, dmatrix![0.0]);
    assert_eq!(laws[1].index_set, ActiveSet::new([0]).unwrap());
    assert_eq!(laws[1].multiplier_gain, dmatrix![1.0]);
    assert_eq!(laws[1].control_gain, dmatrix![-1.0]);
    assert!(laws.iter().all(|l| !l.empty));
    assert_eq!(lipschitz_constant(&laws, |_| true).unwrap(), 1.0);

    assert_eq!(eval_affine(&laws, &dvector![-0.5], &tol).unwrap().0, dvector![0.0]);
    assert_eq!(eval_affine(&laws, &dvector![0.5], &tol).unwrap().0, dvector![-0.5]);
}

#[test]
fn no_rows_gives_one_region_with_the_nominal_gain() {
    let gain = dmatrix![1.0, 2.0; -1.0, 0.5];
    let problem = AffineProblem::new(
        DMatrix::zeros(2, 0),
        DMatrix::zeros(0, 2),
        DVector::zeros(0),
        gain.clone(),
        dvector![0.0, 1.0],
        WeightMatrix::identity(2),
    )
    .unwrap();
    let laws = enumerate_regions(&problem, &Tolerances::default()).unwrap();
    assert_eq!(laws.len(), 1);
    let l = lipschitz_constant(&laws, |_| true).unwrap();
    assert!((l - gain.svd(false, false).singular_values.max()).abs() < 1e-12);
}

#[test]
fn slopes_stay_below_the_lipschitz_constant() {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (n, m, p) in [(1, 1, 1), (2, 2, 2), (2, 3, 3), (3, 3, 2)] {
        let problem = common::random_affine_problem(&mut rng, n, m, p);
        let laws = enumerate_regions(&problem, &tol).unwrap();
        let l = lipschitz_constant(&laws, |_| true).unwrap();
        for i in 0..400 {
            let x = common::random_state(&mut rng, n, 3.0);
            let len = if i % 2 == 0 { 1e-3 } else { 3.0 };
            let y = &x + common::random_state(&mut rng, n, len);
            if let Some(s) = common::segment_slope(&laws, &x, &y, &tol) {
                assert!(s <= l + 1e-6, "slope {s} above L {l}");
            }
        }
    }
}

#[test]
fn laws_agree_on_shared_boundaries() {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut crossings = 0;
    for (n, m, p) in [(1, 1, 1), (2, 2, 2), (2, 3, 3)] {
        let problem = common::random_affine_problem(&mut rng, n, m, p);
        let laws = enumerate_regions(&problem, &tol).unwrap();
        for _ in 0..300 {
            let x = common::random_state(&mut rng, n, 3.0);
            let y = common::random_state(&mut rng, n, 3.0);
            if let Some(gap) = common::boundary_gap(&laws, &x, &y, &tol) {
                crossings += 1;
                assert!(gap <= 1e-7, "gap {gap}");
            }
        }
    }
    assert!(crossings > 50, "only {crossings} boundary crossings sampled");
}

#[test]
fn exactly_one_region_contains_each_sample() {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (n, m, p) in [(2, 1, 3), (2, 2, 4), (3, 3, 5)] {
        let problem = common::random_affine_problem(&mut rng, n, m, p);
        let mut counted = 0;
        for _ in 0..300 {
            let x = common::random_state(&mut rng, n, 2.0);
            if let PartitionSample::Counted {
                passing,
                oracle_set_passes,
            } = common::partition_sample(&problem, &x, 1e-6, &tol)
            {
                counted += 1;
                assert_eq!(passing, 1);
                assert!(oracle_set_passes);
            }
        }
        assert!(counted > 0);
    }
}

#[test]
fn explicit_evaluation_matches_the_oracle_on_a_grid() {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let problem = common::random_affine_problem(&mut rng, 2, 3, 3);
    let laws = enumerate_regions(&problem, &tol).unwrap();
    let check = grid_check(&problem, &laws, &DVector::zeros(2), 2.0, 1000, 1, &tol).unwrap();
    assert!(check.compared > 900);
    assert!(check.max_gap <= 1e-9);

    let mut eval = AffineEvaluator::new(&laws, tol);
    for _ in 0..200 {
        let x = common::random_state(&mut rng, 2, 2.0);
        let (u, set) = eval.eval(&x).unwrap();
        let (v, set2) = eval_affine(&laws, &x, &tol).unwrap();
        assert_eq!(u, v);
        assert_eq!(set, &set2);
    }
}

#[test]
fn region_table_survives_a_round_trip() {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let problem = common::random_affine_problem(&mut rng, 2, 2, 3);
    let regions = enumerate_regions(&problem, &tol).unwrap();
    let table = RegionTable {
        state_dim: 2,
        input_dim: 2,
        row_count: 3,
        lipschitz: lipschitz_constant(&regions, |_| true).unwrap(),
        regions,
    };
    assert_eq!(RegionTable::parse(&table.to_text()).unwrap(), table);
}
