use explicit_cbf::affine::{AffineRegionLaw, HalfSpace};
use explicit_cbf::oracle::{theta_active_set, theta_enumerate};
use explicit_cbf::runtime::{read_trajectory_csv, Trajectory};
use explicit_cbf::table::RegionTable;
use explicit_cbf::{ActiveSet, ConstraintSet, Status, Tolerances, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn qp_strategy() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=3, 0usize..=4).prop_flat_map(|(m, p)| {
        (
            Just(m),
            prop::collection::vec(-2.0f64..2.0, m * p),
            prop::collection::vec(-1.0f64..1.0, p),
            prop::collection::vec(-2.0f64..2.0, m),
        )
    })
}

/// Forward error allowance for the control of an optimal set with rows `set`.
/// The candidate solves with `B_I' B_I`, so rounding grows with the squared
/// condition number of `B_I` and with the size of the control.
fn control_tolerance(b: &DMatrix<f64>, set: &ActiveSet, control: &DVector<f64>) -> f64 {
    let cond = if set.is_empty() {
        1.0
    } else {
        let sv = b.select_columns(set.indices()).singular_values();
        sv.max() / sv.min()
    };
    (1.0 + control.amax()) * (1e-9 + 100.0 * f64::EPSILON * cond * cond)
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        -1e-6f64..1e-6,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(1.0 / 3.0)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn row_order_does_not_change_the_optimum((m, b, a, k) in qp_strategy(), rot in 0usize..4) {
        let p = a.len();
        let b = DMatrix::from_column_slice(m, p, &b);
        let c = ConstraintSet::new(b.clone(), DVector::from_vec(a.clone())).unwrap();
        let k = DVector::from_vec(k);
        let w = WeightMatrix::identity(m);
        let tol = Tolerances::default();
        let res = theta_enumerate(&c, &k, &w, &tol).unwrap();
        prop_assume!(res.status == Status::Optimal);

        // Rotate the rows by `rot` places.
        let perm: Vec<usize> = (0..p).map(|i| (i + rot) % p.max(1)).collect();
        let pb = DMatrix::from_fn(m, p, |r, j| b[(r, perm[j])]);
        let pa = DVector::from_fn(p, |j, _| a[perm[j]]);
        let pc = ConstraintSet::new(pb, pa).unwrap();
        let pres = theta_active_set(&pc, &k, &w, &ActiveSet::empty(), &tol);
        prop_assert_eq!(pres.status, Status::Optimal);
        prop_assert!((&pres.control - &res.control).amax() <= control_tolerance(&b, &res.active_set, &res.control));
        if res.boundary_margin(&c) > 1e-7 {
            let mapped = ActiveSet::new(pres.active_set.indices().iter().map(|&j| perm[j])).unwrap();
            prop_assert_eq!(mapped, res.active_set);
        }
    }

    #[test]
    fn positive_row_scaling_does_not_change_the_control((m, b, a, k) in qp_strategy(), s in 0.1f64..10.0) {
        let p = a.len();
        let b = DMatrix::from_column_slice(m, p, &b);
        let a = DVector::from_vec(a);
        let k = DVector::from_vec(k);
        let w = WeightMatrix::identity(m);
        let tol = Tolerances::default();
        let res = theta_enumerate(&ConstraintSet::new(b.clone(), a.clone()).unwrap(), &k, &w, &tol).unwrap();
        prop_assume!(res.status == Status::Optimal);
        let scaled = theta_enumerate(&ConstraintSet::new(&b * s, a * s).unwrap(), &k, &w, &tol).unwrap();
        prop_assert_eq!(scaled.status, Status::Optimal);
        prop_assert!((&scaled.control - &res.control).amax() <= control_tolerance(&b, &res.active_set, &res.control));
    }

    #[test]
    fn active_set_field_round_trips(mut idx in prop::collection::vec(0usize..50, 0..8)) {
        idx.sort_unstable();
        idx.dedup();
        let set = ActiveSet::new(idx).unwrap();
        prop_assert_eq!(ActiveSet::parse_csv_field(&set.to_csv_field()).unwrap(), set);
    }

    #[test]
    fn trajectory_csv_is_lossless(
        rows in prop::collection::vec((prop::collection::vec(finite(), 2), prop::collection::vec(finite(), 3), finite(), any::<bool>(), 0usize..3), 1..20)
    ) {
        let mut traj = Trajectory {
            input_dim: 2,
            barrier_names: vec!["h".into()],
            ..Default::default()
        };
        for (k, (x, u, h, called, set)) in rows.into_iter().enumerate() {
            traj.times.push(k as f64 * 0.1);
            traj.states.push(DVector::from_vec(x));
            traj.decisions.push(DVector::from_vec(u));
            traj.barrier_values.push(DVector::from_vec(vec![h]));
            traj.active_sets.push(ActiveSet::new(0..set).unwrap());
            traj.theta_called.push(called);
        }
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let (_, parsed) = read_trajectory_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        for (k, row) in parsed.iter().enumerate() {
            let mut expected = vec![traj.times[k]];
            expected.extend(traj.states[k].iter());
            expected.extend(traj.decisions[k].iter());
            expected.extend(traj.barrier_values[k].iter());
            let same = row.values.iter().zip(&expected).all(|(a, b)| a.to_bits() == b.to_bits() || a == b);
            prop_assert!(same);
            prop_assert_eq!(&row.active_set, &traj.active_sets[k]);
            prop_assert_eq!(row.theta_called, traj.theta_called[k]);
        }
    }

    #[test]
    fn region_table_is_lossless(
        laws in prop::collection::vec((prop::collection::vec(finite(), 4), prop::collection::vec(finite(), 2), prop::collection::vec((any::<bool>(), finite(), finite(), finite()), 0..4), any::<bool>(), 0usize..2), 0..5),
        lipschitz in finite(),
    ) {
        let regions: Vec<AffineRegionLaw> = laws
            .into_iter()
            .map(|(k, kappa, hs, empty, card)| {
                let set = ActiveSet::new(0..card).unwrap();
                AffineRegionLaw {
                    multiplier_gain: DMatrix::from_element(card, 2, 0.5),
                    multiplier_offset: DVector::from_element(card, -1.25),
                    index_set: set,
                    control_gain: DMatrix::from_row_slice(2, 2, &k),
                    control_offset: DVector::from_vec(kappa),
                    polyhedron: hs
                        .into_iter()
                        .map(|(strict, offset, n0, n1)| HalfSpace { normal: DVector::from_vec(vec![n0, n1]), offset, strict })
                        .collect(),
                    empty,
                }
            })
            .collect();
        let table = RegionTable { state_dim: 2, input_dim: 2, row_count: 1, lipschitz, regions };
        let parsed = RegionTable::parse(&table.to_text()).unwrap();
        prop_assert_eq!(parsed.to_text(), table.to_text());
        prop_assert_eq!(parsed.regions.len(), table.regions.len());
    }
}

#[test]
fn nearly_dependent_rows_agree_within_the_conditioning_allowance() {
    let w = WeightMatrix::identity(2);
    let tol = Tolerances::default();
    let b = DMatrix::from_column_slice(2, 3, &[0.6158964875124526, -0.7444962383907988, 1.77396169026887, 0.0, -0.9519049529636906, 1.1586538202112948]);
    let a = DVector::from_vec(vec![0.6193557772530588, 0.0, 0.0]);
    let k = DVector::zeros(2);
    let res = theta_enumerate(&ConstraintSet::new(b.clone(), a.clone()).unwrap(), &k, &w, &tol).unwrap();
    let perm = [1, 2, 0];
    let pb = DMatrix::from_fn(2, 3, |r, j| b[(r, perm[j])]);
    let pa = DVector::from_fn(3, |j, _| a[perm[j]]);
    let pres = theta_active_set(&ConstraintSet::new(pb, pa).unwrap(), &k, &w, &ActiveSet::empty(), &tol);
    assert_eq!(pres.status, Status::Optimal);
    assert!((&pres.control - &res.control).amax() <= control_tolerance(&b, &res.active_set, &res.control));

    let w = WeightMatrix::identity(3);
    let b = DMatrix::from_column_slice(3, 3, &[0.4171037482846454, 0.5212099590377808, 1.8056946839293262, 0.42441121467694237, -1.5802629966073474, -1.0833499596233584, -0.8301609097664946, 1.4790623595975605, -0.1147558359021303]);
    let a = DVector::from_vec(vec![0.0, 0.3269454924419106, 0.3642726465585311]);
    let k = DVector::zeros(3);
    let s = 6.312607990033935;
    let res = theta_enumerate(&ConstraintSet::new(b.clone(), a.clone()).unwrap(), &k, &w, &tol).unwrap();
    let scaled = theta_enumerate(&ConstraintSet::new(&b * s, a * s).unwrap(), &k, &w, &tol).unwrap();
    assert_eq!(scaled.active_set, res.active_set);
    assert!((&scaled.control - &res.control).amax() <= control_tolerance(&b, &res.active_set, &res.control));
}
