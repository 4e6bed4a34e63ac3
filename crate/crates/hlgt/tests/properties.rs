use hlgt::dyadic::{DyadicTree, OrientedLattice, Orientation};
use hlgt::field_algebra::{gauge_perm, ConfigSpace, FiniteGroup, OperatorMatrix};
use hlgt::heat_kernel::{heat_kernel_eval, HeatKernelSpec};
use hlgt::measure_analysis::{z_affinity, z_cross_affinity};
use hlgt::observables::{
    holonomy_inverse, holonomy_path, two_point, EdgeConfig, PathConfig, TwoPointSpec,
};
use hlgt::rg_flow::{flow_beta, ising_conjugacy_residual};
use hlgt::states::{coherence_residual, FiniteState, StateFamily};
use hlgt::group_core::IrrepLabel;
use hlgt::{GroupId, GroupValue, C64};
use proptest::prelude::*;

fn residues(n: u32, len: usize) -> impl Strategy<Value = Vec<GroupValue>> {
    proptest::collection::vec((0..n).prop_map(GroupValue::Residue), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn holonomy_round_trip(
        (n, level, vals) in (2u32..7, 0u32..5)
            .prop_flat_map(|(n, l)| (Just(n), Just(l), residues(n, 1 << l)))
    ) {
        let tree = DyadicTree::complete(level);
        let g = GroupId::CyclicZn(n);
        let cfg = EdgeConfig::new(tree.clone(), vals.clone()).unwrap();
        prop_assert_eq!(holonomy_inverse(g, &holonomy_path(g, &cfg).unwrap()).unwrap(), cfg);
        let path = PathConfig::new(tree, vals).unwrap();
        prop_assert_eq!(holonomy_path(g, &holonomy_inverse(g, &path).unwrap()).unwrap(), path);
    }

    #[test]
    fn holonomy_is_additive_on_z5(a in residues(5, 4), b in residues(5, 4)) {
        let g = GroupId::CyclicZn(5);
        let tree = DyadicTree::complete(2);
        let sum: Vec<GroupValue> = a.iter().zip(&b).map(|(x, y)| g.multiply(x, y).unwrap()).collect();
        let ha = holonomy_path(g, &EdgeConfig::new(tree.clone(), a).unwrap()).unwrap();
        let hb = holonomy_path(g, &EdgeConfig::new(tree.clone(), b).unwrap()).unwrap();
        let hs = holonomy_path(g, &EdgeConfig::new(tree, sum).unwrap()).unwrap();
        for j in 0..4 {
            prop_assert_eq!(hs.values[j], g.multiply(&ha.values[j], &hb.values[j]).unwrap());
        }
    }

    #[test]
    fn heat_kernel_positive_on_z_n(n in 2u32..9, beta in 0.01f64..10.0, r in 0u32..9) {
        let v = heat_kernel_eval(HeatKernelSpec::new(GroupId::CyclicZn(n), beta), &GroupValue::Residue(r % n)).unwrap();
        prop_assert!(v.value > 0.0);
    }

    #[test]
    fn heat_state_is_normalised_and_positive(n in 2u32..4, beta in 0.1f64..4.0) {
        let lat = OrientedLattice::cofinal(1, Orientation::Left);
        let fam = StateFamily::heat(GroupId::CyclicZn(n), beta);
        let st = FiniteState::for_family(&fam, &lat).unwrap();
        let space = ConfigSpace::new(n as usize, 2).unwrap();
        let one = st.evaluate_matrix(&OperatorMatrix::identity(space).unwrap()).unwrap();
        prop_assert!((one - C64::new(1.0, 0.0)).norm() < 1e-12);
        let rho = st.density_matrix().unwrap();
        let eig = rho.mat.clone().symmetric_eigen();
        prop_assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
    }

    #[test]
    fn heat_coherence_one_step(n in 2u32..4, beta in 0.2f64..3.0) {
        let fam = StateFamily::heat(GroupId::CyclicZn(n), beta);
        let r = coherence_residual(
            &fam,
            &OrientedLattice::cofinal(0, Orientation::Left),
            &OrientedLattice::cofinal(1, Orientation::Left),
        )
        .unwrap();
        prop_assert!(r.residual < 1e-12);
    }

    #[test]
    fn gauge_perm_is_a_homomorphism(a in proptest::collection::vec(0usize..3, 4), b in proptest::collection::vec(0usize..3, 4)) {
        let fg = FiniteGroup::cyclic(3);
        let lat = OrientedLattice::cofinal(2, Orientation::Left);
        let ab = fg.mul_cfg(&a, &b);
        let pa = gauge_perm(&fg, &lat, &a, true).unwrap();
        let pb = gauge_perm(&fg, &lat, &b, true).unwrap();
        let pab = gauge_perm(&fg, &lat, &ab, true).unwrap();
        let space = ConfigSpace::new(3, 4).unwrap();
        let lhs = pab.to_matrix(space).unwrap();
        let rhs = pa.to_matrix(space).unwrap().compose(&pb.to_matrix(space).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-15);
    }

    #[test]
    fn flow_is_a_semigroup(vals in proptest::collection::vec(0.01f64..5.0, 16)) {
        let direct = flow_beta(&vals, 4, 1).unwrap();
        let staged = flow_beta(&flow_beta(&vals, 4, 2).unwrap(), 2, 1).unwrap();
        for (x, y) in direct.iter().zip(&staged) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs());
        }
    }

    #[test]
    fn ising_conjugacy_pointwise(beta in 0.01f64..10.0) {
        prop_assert!(ising_conjugacy_residual(&[beta]).unwrap() < 1e-12);
    }

    #[test]
    fn affinities_bounded_by_one(b in 1e-6f64..20.0, b2 in 1e-6f64..20.0, k in -5i64..5) {
        let a = z_affinity(b, k);
        prop_assert!(a > 0.0 && a <= 1.0 + 1e-15);
        prop_assert!(z_cross_affinity(b, b2) <= 1.0 + 1e-12);
    }

    #[test]
    fn two_point_rotation_invariant(beta0 in 0.2f64..3.0, s in 0.0f64..0.5, t in 0.0f64..0.5) {
        let base = TwoPointSpec::new(GroupId::CircleU1(32), beta0, Some(1.0), IrrepLabel::U1(1), 0.0, s);
        let shifted = TwoPointSpec { tau: t, tau2: t + s, ..base };
        let a = two_point(&base).unwrap();
        let b = two_point(&shifted).unwrap();
        prop_assert!((a.oracle - b.oracle).abs() < 1e-12);
        prop_assert!((a.series - a.oracle).abs() < 1e-10);
    }
}
