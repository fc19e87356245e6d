//! Property tests for algebraic and bookkeeping invariants.

use proptest::prelude::*;
use ymh_core::experiments::{run_covariance_experiment, ExperimentConfig, SampleRow};
use ymh_core::lattice_field::{heat_semigroup, FieldLayout, Lattice, LatticeField};
use ymh_core::lie_core::{adjoint_action, bracket, frob, unitarity_defect, GroupKind, GroupSpec, Representation};
use ymh_core::noise::NoiseStream;
use ymh_core::observables::{holonomy, iterated_integral, psi_derivative, psi_profile, DrivingPath};

fn groups() -> impl Strategy<Value = GroupSpec> {
    prop_oneof![
        Just(GroupSpec::su2()),
        Just(GroupSpec::u1()),
        Just(GroupSpec::new(GroupKind::U, 2, Representation::Fundamental).unwrap()),
        Just(GroupSpec::new(GroupKind::SU, 3, Representation::Fundamental).unwrap()),
    ]
}

fn group_and_coords(k: usize) -> impl Strategy<Value = (GroupSpec, Vec<Vec<f64>>)> {
    groups().prop_flat_map(move |g| {
        let dim = g.dim();
        (Just(g), prop::collection::vec(prop::collection::vec(-1.5f64..1.5, dim), k))
    })
}

fn path(dim: usize, m: usize) -> impl Strategy<Value = DrivingPath> {
    prop::collection::vec(-1.0f64..1.0, 4 * dim).prop_map(move |c| {
        DrivingPath::from_fn(m, |x| (0..dim).map(|a| c[4 * a] * x + c[4 * a + 1] * (3.0 * x).sin() + c[4 * a + 2] * x * x + c[4 * a + 3] * (7.0 * x).cos()).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bracket_is_antisymmetric_and_satisfies_jacobi((g, xs) in group_and_coords(3)) {
        let (x, y, z) = (g.from_coords(&xs[0]), g.from_coords(&xs[1]), g.from_coords(&xs[2]));
        let xy = bracket(&x, &y).unwrap();
        let yx = bracket(&y, &x).unwrap();
        prop_assert!(frob(&(&xy.mat + &yx.mat)) < 1e-12);
        let j = bracket(&x, &bracket(&y, &z).unwrap()).unwrap().mat
            + bracket(&y, &bracket(&z, &x).unwrap()).unwrap().mat
            + bracket(&z, &bracket(&x, &y).unwrap()).unwrap().mat;
        prop_assert!(frob(&j) < 1e-11);
        // structure-constant bracket agrees with the matrix commutator
        let mut acc = vec![0.0; g.dim()];
        g.bracket_acc(&xs[0], &xs[1], 1.0, &mut acc);
        prop_assert!(frob(&(g.from_coords(&acc).mat - xy.mat)) < 1e-11);
    }

    #[test]
    fn coordinates_roundtrip_and_exp_lands_in_group((g, xs) in group_and_coords(1)) {
        let x = g.from_coords(&xs[0]);
        let back = g.coords(&x);
        for (a, b) in back.iter().zip(&xs[0]) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let e = g.exp_coords(&xs[0]);
        prop_assert!(unitarity_defect(&e.mat) < 1e-12);
        prop_assert!(g.validate_group(&e).is_ok());
    }

    #[test]
    fn adjoint_action_is_a_lie_homomorphism((g, xs) in group_and_coords(3)) {
        let u = g.exp_coords(&xs[2]);
        let (x, y) = (g.from_coords(&xs[0]), g.from_coords(&xs[1]));
        let lhs = adjoint_action(&u, &bracket(&x, &y).unwrap()).unwrap();
        let rhs = bracket(&adjoint_action(&u, &x).unwrap(), &adjoint_action(&u, &y).unwrap()).unwrap();
        prop_assert!(frob(&(lhs.mat - rhs.mat)) < 1e-11);
        prop_assert!((x.norm() - adjoint_action(&u, &x).unwrap().norm()).abs() < 1e-12);
    }

    #[test]
    fn wilson_trace_is_conjugation_invariant(a in path(3, 64), c in prop::collection::vec(-2.0f64..2.0, 3)) {
        let g = GroupSpec::su2();
        let u = g.exp_coords(&c);
        let incs: Vec<Vec<f64>> = a.increments();
        let conj = DrivingPath::from_fn(64, |x| {
            let k = (x * 64.0).round() as usize;
            let sum: Vec<f64> = (0..3).map(|j| incs[..k].iter().map(|v| v[j]).sum()).collect();
            g.coords(&adjoint_action(&u, &g.from_coords(&sum)).unwrap())
        });
        let w = holonomy(&g, &a).trace();
        let wc = holonomy(&g, &conj).trace();
        prop_assert!((w - wc).norm() < 1e-10);
    }

    #[test]
    fn iterated_integral_trace_is_symmetric(a in path(3, 50), b in path(3, 50)) {
        // Tr∬{dαdβ + dβdα} = Tr(α(1)β(1))
        let g = GroupSpec::su2();
        let s = (iterated_integral(&g, &a, &b) + iterated_integral(&g, &b, &a)).trace();
        let full = (g.from_coords(a.endpoint()).mat * g.from_coords(b.endpoint()).mat).trace();
        prop_assert!((s - full).norm() < 1e-10);
    }

    #[test]
    fn psi_profile_is_odd_and_derivative_matches(y in -0.24f64..0.24) {
        prop_assert!((psi_profile(y) + psi_profile(-y)).abs() < 1e-15);
        let h = 1e-6;
        let fd = (psi_profile(y + h) - psi_profile(y - h)) / (2.0 * h);
        prop_assert!((fd - psi_derivative(y)).abs() < 1e-5);
    }

    #[test]
    fn antithetic_noise_slices_are_negated(seed in any::<u64>(), i in 0i64..1000) {
        let l = Lattice::new(2, 4).unwrap();
        let plus = NoiseStream::new(seed, l, 3, 1e-3);
        let mut minus = plus.clone();
        minus.sign = -1.0;
        let (p, m) = (plus.slice(i), minus.slice(i));
        prop_assert_eq!(p.len(), 3);
        for (u, v) in p.iter().flatten().zip(m.iter().flatten()) {
            prop_assert_eq!(u.to_bits(), (-v).to_bits());
        }
        prop_assert_eq!(plus.slice(i), p);
    }

    #[test]
    fn heat_semigroup_composes(s1 in 0.0f64..0.05, s2 in 0.0f64..0.05, seed in any::<u64>()) {
        let l = Lattice::new(3, 8).unwrap();
        let layout = FieldLayout::gauge_only(&GroupSpec::su2(), 3);
        let k = (seed % 5) as f64;
        let a = LatticeField::from_fn(l, layout, |p, o| {
            for (c, v) in o.iter_mut().enumerate() {
                *v = (6.283 * (p[0] * (k + 1.0) + p[1] * c as f64)).sin() + 0.3 * (6.283 * 3.0 * p[2]).cos();
            }
        });
        let two = heat_semigroup(&heat_semigroup(&a, s1).unwrap(), s2).unwrap();
        let one = heat_semigroup(&a, s1 + s2).unwrap();
        prop_assert!(two.max_abs_diff(&one) < 1e-12);
    }

    #[test]
    fn config_roundtrips_through_toml(
        n in 4usize..64,
        r in 0.01f64..0.5,
        members in 1usize..4096,
        seed in 0..=i64::MAX as u64,
        higgs in any::<bool>(),
        grid in prop::option::of(prop::collection::vec(1e-4f64..0.1, 1..6)),
    ) {
        let cfg = ExperimentConfig { n, r, members, seed, higgs, t_grid: grid, ..ExperimentConfig::default() };
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn sample_rows_roundtrip_through_csv(
        t in 1e-6f64..1.0, pair in 0usize..10_000, seed in any::<u64>(),
        w in prop::array::uniform4(-2.0f64..2.0), alive in any::<bool>(), good in any::<bool>(),
    ) {
        let row = SampleRow {
            t, s: t.sqrt(), pair, sign: if pair % 2 == 0 { 1 } else { -1 }, seed,
            w_re: w[0], w_im: w[1], w_tilde_re: w[2], w_tilde_im: w[3],
            alive, alive_tilde: !alive, filter_total: w[0].abs(), good,
        };
        prop_assert_eq!(SampleRow::parse_csv(&row.csv()).unwrap(), row);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn null_experiment_is_bitwise_exact_for_any_seed(seed in 0..=i64::MAX as u64) {
        let cfg = ExperimentConfig {
            n: 8, higgs: false, c: "zero".into(), t_grid: Some(vec![2f64.powi(-7)]), r: 0.31,
            members: 4, loop_nodes: 128, bootstrap: 0, seed, ..ExperimentConfig::default()
        };
        let rep = run_covariance_experiment(&cfg).unwrap();
        prop_assert_eq!(rep.rows.len(), 4);
        for r in &rep.rows {
            prop_assert_eq!(r.w_re.to_bits(), r.w_tilde_re.to_bits());
            prop_assert_eq!(r.w_im.to_bits(), r.w_tilde_im.to_bits());
        }
    }

    #[test]
    fn ensemble_replay_is_deterministic(seed in 0..=i64::MAX as u64) {
        let cfg = ExperimentConfig {
            n: 8, higgs: false, t_grid: Some(vec![2f64.powi(-7)]), r: 0.31,
            members: 2, loop_nodes: 128, bootstrap: 0, seed, ..ExperimentConfig::default()
        };
        let a = run_covariance_experiment(&cfg).unwrap();
        let b = run_covariance_experiment(&cfg).unwrap();
        let (ca, cb): (Vec<String>, Vec<String>) = (a.rows.iter().map(SampleRow::csv).collect(), b.rows.iter().map(SampleRow::csv).collect());
        prop_assert_eq!(ca, cb);
    }
}
