//! Property tests for the invariants shared across modules.

use std::collections::BTreeMap;

use proptest::prelude::*;

use brwre::brw_sim::{estimate_moments_direct, McOptions};
use brwre::lattice::{Boundary, Geometry};
use brwre::pam_solver::{default_dt, solve_mn_recursive, Init};
use brwre::skeleton_fk::{periodize, LocalTimeField};
use brwre::stats::{log_sum_exp, Estimate};
use brwre::trees::{c_coeff, enumerate_numberings, enumerate_trees};
use brwre::variational::{eval_i, eval_s, eval_s_per, ProbVector, TorusMeasure};
use brwre::{EnvironmentField, Exec, PotentialDistribution};

fn normalized(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lattice_coordinates_round_trip(dim in 1usize..4, radius in 0usize..4, raw in 0usize..10_000) {
        let g = Geometry::new(dim, radius, Boundary::Periodic).unwrap();
        let idx = raw % g.n_sites();
        prop_assert_eq!(g.index_of(&g.coords(idx)), Some(idx));
        for dir in 0..g.degree() {
            let j = g.neighbor(idx, dir).unwrap();
            // every neighbour relation is symmetric
            prop_assert!((0..g.degree()).any(|back| g.neighbor(j, back) == Some(idx)));
        }
    }

    #[test]
    fn periodization_preserves_mass(
        sites in prop::collection::vec((-20i64..20, -20i64..20, 0.01f64..5.0), 1..30),
        radius in 0usize..4,
        x in (-3i64..3, -3i64..3),
    ) {
        let mut raw = BTreeMap::new();
        for (a, b, w) in &sites {
            *raw.entry(vec![*a, *b]).or_insert(0.0) += w;
        }
        let mass = raw.values().sum();
        let per = periodize(&LocalTimeField { raw, mass }, radius, &[x.0, x.1]).unwrap();
        prop_assert!((per.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn torus_dirichlet_form_is_translation_invariant(raw in prop::collection::vec(0.0f64..1.0, 25), shift in (0i64..5, 0i64..5)) {
        prop_assume!(raw.iter().sum::<f64>() > 0.1);
        let g = Geometry::new(2, 2, Boundary::Periodic).unwrap();
        let mu = normalized(&raw);
        let mut moved = vec![0.0; 25];
        for (i, w) in mu.iter().enumerate() {
            let c = g.coords(i);
            moved[g.index_of(&[c[0] + shift.0, c[1] + shift.1]).unwrap()] = *w;
        }
        let a = eval_s_per(&TorusMeasure::new(g.clone(), mu).unwrap());
        let b = eval_s_per(&TorusMeasure::new(g, moved).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn window_functionals_are_bounded(raw in prop::collection::vec(0.0f64..1.0, 11)) {
        prop_assume!(raw.iter().sum::<f64>() > 0.1);
        let mu = ProbVector::new(5, normalized(&raw)).unwrap();
        let support = mu.weights().iter().filter(|w| **w > 0.0).count() as f64;
        prop_assert!(eval_s(&mu) >= 0.0 && eval_s(&mu) <= 2.0 + 1e-12);
        prop_assert!(eval_i(&mu) >= -1e-15 && eval_i(&mu) <= support.ln() + 1e-12);
        let mirrored: Vec<f64> = mu.weights().iter().rev().copied().collect();
        let mirrored = ProbVector::new(5, mirrored).unwrap();
        prop_assert!((eval_s(&mu) - eval_s(&mirrored)).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_is_shift_equivariant(logs in prop::collection::vec(-50.0f64..50.0, 1..20), shift in -500.0f64..500.0) {
        let shifted: Vec<f64> = logs.iter().map(|l| l + shift).collect();
        prop_assert!((log_sum_exp(&shifted) - log_sum_exp(&logs) - shift).abs() < 1e-9);
    }

    #[test]
    fn independent_sums_commute(a in -10.0f64..10.0, sa in 0.0f64..2.0, b in -10.0f64..10.0, sb in 0.0f64..2.0) {
        let x = Estimate { value: a, stderr: sa, samples: 10 };
        let y = Estimate { value: b, stderr: sb, samples: 20 };
        prop_assert_eq!(x.add_independent(y), y.add_independent(x));
        let z = x.z_against(&y);
        prop_assert!((z + y.z_against(&x)).abs() < 1e-12 || z.is_infinite());
    }

    #[test]
    fn environment_files_round_trip(seed in any::<u64>(), radius in 0usize..3, dim in 1usize..3) {
        let env = EnvironmentField::sample(
            PotentialDistribution::Weibull { beta: 1.5 },
            PotentialDistribution::DoubleExp { rho: 0.5 },
            dim,
            radius,
            Boundary::Zero,
            seed,
        )
        .unwrap();
        prop_assert_eq!(EnvironmentField::from_json(&env.to_json().unwrap()).unwrap(), env);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pde_moments_are_positive(seed in any::<u64>(), radius in 1usize..4) {
        let env = EnvironmentField::sample(
            PotentialDistribution::BoundedUniform { b: 1.0 },
            PotentialDistribution::DoubleExp { rho: 1.0 },
            1,
            radius,
            Boundary::Periodic,
            seed,
        )
        .unwrap();
        let dt = default_dt(&env, 1.0).unwrap();
        for init in [Init::Delocalized, Init::Localized(0)] {
            let fields = solve_mn_recursive(&env, 1.0, 0.7, 3, init, dt, 1).unwrap();
            for f in &fields {
                prop_assert!(f.final_values().iter().all(|v| *v > 0.0));
            }
        }
    }

    #[test]
    fn execution_policy_does_not_change_estimates(seed in any::<u64>()) {
        let env = EnvironmentField::constant(1, 2, Boundary::Periodic, 0.3, 0.6).unwrap();
        let run = |exec| {
            let opts = McOptions { exec, ..McOptions::new(500, seed) };
            estimate_moments_direct(&env, &[0], 0.8, 1.0, 2, Some(&[1]), &opts).unwrap()
        };
        let (a, b) = (run(Exec::Sequential), run(Exec::Parallel));
        prop_assert_eq!(a.global, b.global);
        prop_assert_eq!(a.local, b.local);
    }
}

#[test]
fn numbered_trees_count_factorially() {
    for k in 0..=7usize {
        let total: usize = enumerate_trees(k).unwrap().iter().map(|t| enumerate_numberings(t).len()).sum();
        assert_eq!(total, (1..=k).product::<usize>(), "k = {k}");
    }
}

#[test]
fn coefficients_are_positive_below_the_diagonal() {
    for n in 1..=12 {
        for k in 0..n {
            assert!(c_coeff(k, n).unwrap() > 0u32.into());
        }
        assert!(c_coeff(n, n).is_err());
    }
}
