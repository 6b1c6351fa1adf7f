//! Structural invariants checked over randomly generated networks.

use proptest::prelude::*;

use mimo_wsn::ed_gains::{solve_qclp, EdAllocationProblem};
use mimo_wsn::energy::{
    deflection_asymptotic, deflection_upper_bound, ed_threshold_for_pfa, weighted_chi2_tail, DeflectionMetric,
};
use mimo_wsn::lmmse::mse_closed_form;
use mimo_wsn::np_detector::snr_asymptotic_powers;
use mimo_wsn::np_gains::{waterfill, waterfill_kkt_residual, DEFAULT_TOL};
use mimo_wsn::scenario::{GainVector, Scenario};

fn network() -> impl Strategy<Value = Scenario> {
    (1usize..7)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(2.0f64..10.0, n),
                prop::collection::vec(0.05f64..0.5, n),
                0.2f64..2.0,
                0.05f64..1.0,
                1.5f64..4.0,
            )
        })
        .prop_map(|(d, v, st, sn, alpha)| Scenario::new(d, v, st, sn, alpha).unwrap())
}

fn permuted(scn: &Scenario, perm: &[usize]) -> Scenario {
    Scenario::new(
        perm.iter().map(|&i| scn.distances()[i]).collect(),
        perm.iter().map(|&i| scn.meas_noise_vars()[i]).collect(),
        scn.signal_var(),
        scn.fc_noise_var(),
        scn.path_loss_exp(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn waterfill_spends_the_budget_and_beats_equal_split(
        scn in network(), m in 1usize..400, log_p in -2.0f64..3.0,
    ) {
        let p = 10f64.powf(log_p);
        let n = scn.n_sensors();
        let sol = waterfill(&scn, m, p, DEFAULT_TOL).unwrap();
        let total: f64 = sol.magnitudes_sq.iter().sum();
        prop_assert!((total - p).abs() <= 1e-6 * p);
        prop_assert!(sol.magnitudes_sq.iter().all(|&x| x >= 0.0));
        prop_assert!(waterfill_kkt_residual(&sol, &scn, m) <= 1e-8);
        let equal = snr_asymptotic_powers(&vec![p / n as f64; n], &scn, m);
        prop_assert!(sol.achieved_snr >= equal * (1.0 - 1e-9));
        prop_assert!(sol.achieved_snr <= scn.info_ceiling() * (1.0 + 1e-12));
    }

    #[test]
    fn waterfill_is_permutation_equivariant(
        scn in network(), m in 1usize..200, log_p in -1.0f64..2.5, seed in any::<u64>(),
    ) {
        let p = 10f64.powf(log_p);
        let n = scn.n_sensors();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = waterfill(&scn, m, p, DEFAULT_TOL).unwrap();
        let b = waterfill(&permuted(&scn, &perm), m, p, DEFAULT_TOL).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((b.magnitudes_sq[k] - a.magnitudes_sq[i]).abs() <= 1e-6 * p);
        }
        prop_assert!((a.achieved_snr - b.achieved_snr).abs() <= 1e-9 * a.achieved_snr.max(1e-300));
    }

    #[test]
    fn waterfill_snr_grows_with_power(scn in network(), m in 1usize..200, log_p in -2.0f64..2.0) {
        let p = 10f64.powf(log_p);
        let lo = waterfill(&scn, m, p, DEFAULT_TOL).unwrap().achieved_snr;
        let hi = waterfill(&scn, m, 2.0 * p, DEFAULT_TOL).unwrap().achieved_snr;
        prop_assert!(hi >= lo * (1.0 - 1e-9));
    }

    #[test]
    fn mse_decreases_with_snr(st in 0.1f64..5.0, g in 0.0f64..1e3, dg in 1e-6f64..10.0) {
        let a = mse_closed_form(g, st);
        let b = mse_closed_form(g + dg, st);
        prop_assert!(b < a && a <= st && b > 0.0);
    }

    #[test]
    fn tail_is_a_decreasing_probability(
        scn in network(), m in 8usize..300, log_x in -2.0f64..1.5, steps in prop::collection::vec(0.0f64..1.0, 4),
    ) {
        let n = scn.n_sensors();
        prop_assume!(m >= n);
        let x: Vec<f64> = (0..n).map(|i| 10f64.powf(log_x) * (1.0 + 0.37 * i as f64)).collect();
        let e = mimo_wsn::energy::eta(&GainVector::from_powers(&x).unwrap(), &scn);
        let mut gamma = 0.0;
        let mut last = 1.0 + 1e-9;
        for s in steps {
            gamma += s;
            let t = weighted_chi2_tail(&e, &scn, m, gamma).unwrap();
            prop_assert!((0.0..=1.0).contains(&t.probability));
            if !t.fallback {
                prop_assert!(t.probability <= last + 1e-9);
                last = t.probability;
            }
        }
    }

    #[test]
    fn threshold_rises_as_false_alarm_target_falls(scn in network(), m in 8usize..300, log_x in -1.0f64..1.5) {
        let n = scn.n_sensors();
        prop_assume!(m >= n);
        let x: Vec<f64> = (0..n).map(|i| 10f64.powf(log_x) * (1.0 + 0.41 * i as f64)).collect();
        let e = mimo_wsn::energy::eta(&GainVector::from_powers(&x).unwrap(), &scn);
        let loose = ed_threshold_for_pfa(&e, &scn, m, 0.1).unwrap();
        let strict = ed_threshold_for_pfa(&e, &scn, m, 0.01).unwrap();
        prop_assume!(!loose.fallback && !strict.fallback);
        prop_assert!(strict.gamma_hat > loose.gamma_hat);
    }

    #[test]
    fn qclp_spends_the_budget_and_dominates_uniform_on_its_objective(
        scn in network(), m in 2usize..300, log_p in -1.5f64..2.7,
    ) {
        let p = 10f64.powf(log_p);
        let n = scn.n_sensors();
        let prob = EdAllocationProblem::new(&scn, m, p, DeflectionMetric::Deflection).unwrap();
        let sol = solve_qclp(&prob).unwrap();
        let total: f64 = sol.x.iter().sum();
        prop_assert!((total - p).abs() <= 1e-9 * p);
        prop_assert!(sol.x.iter().all(|&x| x >= 0.0));
        let uniform = vec![p / n as f64; n];
        prop_assert!(sol.upper_bound_objective >= prob.upper_bound_objective(&uniform) * (1.0 - 1e-9));
    }

    #[test]
    fn upper_bound_dominates_deflection(scn in network(), m in 1usize..500, raw in prop::collection::vec(0.0f64..5.0, 6)) {
        let x: Vec<f64> = raw[..scn.n_sensors()].to_vec();
        prop_assume!(x.iter().sum::<f64>() > 0.0);
        let full = deflection_asymptotic(&x, &scn, m).unwrap();
        let bound = deflection_upper_bound(&x, &scn, m, DeflectionMetric::Deflection).unwrap();
        prop_assert!(full <= bound * (1.0 + 1e-12));
    }
}
