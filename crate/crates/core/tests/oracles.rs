//! Independent checks of the closed forms: dense M×M algebra, direct
//! simulation and brute-force search.

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};

use mimo_wsn::ed_gains::{solve_qclp, EdAllocationProblem};
use mimo_wsn::energy::{
    deflection_exact, ed_statistic, ed_threshold_for_pfa, energy_moments, eta, weighted_chi2_tail, DeflectionMetric,
};
use mimo_wsn::lmmse::lmmse_estimate;
use mimo_wsn::np_detector::{snr_asymptotic, NpTestContext, SingleAntennaContext};
use mimo_wsn::np_gains::single_antenna_optimal_ratio;
use mimo_wsn::rng::{stream, Domain};
use mimo_wsn::scenario::{
    complex_normal, sample_channel, ChannelRealization, GainVector, Hypothesis, Scenario, ScenarioSampler, StandardDraw,
};

fn rng(index: u64) -> ChaCha8Rng {
    stream(77, Domain::Trial, index)
}

fn scenario(n: usize, seed: u64) -> Scenario {
    ScenarioSampler {
        n_sensors: n,
        ..ScenarioSampler::default()
    }
    .sample(&mut rng(seed))
    .unwrap()
}

fn random_gains(n: usize, p: f64, rng: &mut ChaCha8Rng) -> GainVector {
    let raw: Vec<Complex64> = (0..n).map(|_| complex_normal(rng, 1.0)).collect();
    let norm: f64 = raw.iter().map(|z| z.norm_sqr()).sum();
    GainVector::new(raw.iter().map(|z| z * (p / norm).sqrt()).collect()).unwrap()
}

/// Received signal direction `H a` and noise covariance `H D Hᴴ + σ²_n I`.
fn dense_model(
    gains: &GainVector,
    ch: &ChannelRealization,
    scn: &Scenario,
) -> (DVector<Complex64>, DMatrix<Complex64>) {
    let h = ch.matrix();
    let a = DVector::from_column_slice(gains.gains());
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        a.len(),
        gains
            .powers()
            .iter()
            .zip(scn.meas_noise_vars())
            .map(|(x, v)| Complex64::new(x * v, 0.0)),
    ));
    let m = h.nrows();
    let cw = h * d * h.adjoint() + DMatrix::identity(m, m) * Complex64::new(scn.fc_noise_var(), 0.0);
    (h * a, cw)
}

#[test]
fn np_snr_and_pd_match_dense_algebra() {
    let mut r = rng(1);
    for (n, m) in [(1, 4), (3, 7), (6, 30), (10, 50)] {
        let scn = scenario(n, 10 + n as u64);
        let ch = sample_channel(&scn, m, &mut r).unwrap();
        let gains = random_gains(n, 3.0, &mut r);
        let ctx = NpTestContext::new(&gains, &ch, &scn).unwrap();
        let (s, cw) = dense_model(&gains, &ch, &scn);
        let cw_inv = cw.try_inverse().unwrap();
        let g = s.dotc(&(&cw_inv * &s)).re;
        assert_relative_eq!(ctx.snr(), g, max_relative = 1e-9);

        // |sᴴC_w⁻¹y|² is exponential with mean g under H0 and g + σ²_θ g² under H1.
        let eps: f64 = 0.05;
        let t = -g * eps.ln();
        let pd = (-t / (g + scn.signal_var() * g * g)).exp();
        assert_relative_eq!(ctx.pd(eps).unwrap(), pd, max_relative = 1e-9);
        assert_relative_eq!(ctx.threshold(eps).unwrap(), scn.signal_var() * t, max_relative = 1e-9);
    }
}

#[test]
fn lmmse_matches_direct_wiener_filter() {
    let mut r = rng(2);
    let scn = scenario(5, 20);
    let ch = sample_channel(&scn, 12, &mut r).unwrap();
    let gains = random_gains(5, 2.0, &mut r);
    let ctx = NpTestContext::new(&gains, &ch, &scn).unwrap();
    let (s, cw) = dense_model(&gains, &ch, &scn);
    let st = scn.signal_var();
    let cy = &s * s.adjoint() * Complex64::new(st, 0.0) + cw;
    let cy_inv = cy.try_inverse().unwrap();
    let mse = st - st * st * s.dotc(&(&cy_inv * &s)).re;
    for k in 0..5 {
        let y = StandardDraw::sample(5, 12, &mut r).observe(&ch, &gains, &scn, Hypothesis::H1);
        let est = lmmse_estimate(&ctx, &y).unwrap();
        let direct = (s.adjoint() * &cy_inv * &y.y)[(0, 0)] * st;
        assert!(
            (est.estimate - direct).norm() <= 1e-9 * direct.norm().max(1.0),
            "draw {k}"
        );
        assert_relative_eq!(est.theoretical_mse, mse, max_relative = 1e-9);
    }
}

#[test]
fn energy_moments_match_dense_traces_and_simulation() {
    let mut r = rng(3);
    let scn = scenario(4, 30);
    let m = 16;
    let ch = sample_channel(&scn, m, &mut r).unwrap();
    let gains = random_gains(4, 5.0, &mut r);
    let (s, cw) = dense_model(&gains, &ch, &scn);
    let mf = m as f64;
    let mo = energy_moments(&gains, &ch, &scn).unwrap();
    let tr_cw = cw.trace().re;
    let tr_cw2 = (&cw * &cw).trace().re;
    let tr_cs = scn.signal_var() * s.norm_squared();
    assert_relative_eq!(mo.mean_h0, tr_cw / mf, max_relative = 1e-10);
    assert_relative_eq!(mo.mean_h1, (tr_cw + tr_cs) / mf, max_relative = 1e-10);
    assert_relative_eq!(mo.var_h0, tr_cw2 / (mf * mf), max_relative = 1e-10);
    assert_relative_eq!(
        deflection_exact(&gains, &ch, &scn).unwrap(),
        tr_cs * tr_cs / tr_cw2,
        max_relative = 1e-10
    );

    let draws = 200_000;
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..draws {
        let t = ed_statistic(&StandardDraw::sample(4, m, &mut r).observe(&ch, &gains, &scn, Hypothesis::H0));
        s1 += t;
        s2 += t * t;
    }
    let mean = s1 / draws as f64;
    let var = s2 / draws as f64 - mean * mean;
    assert!((mean - mo.mean_h0).abs() < 5.0 * (mo.var_h0 / draws as f64).sqrt());
    assert_relative_eq!(var, mo.var_h0, max_relative = 0.03);
}

#[test]
fn snr_hardens_to_its_large_antenna_limit() {
    let mut r = rng(4);
    let scn = scenario(3, 40);
    let m = 20_000;
    let ch = sample_channel(&scn, m, &mut r).unwrap();
    let gains = random_gains(3, 1e-3, &mut r);
    let ctx = NpTestContext::new(&gains, &ch, &scn).unwrap();
    assert_relative_eq!(ctx.snr(), snr_asymptotic(&gains, &scn, m), max_relative = 0.03);
}

#[test]
fn single_antenna_optimum_beats_random_search() {
    let mut r = rng(5);
    let scn = scenario(3, 50);
    let h: Vec<Complex64> = (0..3).map(|i| complex_normal(&mut r, 1.0 / scn.path_loss(i))).collect();
    let p = 2.0;
    let best = single_antenna_optimal_ratio(&scn, &h, p);
    let ratio = |g: &GainVector| {
        let sig: Complex64 = h.iter().zip(g.gains()).map(|(hi, ai)| hi * ai).sum();
        let noise: f64 = h
            .iter()
            .zip(g.gains())
            .zip(scn.meas_noise_vars())
            .map(|((hi, ai), v)| (hi * ai).norm_sqr() * v)
            .sum::<f64>()
            + scn.fc_noise_var();
        scn.signal_var() * sig.norm_sqr() / noise
    };
    let mut found: f64 = 0.0;
    for _ in 0..50_000 {
        let g = random_gains(3, p, &mut r);
        let q = ratio(&g);
        let ctx = SingleAntennaContext::new(&g, &h, &scn).unwrap();
        assert_relative_eq!(ctx.snr_ratio(), q, max_relative = 1e-10);
        assert!(q <= best * (1.0 + 1e-10));
        found = found.max(q);
    }
    assert!(found >= 0.97 * best, "search reached {found}, optimum {best}");
}

#[test]
fn qclp_beats_random_simplex_points_on_its_objective() {
    let mut r = rng(6);
    for k in 0..5 {
        let n = 2 + k;
        let scn = scenario(n, 60 + k as u64);
        let (m, p) = (40, 10f64.powf(r.random_range(-1.0..2.5)));
        let prob = EdAllocationProblem::new(&scn, m, p, DeflectionMetric::Deflection).unwrap();
        let sol = solve_qclp(&prob).unwrap();
        let dirichlet = Gamma::new(0.5, 1.0).unwrap();
        let mut found: f64 = 0.0;
        for _ in 0..20_000 {
            let w: Vec<f64> = (0..n).map(|_| dirichlet.sample(&mut r)).collect();
            let total: f64 = w.iter().sum();
            let x: Vec<f64> = w.iter().map(|wi| p * wi / total).collect();
            let obj = prob.upper_bound_objective(&x);
            assert!(obj <= sol.upper_bound_objective * (1.0 + 1e-9));
            found = found.max(obj);
        }
        assert!(found >= 0.95 * sol.upper_bound_objective);
    }
}

#[test]
fn energy_tail_matches_direct_simulation() {
    let mut r = rng(7);
    let m = 64;
    for n in [1usize, 2, 5] {
        let scn = scenario(n, 70 + n as u64);
        let gains = GainVector::from_powers(&(0..n).map(|i| 0.5 + i as f64).collect::<Vec<_>>()).unwrap();
        let e = eta(&gains, &scn);
        let sn2 = scn.fc_noise_var();
        let offset = (m - n) as f64 / m as f64 * sn2;
        let weights: Vec<f64> = e.iter().map(|v| v + sn2 / m as f64).collect();
        let mean: f64 = weights.iter().sum::<f64>() + offset;
        for gamma in [offset + 0.2 * (mean - offset), mean, offset + 3.0 * (mean - offset)] {
            let closed = weighted_chi2_tail(&e, &scn, m, gamma).unwrap();
            assert!(!closed.fallback);
            if n == 1 {
                assert_relative_eq!(
                    closed.probability,
                    (-(gamma - offset) / weights[0]).exp(),
                    max_relative = 1e-12
                );
            }
            let samples = 400_000;
            let hits = (0..samples)
                .filter(|_| weights.iter().map(|w| w * r.sample::<f64, _>(Exp1)).sum::<f64>() + offset > gamma)
                .count();
            assert!((closed.probability - hits as f64 / samples as f64).abs() < 0.003);
        }
        let thr = ed_threshold_for_pfa(&e, &scn, m, 0.05).unwrap();
        assert_relative_eq!(
            weighted_chi2_tail(&e, &scn, m, thr.gamma_hat).unwrap().probability,
            0.05,
            epsilon = 1e-6
        );
    }
}
