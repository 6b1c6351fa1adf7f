//! Sensor power allocation for the Neyman-Pearson detector and LMMSE estimator.
//!
//! For large `M` the SNR separates into `Σ M x_i / (c_i + σ²_{v,i} M x_i)`
//! with `c_i = σ²_n d_i^α`, a concave function of the powers `x_i = |a_i|²`.
//! Its maximizer under `Σ x_i = P` is the clamped square-root law
//! `x_i(λ) = (sqrt(c_i M / λ) − c_i)⁺ / (σ²_{v,i} M)`; `λ` is found by bisection.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_pfa, Error, Result};
use crate::np_detector::snr_asymptotic_powers;
use crate::scenario::{GainVector, Scenario};

pub const DEFAULT_TOL: f64 = 1e-9;
const MAX_BISECTIONS: usize = 2_000;

#[derive(Debug, Clone, PartialEq)]
pub struct WaterfillSolution {
    /// `x_i = |a_i|²`.
    pub magnitudes_sq: Vec<f64>,
    /// The multiplier `λ` of the sum-power constraint.
    pub multiplier: f64,
    /// Asymptotic SNR at the solution.
    pub achieved_snr: f64,
    pub iterations: usize,
    /// `[λ_l, λ_u]` bracket the search started from.
    pub bracket: (f64, f64),
}

impl WaterfillSolution {
    /// Zero-phase gains `sqrt(x_i)`.
    pub fn gains(&self) -> GainVector {
        GainVector::from_powers(&self.magnitudes_sq).expect("water-filling powers are nonnegative")
    }
}

fn allocation(c: &[f64], sv: &[f64], m: f64, lambda: f64) -> Vec<f64> {
    c.iter()
        .zip(sv)
        .map(|(&ci, &si)| ((ci * m / lambda).sqrt() - ci).max(0.0) / (si * m))
        .collect()
}

/// Maximizes the asymptotic SNR subject to `Σ x_i = P`.
///
/// Bisects `λ` (geometrically, since the bracket spans many decades) until the
/// power residual is within `tol·P` and the bracket is narrower than `1e-12·λ_u`.
pub fn waterfill(scenario: &Scenario, m: usize, p: f64, tol: f64) -> Result<WaterfillSolution> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("sum power must be positive, got {p}")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("antenna count must be at least 1".into()));
    }
    let mf = m as f64;
    let sn2 = scenario.fc_noise_var();
    let c: Vec<f64> = (0..scenario.n_sensors()).map(|i| sn2 * scenario.path_loss(i)).collect();
    let sv = scenario.meas_noise_vars();

    let lambda_u = mf / c.iter().cloned().fold(f64::INFINITY, f64::min);
    let lambda_l = c
        .iter()
        .zip(sv)
        .map(|(&ci, &si)| ci * mf / (ci + si * p * mf).powi(2))
        .fold(f64::INFINITY, f64::min);

    let total = |lambda: f64| allocation(&c, sv, mf, lambda).iter().sum::<f64>();
    // total(λ) is nonincreasing: total(λ_l) ≥ P ≥ total(λ_u) = 0.
    let (mut lo, mut hi) = (lambda_l, lambda_u);
    let mut iterations = 0;
    let mut best = lo;
    let mut best_res = (total(lo) - p).abs();
    while iterations < MAX_BISECTIONS {
        iterations += 1;
        let mid = (lo * hi).sqrt();
        if !(mid > lo && mid < hi) {
            break;
        }
        let res = total(mid) - p;
        if res.abs() < best_res {
            best = mid;
            best_res = res.abs();
        }
        if res > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if best_res <= tol * p && hi - lo <= 1e-12 * lambda_u {
            break;
        }
    }
    if best_res > tol * p {
        return Err(Error::NoConvergence(format!(
            "water-filling power residual {best_res:e} exceeds {:e}",
            tol * p
        )));
    }
    let x = allocation(&c, sv, mf, best);
    Ok(WaterfillSolution {
        achieved_snr: snr_asymptotic_powers(&x, scenario, m),
        magnitudes_sq: x,
        multiplier: best,
        iterations,
        bracket: (lambda_l, lambda_u),
    })
}

/// Largest relative KKT violation of a water-filling solution.
///
/// Active sensors must have marginal SNR `c_i M / (c_i + σ²_{v,i} M x_i)²`
/// equal to `λ`; inactive ones must have marginal at zero, `M / c_i`, at most `λ`.
pub fn waterfill_kkt_residual(sol: &WaterfillSolution, scenario: &Scenario, m: usize) -> f64 {
    let mf = m as f64;
    let lambda = sol.multiplier;
    sol.magnitudes_sq
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = scenario.fc_noise_var() * scenario.path_loss(i);
            let marginal = c * mf / (c + scenario.meas_noise_vars()[i] * mf * x).powi(2);
            if x > 0.0 {
                (marginal - lambda).abs() / lambda
            } else {
                ((marginal - lambda) / lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Optimal gains for a single-antenna fusion center with known scalar channels `h`.
///
/// Maximizes `σ²_s/σ²_w` under `Σ|a_i|² = P`. With `R = F V Fᴴ + (σ²_n/P) I`
/// the optimal combining direction is `R⁻¹h`; the physical gains are its
/// conjugate so that every sensor arrives co-phased. The achieved ratio is
/// `σ²_θ hᴴR⁻¹h`.
pub fn single_antenna_optimal_gains(scenario: &Scenario, h: &[Complex64], p: f64) -> Result<GainVector> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("sum power must be positive, got {p}")));
    }
    if h.len() != scenario.n_sensors() {
        return Err(Error::Dimension(format!(
            "channel has {} entries, scenario {} sensors",
            h.len(),
            scenario.n_sensors()
        )));
    }
    if h.iter().all(|hi| hi.norm_sqr() == 0.0) {
        return Err(Error::Degenerate("single-antenna channel is identically zero".into()));
    }
    let r_inv_h: Vec<Complex64> = h
        .iter()
        .zip(scenario.meas_noise_vars())
        .map(|(hi, v)| hi / (hi.norm_sqr() * v + scenario.fc_noise_var() / p))
        .collect();
    let norm_sq: f64 = r_inv_h.iter().map(|z| z.norm_sqr()).sum();
    let scale = (p / norm_sq).sqrt();
    GainVector::new(r_inv_h.iter().map(|z| z.conj() * scale).collect())
}

/// `σ²_θ hᴴR⁻¹h`, the largest achievable `σ²_s/σ²_w` at power `P`.
pub fn single_antenna_optimal_ratio(scenario: &Scenario, h: &[Complex64], p: f64) -> f64 {
    scenario.signal_var()
        * h.iter()
            .zip(scenario.meas_noise_vars())
            .map(|(hi, v)| hi.norm_sqr() / (hi.norm_sqr() * v + scenario.fc_noise_var() / p))
            .sum::<f64>()
}

/// Reference gains `|ā_i|² = σ²_n d_i^α / (2 σ²_{v,i} M)`. Each sensor then
/// contributes exactly a third of its ceiling `1/σ²_{v,i}` to the asymptotic SNR.
pub fn reference_low_power_gains(scenario: &Scenario, m: usize) -> GainVector {
    let x: Vec<f64> = (0..scenario.n_sensors())
        .map(|i| reference_power(scenario, m, i))
        .collect();
    GainVector::from_powers(&x).expect("reference powers are positive")
}

fn reference_power(scenario: &Scenario, m: usize, i: usize) -> f64 {
    scenario.fc_noise_var() * scenario.path_loss(i) / (2.0 * scenario.meas_noise_vars()[i] * m as f64)
}

/// `P = (1/2M) Σ σ²_n d_i^α / σ²_{v,i}`, the budget of [`reference_low_power_gains`]
/// and the `O(1/M)` power schedule.
pub fn reference_low_power_budget(scenario: &Scenario, m: usize) -> f64 {
    let sum: f64 = (0..scenario.n_sensors())
        .map(|i| scenario.fc_noise_var() * scenario.path_loss(i) / scenario.meas_noise_vars()[i])
        .sum();
    sum / (2.0 * m as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerRegime {
    /// `P = O(1/M) → 0` as `M → ∞`.
    Low,
    /// `P → ∞`.
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub regime: PowerRegime,
    pub kind: BoundKind,
    pub value: f64,
}

/// Asymptotic detection-probability bounds of the multi-antenna NP detector.
///
/// Low power: `P_D ≥ ε^{1/(1 + (σ²_θ/3) Σ 1/σ²_{v,i})}`.
/// High power: `P_D ≤ ε^{1/(1 + σ²_θ Σ 1/σ²_{v,i})}`, shared with the single-antenna FC.
pub fn np_pd_bound(scenario: &Scenario, regime: PowerRegime, target_pfa: f64) -> Result<Bound> {
    check_pfa(target_pfa)?;
    let ceiling = scenario.signal_var() * scenario.info_ceiling();
    let (kind, x) = match regime {
        PowerRegime::Low => (BoundKind::Lower, ceiling / 3.0),
        PowerRegime::High => (BoundKind::Upper, ceiling),
    };
    Ok(Bound {
        regime,
        kind,
        value: (target_pfa.ln() / (1.0 + x)).exp(),
    })
}

/// `ζ = (1/2M) Σ (σ²_θ d_i^α / σ²_{v,i}) · hᴴh` for one single-antenna channel draw.
pub fn single_antenna_zeta(scenario: &Scenario, h: &[Complex64], m: usize) -> f64 {
    let hh: f64 = h.iter().map(|z| z.norm_sqr()).sum();
    let weight: f64 = (0..scenario.n_sensors())
        .map(|i| scenario.signal_var() * scenario.path_loss(i) / scenario.meas_noise_vars()[i])
        .sum();
    weight * hh / (2.0 * m as f64)
}

/// Low-power bracket `(ε, ε^{1/(1+ζ)})` on the single-antenna detection probability.
pub fn single_antenna_pd_bracket(
    scenario: &Scenario,
    h: &[Complex64],
    m: usize,
    target_pfa: f64,
) -> Result<(f64, f64)> {
    check_pfa(target_pfa)?;
    let zeta = single_antenna_zeta(scenario, h, m);
    Ok((target_pfa, (target_pfa.ln() / (1.0 + zeta)).exp()))
}
