//! Linear MMSE estimation of the common signal `θ`.

use num_complex::Complex64;

use crate::error::Result;
use crate::np_detector::NpTestContext;
use crate::np_gains::{Bound, BoundKind, PowerRegime};
use crate::scenario::{Observation, Scenario};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmseResult {
    pub estimate: Complex64,
    /// `1 / (σ_θ⁻² + g(a))`.
    pub theoretical_mse: f64,
}

/// `θ̂ = aᴴHᴴC_w⁻¹y / (σ_θ⁻² + g(a))`, reusing the detector's whitened filter.
pub fn lmmse_estimate(ctx: &NpTestContext, y: &Observation) -> Result<LmmseResult> {
    let denom = 1.0 / ctx.signal_var() + ctx.snr();
    Ok(LmmseResult {
        estimate: ctx.matched_output(y)? / denom,
        theoretical_mse: 1.0 / denom,
    })
}

/// `1 / (σ_θ⁻² + g)`; decreasing in `g`, equal to `σ²_θ` at `g = 0`.
pub fn mse_closed_form(snr: f64, signal_var: f64) -> f64 {
    1.0 / (1.0 / signal_var + snr)
}

/// Asymptotic MSE bounds for the multi-antenna fusion center.
///
/// Low power: `MSE ≤ 1/(σ_θ⁻² + (1/3) Σ 1/σ²_{v,i})`.
/// High power: `MSE ≥ 1/(σ_θ⁻² + Σ 1/σ²_{v,i})`, shared with the single-antenna FC.
pub fn mse_bound(scenario: &Scenario, regime: PowerRegime) -> Bound {
    let ceiling = scenario.info_ceiling();
    let (kind, snr) = match regime {
        PowerRegime::Low => (BoundKind::Upper, ceiling / 3.0),
        PowerRegime::High => (BoundKind::Lower, ceiling),
    };
    Bound {
        regime,
        kind,
        value: mse_closed_form(snr, scenario.signal_var()),
    }
}

/// Low-power bracket `(σ²_θ/(1+ζ), σ²_θ)` on the single-antenna MSE for a given `ζ`
/// (see [`crate::np_gains::single_antenna_zeta`]).
pub fn single_antenna_mse_bracket(scenario: &Scenario, zeta: f64) -> (f64, f64) {
    (scenario.signal_var() / (1.0 + zeta), scenario.signal_var())
}

/// Summary of `ζ` over channel draws; `ζ` is random and only tends to zero in probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaSummary {
    pub mean: f64,
    pub p05: f64,
    pub median: f64,
    pub p95: f64,
}

impl ZetaSummary {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
        Some(ZetaSummary {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p05: q(0.05),
            median: q(0.5),
            p95: q(0.95),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{sample_channel, GainVector, Hypothesis, StandardDraw};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gain_returns_prior() {
        let s = Scenario::new(vec![2.0, 3.0], vec![0.3, 0.4], 1.7, 0.3, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = sample_channel(&s, 4, &mut rng).unwrap();
        let ctx = NpTestContext::new(&GainVector::zeros(2), &ch, &s).unwrap();
        let y = StandardDraw::sample(2, 4, &mut rng).observe(&ch, &GainVector::zeros(2), &s, Hypothesis::H1);
        let r = lmmse_estimate(&ctx, &y).unwrap();
        assert_eq!(r.estimate, Complex64::new(0.0, 0.0));
        assert_relative_eq!(r.theoretical_mse, 1.7, max_relative = 1e-15);
    }

    #[test]
    fn mse_limits_and_monotonicity() {
        assert!(mse_closed_form(1e12, 1.0) < 1e-11);
        assert!(mse_closed_form(2.0, 1.0) < mse_closed_form(1.0, 1.0));
        let s = Scenario::new(vec![2.0, 3.0], vec![0.3, 0.4], 1.0, 0.3, 2.0).unwrap();
        let lo = mse_bound(&s, PowerRegime::High);
        let hi = mse_bound(&s, PowerRegime::Low);
        assert!(lo.value <= hi.value);
        let noisy = Scenario::new(vec![2.0, 3.0], vec![1e12, 1e12], 1.0, 0.3, 2.0).unwrap();
        assert_relative_eq!(mse_bound(&noisy, PowerRegime::Low).value, 1.0, max_relative = 1e-9);
        assert_relative_eq!(mse_bound(&noisy, PowerRegime::High).value, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn zeta_summary_quantiles() {
        let xs: Vec<f64> = (0..101).map(f64::from).collect();
        let z = ZetaSummary::from_samples(&xs).unwrap();
        assert_eq!(z.median, 50.0);
        assert_eq!(z.p05, 5.0);
        assert_eq!(z.p95, 95.0);
        assert!(ZetaSummary::from_samples(&[]).is_none());
    }
}
