//! Neyman-Pearson detection of the common Gaussian signal.
//!
//! With `C_w = H D V Dᴴ Hᴴ + σ²_n I` the H0 covariance, the likelihood ratio
//! test reduces to `σ²_θ |aᴴHᴴC_w⁻¹y|² > γ′` and both error probabilities are
//! exponentials in the SNR `g(a) = aᴴHᴴC_w⁻¹Ha`. The whitened filter
//! `C_w⁻¹Ha` is computed with an `N × N` solve; no `M × M` matrix is formed.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{check_pfa, Error, Result};
use crate::scenario::{check_dims, ChannelRealization, GainVector, Observation, Scenario};

/// The whitened filter `u = C_w⁻¹ H a` and the SNR `g(a) = (Ha)ᴴu` for one
/// gain vector on one channel draw. Shared by the detector and the LMMSE estimator.
#[derive(Debug, Clone)]
pub struct NpTestContext {
    filter: DVector<Complex64>,
    snr: f64,
    signal_var: f64,
}

impl NpTestContext {
    pub fn new(gains: &GainVector, channel: &ChannelRealization, scenario: &Scenario) -> Result<Self> {
        check_dims(channel, gains, scenario)?;
        let sn2 = scenario.fc_noise_var();
        let a = DVector::from_column_slice(gains.gains());
        let ha = channel.matrix() * &a;
        let gram_a = channel.gram() * &a;

        // C_w⁻¹ = (I − H S K⁻¹ S Hᴴ)/σ²_n with S = E^{1/2}, K = σ²_n I + S HᴴH S.
        // Unlike the E⁻¹ form this stays valid when some a_i = 0.
        let s = noise_amplitudes(gains, scenario);
        let k = inner_matrix(channel.gram(), &s, sn2);
        let chol = k.cholesky().ok_or_else(|| {
            Error::Degenerate("N×N inner matrix of the noise covariance is not positive definite".into())
        })?;
        let s_gram_a = scale(&s, &gram_a);
        let q = chol.solve(&s_gram_a);

        let correction = channel.matrix() * scale(&s, &q);
        let filter = (&ha - correction) / Complex64::new(sn2, 0.0);

        // aᴴHᴴC_w⁻¹Ha = (aᴴHᴴHa − (S HᴴHa)ᴴ K⁻¹ (S HᴴHa)) / σ²_n
        let snr = ((a.dotc(&gram_a) - s_gram_a.dotc(&q)).re / sn2).max(0.0);
        Ok(NpTestContext {
            filter,
            snr,
            signal_var: scenario.signal_var(),
        })
    }

    /// `g(a)`.
    pub fn snr(&self) -> f64 {
        self.snr
    }

    pub fn signal_var(&self) -> f64 {
        self.signal_var
    }

    /// `C_w⁻¹ H a`.
    pub fn filter(&self) -> &DVector<Complex64> {
        &self.filter
    }

    /// `aᴴHᴴC_w⁻¹y`.
    pub fn matched_output(&self, y: &Observation) -> Result<Complex64> {
        if y.len() != self.filter.len() {
            return Err(Error::Dimension(format!(
                "observation has {} entries, detector expects {}",
                y.len(),
                self.filter.len()
            )));
        }
        Ok(self.filter.dotc(&y.y))
    }

    /// The test statistic `σ²_θ |aᴴHᴴC_w⁻¹y|²`; compare against [`Self::threshold`].
    pub fn statistic(&self, y: &Observation) -> Result<f64> {
        Ok(self.signal_var * self.matched_output(y)?.norm_sqr())
    }

    pub fn threshold(&self, target_pfa: f64) -> Result<f64> {
        threshold_for_pfa(self.snr, self.signal_var, target_pfa)
    }

    pub fn pd(&self, target_pfa: f64) -> Result<f64> {
        pd_closed_form(self.snr, self.signal_var, target_pfa)
    }
}

fn noise_amplitudes(gains: &GainVector, scenario: &Scenario) -> Vec<f64> {
    gains
        .gains()
        .iter()
        .zip(scenario.meas_noise_vars())
        .map(|(a, v)| (a.norm_sqr() * v).sqrt())
        .collect()
}

fn inner_matrix(gram: &DMatrix<Complex64>, s: &[f64], sn2: f64) -> DMatrix<Complex64> {
    let n = s.len();
    DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { sn2 } else { 0.0 };
        gram[(i, j)] * (s[i] * s[j]) + diag
    })
}

fn scale(s: &[f64], v: &DVector<Complex64>) -> DVector<Complex64> {
    DVector::from_iterator(v.len(), s.iter().zip(v.iter()).map(|(si, vi)| vi * *si))
}

/// `g(a) = aᴴHᴴC_w⁻¹Ha` on a given channel draw.
pub fn snr_exact(gains: &GainVector, channel: &ChannelRealization, scenario: &Scenario) -> Result<f64> {
    NpTestContext::new(gains, channel, scenario).map(|c| c.snr)
}

/// Large-`M` limit of the SNR: `Σ M|a_i|² / (σ²_n d_i^α + σ²_{v,i} M|a_i|²)`.
pub fn snr_asymptotic(gains: &GainVector, scenario: &Scenario, m: usize) -> f64 {
    snr_asymptotic_powers(&gains.powers(), scenario, m)
}

/// [`snr_asymptotic`] in terms of per-sensor powers `x_i = |a_i|²`.
pub fn snr_asymptotic_powers(x: &[f64], scenario: &Scenario, m: usize) -> f64 {
    let m = m as f64;
    let sn2 = scenario.fc_noise_var();
    x.iter()
        .zip(scenario.meas_noise_vars())
        .enumerate()
        .map(|(i, (&xi, &sv))| {
            let mx = m * xi;
            if mx == 0.0 {
                0.0
            } else {
                mx / (sn2 * scenario.path_loss(i) + sv * mx)
            }
        })
        .sum()
}

/// `γ′ = −σ²_θ g ln ε`, the threshold giving false-alarm probability `ε`.
pub fn threshold_for_pfa(snr: f64, signal_var: f64, target_pfa: f64) -> Result<f64> {
    check_pfa(target_pfa)?;
    check_snr(snr)?;
    Ok(-signal_var * snr * target_pfa.ln())
}

/// `P_D = ε^{1/(1 + σ²_θ g)}`, evaluated in log space.
pub fn pd_closed_form(snr: f64, signal_var: f64, target_pfa: f64) -> Result<f64> {
    check_pfa(target_pfa)?;
    check_snr(snr)?;
    Ok((target_pfa.ln() / (1.0 + signal_var * snr)).exp())
}

/// `P_FA = exp(−γ′ / (σ²_θ g))` for an arbitrary threshold.
pub fn pfa_at_threshold(threshold: f64, snr: f64, signal_var: f64) -> f64 {
    if snr <= 0.0 {
        return if threshold < 0.0 { 1.0 } else { 0.0 };
    }
    (-threshold.max(0.0) / (signal_var * snr)).exp()
}

/// `P_D = exp(−γ′ / (σ⁴_θ g² + σ²_θ g))` for an arbitrary threshold.
pub fn pd_at_threshold(threshold: f64, snr: f64, signal_var: f64) -> f64 {
    if snr <= 0.0 {
        return if threshold < 0.0 { 1.0 } else { 0.0 };
    }
    let x = signal_var * snr;
    (-threshold.max(0.0) / (x * x + x)).exp()
}

fn check_snr(snr: f64) -> Result<()> {
    if snr.is_finite() && snr >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "SNR must be finite and nonnegative, got {snr}"
        )))
    }
}

/// Scalar-output fusion center. With physical gains `a` and scalar channels
/// `h`, `y = (hᵀa) θ + Σ a_i h_i v_i + n`, so
/// `σ²_s = σ²_θ |hᵀa|²` and `σ²_w = Σ |a_i|²|h_i|²σ²_{v,i} + σ²_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleAntennaContext {
    sigma_s_sq: f64,
    sigma_w_sq: f64,
}

impl SingleAntennaContext {
    pub fn new(gains: &GainVector, h: &[Complex64], scenario: &Scenario) -> Result<Self> {
        let n = scenario.n_sensors();
        if gains.len() != n || h.len() != n {
            return Err(Error::Dimension(format!(
                "scenario has {n} sensors, gain vector {} entries, channel {}",
                gains.len(),
                h.len()
            )));
        }
        let coherent: Complex64 = gains.gains().iter().zip(h).map(|(a, hi)| a * hi).sum();
        let sigma_s_sq = scenario.signal_var() * coherent.norm_sqr();
        let sigma_w_sq = gains
            .gains()
            .iter()
            .zip(h)
            .zip(scenario.meas_noise_vars())
            .map(|((a, hi), v)| a.norm_sqr() * hi.norm_sqr() * v)
            .sum::<f64>()
            + scenario.fc_noise_var();
        Ok(SingleAntennaContext { sigma_s_sq, sigma_w_sq })
    }

    pub fn sigma_s_sq(&self) -> f64 {
        self.sigma_s_sq
    }
    pub fn sigma_w_sq(&self) -> f64 {
        self.sigma_w_sq
    }
    /// `σ²_s / σ²_w`; plays the role of `σ²_θ g` in the multi-antenna formulas.
    pub fn snr_ratio(&self) -> f64 {
        self.sigma_s_sq / self.sigma_w_sq
    }

    /// `γ̃′ = −σ²_w ln ε`.
    pub fn threshold(&self, target_pfa: f64) -> Result<f64> {
        check_pfa(target_pfa)?;
        Ok(-self.sigma_w_sq * target_pfa.ln())
    }

    /// Maps a likelihood-ratio threshold `γ̃` to the energy threshold
    /// `γ̃′ = ln(γ̃(1 + σ²_s/σ²_w)) (σ²_w + σ⁴_w/σ²_s)`.
    pub fn threshold_from_likelihood_ratio(&self, lr_threshold: f64) -> Result<f64> {
        self.check_signal()?;
        let ratio = self.snr_ratio();
        Ok((lr_threshold * (1.0 + ratio)).ln()
            * (self.sigma_w_sq + self.sigma_w_sq * self.sigma_w_sq / self.sigma_s_sq))
    }

    /// Decides H1 iff `|y|² > γ̃′`.
    pub fn decide(&self, y: Complex64, threshold: f64) -> Result<bool> {
        self.check_signal()?;
        Ok(y.norm_sqr() > threshold)
    }

    /// `exp(−γ̃′ / (σ²_s + σ²_w))`.
    pub fn pd(&self, threshold: f64) -> f64 {
        (-threshold.max(0.0) / (self.sigma_s_sq + self.sigma_w_sq)).exp()
    }

    /// `exp(−γ̃′ / σ²_w)`.
    pub fn pfa(&self, threshold: f64) -> f64 {
        (-threshold.max(0.0) / self.sigma_w_sq).exp()
    }

    /// `ε^{1/(1 + σ²_s/σ²_w)}` at the threshold calibrated for `ε`.
    pub fn pd_closed_form(&self, target_pfa: f64) -> Result<f64> {
        check_pfa(target_pfa)?;
        Ok((target_pfa.ln() / (1.0 + self.snr_ratio())).exp())
    }

    fn check_signal(&self) -> Result<()> {
        if self.sigma_s_sq > 0.0 {
            Ok(())
        } else {
            Err(Error::Degenerate(
                "no signal reaches the fusion center (σ²_s = 0)".into(),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{sample_channel, Hypothesis, StandardDraw};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_sensor() -> Scenario {
        Scenario::new(vec![2.0, 3.5], vec![0.3, 0.45], 1.0, 0.3, 2.0).unwrap()
    }

    #[test]
    fn zero_gain_gives_zero_snr_and_statistic() {
        let s = two_sensor();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ch = sample_channel(&s, 6, &mut rng).unwrap();
        let ctx = NpTestContext::new(&GainVector::zeros(2), &ch, &s).unwrap();
        assert_eq!(ctx.snr(), 0.0);
        let draw = StandardDraw::sample(2, 6, &mut rng);
        let y = draw.observe(&ch, &GainVector::equal(2, 1.0).unwrap(), &s, Hypothesis::H1);
        assert_eq!(ctx.statistic(&y).unwrap(), 0.0);
        assert_eq!(snr_asymptotic(&GainVector::zeros(2), &s, 10), 0.0);
    }

    #[test]
    fn statistic_vanishes_on_orthogonal_observation() {
        let s = two_sensor();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ch = sample_channel(&s, 5, &mut rng).unwrap();
        let ctx = NpTestContext::new(&GainVector::equal(2, 2.0).unwrap(), &ch, &s).unwrap();
        let u = ctx.filter();
        // Any vector orthogonal to u: e.g. project a random vector.
        let draw = StandardDraw::sample(2, 5, &mut rng);
        let z = DVector::from_column_slice(&draw.n);
        let y = &z - u * (u.dotc(&z) / u.dotc(u));
        let obs = Observation {
            y,
            hypothesis: Hypothesis::H0,
        };
        assert!(ctx.statistic(&obs).unwrap() < 1e-20);
    }

    #[test]
    fn threshold_and_pd_closed_forms() {
        let e1 = (-1.0f64).exp();
        assert_relative_eq!(threshold_for_pfa(1.0, 1.0, e1).unwrap(), 1.0, epsilon = 1e-15);
        assert!(threshold_for_pfa(1.0, 1.0, 1.0 - 1e-12).unwrap() < 1e-11);
        assert_eq!(threshold_for_pfa(0.0, 1.0, 0.05).unwrap(), 0.0);
        assert!(threshold_for_pfa(1.0, 1.0, 0.0).is_err());
        assert!(threshold_for_pfa(1.0, 1.0, 1.0).is_err());

        assert_relative_eq!(pd_closed_form(0.0, 1.0, 0.05).unwrap(), 0.05, epsilon = 1e-15);
        assert_relative_eq!(pd_closed_form(1.0, 1.0, e1).unwrap(), (-0.5f64).exp(), epsilon = 1e-15);
        assert!(pd_closed_form(1e12, 1.0, 0.05).unwrap() > 1.0 - 1e-10);
        // log-space keeps tiny ε finite
        let tiny = pd_closed_form(1.0, 1.0, 1e-300).unwrap();
        assert_relative_eq!(tiny.ln(), 1e-300f64.ln() / 2.0, max_relative = 1e-12);

        // pd_at_threshold at the calibrated threshold agrees with the ε form
        let g = 2.7;
        let thr = threshold_for_pfa(g, 1.3, 0.05).unwrap();
        assert_relative_eq!(pfa_at_threshold(thr, g, 1.3), 0.05, max_relative = 1e-12);
        assert_relative_eq!(
            pd_at_threshold(thr, g, 1.3),
            pd_closed_form(g, 1.3, 0.05).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn asymptotic_snr_limits() {
        let s = two_sensor();
        let ceiling = s.info_ceiling();
        let huge = GainVector::from_powers(&[1e9, 1e9]).unwrap();
        assert_relative_eq!(snr_asymptotic(&huge, &s, 1000), ceiling, max_relative = 1e-6);
    }

    #[test]
    fn single_antenna_ratio_and_thresholds() {
        let s = two_sensor();
        let h = vec![Complex64::new(0.3, -0.2), Complex64::new(-0.1, 0.4)];
        let a = GainVector::new(vec![Complex64::new(1.0, 0.5), Complex64::new(0.2, -0.7)]).unwrap();
        let ctx = SingleAntennaContext::new(&a, &h, &s).unwrap();
        let coh = a.gains()[0] * h[0] + a.gains()[1] * h[1];
        assert_relative_eq!(ctx.sigma_s_sq(), coh.norm_sqr(), max_relative = 1e-14);

        let thr = ctx.threshold(0.05).unwrap();
        assert_relative_eq!(ctx.pfa(thr), 0.05, max_relative = 1e-12);
        assert_relative_eq!(ctx.pd(thr), ctx.pd_closed_form(0.05).unwrap(), max_relative = 1e-12);

        // likelihood-ratio threshold mapping: γ̃ = 1 gives ln(1 + s/w)(w + w²/s)
        let (ss, sw) = (ctx.sigma_s_sq(), ctx.sigma_w_sq());
        assert_relative_eq!(
            ctx.threshold_from_likelihood_ratio(1.0).unwrap(),
            (1.0 + ss / sw).ln() * (1.0 + sw / ss) * sw,
            max_relative = 1e-12
        );

        let dead = SingleAntennaContext::new(&GainVector::zeros(2), &h, &s).unwrap();
        assert!(matches!(
            dead.decide(Complex64::new(1.0, 0.0), 0.1),
            Err(Error::Degenerate(_))
        ));
    }
}
