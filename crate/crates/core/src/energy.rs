//! Energy detector `T = yᴴy / M`, which needs no channel knowledge.
//!
//! Performance is tracked through the deflection
//! `(E[T|H1] − E[T|H0])² / Var[T|H0]`; the false-alarm threshold comes from the
//! large-`M` H0 law of `T`, a weighted sum of exponentials plus a constant.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{check_pfa, Error, Result};
use crate::np_detector::SingleAntennaContext;
use crate::rng::{stream, Domain};
use crate::scenario::{check_dims, ChannelRealization, GainVector, Observation, Scenario};

/// Samples used when the closed-form tail is numerically unusable.
pub const FALLBACK_SAMPLES: usize = 1_000_000;
const FALLBACK_SEED: u64 = 0x7a11_5eed;
/// Minimum pairwise `η` separation, relative to `max η`, for the closed-form tail.
pub const ETA_SEPARATION: f64 = 1e-6;
const THRESHOLD_TOL: f64 = 1e-6;

/// `T = yᴴy / M`.
pub fn ed_statistic(y: &Observation) -> f64 {
    y.y.norm_squared() / y.len() as f64
}

/// Which normalization the deflection uses: the H0 variance, or the H1
/// variance ("modified" deflection).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeflectionMetric {
    #[default]
    Deflection,
    ModifiedDeflection,
}

/// Vectors of the large-`M` deflection:
/// `d_i = 1/d_i^α`, `B_ii = σ⁴_{v,i}/d_i^{2α}`, `b_i = σ²_{v,i}/d_i^α`,
/// with `σ²_θ` added to the noise terms for the modified metric.
#[derive(Debug, Clone, PartialEq)]
pub struct DeflectionTerms {
    pub d: Vec<f64>,
    pub b_diag: Vec<f64>,
    pub b: Vec<f64>,
}

impl DeflectionTerms {
    pub fn new(scenario: &Scenario, metric: DeflectionMetric) -> Self {
        let st = scenario.signal_var();
        let n = scenario.n_sensors();
        let mut d = Vec::with_capacity(n);
        let mut b_diag = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for i in 0..n {
            let pl = scenario.path_loss(i);
            let sv = scenario.meas_noise_vars()[i];
            d.push(1.0 / pl);
            match metric {
                DeflectionMetric::Deflection => {
                    b_diag.push(sv * sv / (pl * pl));
                    b.push(sv / pl);
                }
                DeflectionMetric::ModifiedDeflection => {
                    b_diag.push((sv * sv + sv * st) / (pl * pl));
                    b.push((sv + st) / pl);
                }
            }
        }
        DeflectionTerms { d, b_diag, b }
    }

    fn xd(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.d).map(|(a, b)| a * b).sum()
    }
    fn xbx(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.b_diag).map(|(a, b)| a * a * b).sum()
    }
    fn bx(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.b).map(|(a, b)| a * b).sum()
    }
}

fn check_powers(x: &[f64], scenario: &Scenario) -> Result<()> {
    if x.len() != scenario.n_sensors() {
        return Err(Error::Dimension(format!(
            "{} powers for {} sensors",
            x.len(),
            scenario.n_sensors()
        )));
    }
    if x.iter().any(|&v| v.is_nan() || v < 0.0) {
        return Err(Error::InvalidArgument("per-sensor powers must be nonnegative".into()));
    }
    Ok(())
}

/// Large-`M` deflection in the powers `x_i = |a_i|²`:
/// `σ⁴_θ (xᵀd)² / (xᵀBx + (2σ²_n/M) bᵀx + σ⁴_n/M)`.
pub fn deflection_asymptotic(x: &[f64], scenario: &Scenario, m: usize) -> Result<f64> {
    deflection_asymptotic_with(x, scenario, m, DeflectionMetric::Deflection)
}

pub fn deflection_asymptotic_with(x: &[f64], scenario: &Scenario, m: usize, metric: DeflectionMetric) -> Result<f64> {
    check_powers(x, scenario)?;
    let t = DeflectionTerms::new(scenario, metric);
    let (sn2, mf, st) = (scenario.fc_noise_var(), m as f64, scenario.signal_var());
    let num = st * st * t.xd(x).powi(2);
    let den = t.xbx(x) + 2.0 * sn2 / mf * t.bx(x) + sn2 * sn2 / mf;
    Ok(num / den)
}

/// The same ratio without the `bᵀx` term; an upper bound on
/// [`deflection_asymptotic_with`] and the objective the allocation optimizer maximizes.
pub fn deflection_upper_bound(x: &[f64], scenario: &Scenario, m: usize, metric: DeflectionMetric) -> Result<f64> {
    check_powers(x, scenario)?;
    let t = DeflectionTerms::new(scenario, metric);
    let (sn2, mf, st) = (scenario.fc_noise_var(), m as f64, scenario.signal_var());
    Ok(st * st * t.xd(x).powi(2) / (t.xbx(x) + sn2 * sn2 / mf))
}

/// `M`-free deflection `σ⁴_θ (pᵀd)² / (pᵀBp + σ⁴_n)` reached when `x_i = p_i/√M`.
pub fn deflection_limit(p: &[f64], scenario: &Scenario) -> Result<f64> {
    check_powers(p, scenario)?;
    let t = DeflectionTerms::new(scenario, DeflectionMetric::Deflection);
    let (sn2, st) = (scenario.fc_noise_var(), scenario.signal_var());
    Ok(st * st * t.xd(p).powi(2) / (t.xbx(p) + sn2 * sn2))
}

/// Finite-`M` moments of `T` on one channel draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyMoments {
    pub mean_h0: f64,
    pub mean_h1: f64,
    pub var_h0: f64,
}

/// Moments from traces: `E[T|H0] = tr C_w / M`, `E[T|H1] = tr(C_s + C_w)/M`,
/// `Var[T|H0] = tr(C_w²)/M²`, all via `N × N` Gram products.
pub fn energy_moments(gains: &GainVector, channel: &ChannelRealization, scenario: &Scenario) -> Result<EnergyMoments> {
    check_dims(channel, gains, scenario)?;
    let g = channel.gram();
    let a = gains.gains();
    let e: Vec<f64> = gains
        .powers()
        .iter()
        .zip(scenario.meas_noise_vars())
        .map(|(x, v)| x * v)
        .collect();
    let n = a.len();
    let mf = channel.m_antennas() as f64;
    let sn2 = scenario.fc_noise_var();

    let tr_eg: f64 = (0..n).map(|i| e[i] * g[(i, i)].re).sum();
    // tr((H E Hᴴ)²) = tr((E G)²) = Σ_ij e_i e_j |G_ij|²
    let tr_eg2: f64 = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| e[i] * e[j] * g[(i, j)].norm_sqr())
        .sum();
    let mut a_g_a = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            a_g_a += a[i].conj() * g[(i, j)] * a[j];
        }
    }
    let tr_cs = scenario.signal_var() * a_g_a.re;
    let tr_cw = tr_eg + mf * sn2;
    let tr_cw2 = tr_eg2 + 2.0 * sn2 * tr_eg + mf * sn2 * sn2;
    Ok(EnergyMoments {
        mean_h0: tr_cw / mf,
        mean_h1: (tr_cw + tr_cs) / mf,
        var_h0: tr_cw2 / (mf * mf),
    })
}

/// Finite-`M` deflection `(tr C_s)² / tr(C_w²)`.
pub fn deflection_exact(gains: &GainVector, channel: &ChannelRealization, scenario: &Scenario) -> Result<f64> {
    let mo = energy_moments(gains, channel, scenario)?;
    Ok((mo.mean_h1 - mo.mean_h0).powi(2) / mo.var_h0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeflectionReport {
    pub exact_deflection: f64,
    pub asymptotic_deflection: f64,
}

pub fn deflection_report(
    gains: &GainVector,
    channel: &ChannelRealization,
    scenario: &Scenario,
) -> Result<DeflectionReport> {
    Ok(DeflectionReport {
        exact_deflection: deflection_exact(gains, channel, scenario)?,
        asymptotic_deflection: deflection_asymptotic(&gains.powers(), scenario, channel.m_antennas())?,
    })
}

/// `(σ²_s / σ²_w)²` for the single-antenna statistic `|y|²`.
pub fn single_antenna_deflection(gains: &GainVector, h: &[Complex64], scenario: &Scenario) -> Result<f64> {
    Ok(SingleAntennaContext::new(gains, h, scenario)?.snr_ratio().powi(2))
}

/// `η_i = |a_i|² σ²_{v,i} / d_i^α`; `Mη_i + σ²_n` are the large-`M` nonzero-noise
/// eigenvalues of `C_w`.
pub fn eta(gains: &GainVector, scenario: &Scenario) -> Vec<f64> {
    gains
        .powers()
        .iter()
        .enumerate()
        .map(|(i, x)| x * scenario.meas_noise_vars()[i] / scenario.path_loss(i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate {
    pub probability: f64,
    /// Set when the estimate came from Monte Carlo instead of the closed form.
    pub fallback: bool,
}

/// H0 law of `T` for large `M`: `Σ λ_i E_i + ((M−N)/M) σ²_n` with
/// `λ_i = η_i + σ²_n/M` and `E_i ~ Exp(1)`.
#[derive(Debug, Clone)]
struct WeightedExpSum {
    weights: Vec<f64>,
    etas: Vec<f64>,
    offset: f64,
    closed_form: bool,
}

impl WeightedExpSum {
    fn new(eta: &[f64], scenario: &Scenario, m: usize) -> Result<Self> {
        let n = scenario.n_sensors();
        if eta.len() != n {
            return Err(Error::Dimension(format!("{} eta values for {n} sensors", eta.len())));
        }
        if eta.iter().any(|&e| !e.is_finite() || e < 0.0) {
            return Err(Error::InvalidArgument(
                "eta values must be finite and nonnegative".into(),
            ));
        }
        if m < n {
            return Err(Error::InvalidArgument(format!(
                "the threshold law needs M ≥ N (M = {m}, N = {n})"
            )));
        }
        let mf = m as f64;
        let sn2 = scenario.fc_noise_var();
        let max_eta = eta.iter().cloned().fold(0.0, f64::max);
        let mut closed_form = true;
        for i in 0..n {
            for l in i + 1..n {
                if (eta[i] - eta[l]).abs() < ETA_SEPARATION * max_eta || max_eta == 0.0 {
                    closed_form = false;
                }
            }
        }
        Ok(WeightedExpSum {
            weights: eta.iter().map(|e| e + sn2 / mf).collect(),
            etas: eta.to_vec(),
            offset: (mf - n as f64) / mf * sn2,
            closed_form,
        })
    }

    /// `Σ_i λ_i^{N−1} / Π_{l≠i}(η_i − η_l) · exp(−t/λ_i)`, each coefficient
    /// accumulated as a product of `λ_i/(η_i − η_l)` factors.
    fn closed_form_tail(&self, t: f64) -> f64 {
        let n = self.weights.len();
        (0..n)
            .map(|i| {
                let coeff: f64 = (0..n)
                    .filter(|&l| l != i)
                    .map(|l| self.weights[i] / (self.etas[i] - self.etas[l]))
                    .product();
                coeff * (-t / self.weights[i]).exp()
            })
            .sum()
    }

    fn samples(&self) -> Vec<f64> {
        let mut rng = stream(FALLBACK_SEED, Domain::TailFallback, 0);
        let mut s: Vec<f64> = (0..FALLBACK_SAMPLES)
            .map(|_| self.weights.iter().map(|w| w * rng.sample::<f64, _>(Exp1)).sum::<f64>())
            .collect();
        s.sort_by(f64::total_cmp);
        s
    }

    fn tail(&self, gamma_hat: f64) -> TailEstimate {
        let t = gamma_hat - self.offset;
        if t <= 0.0 {
            return TailEstimate {
                probability: 1.0,
                fallback: false,
            };
        }
        if self.closed_form {
            let p = self.closed_form_tail(t);
            if p.is_finite() && (-1e-9..=1.0 + 1e-9).contains(&p) {
                return TailEstimate {
                    probability: p.clamp(0.0, 1.0),
                    fallback: false,
                };
            }
        }
        let s = self.samples();
        let above = s.len() - s.partition_point(|&v| v <= t);
        TailEstimate {
            probability: above as f64 / s.len() as f64,
            fallback: true,
        }
    }
}

/// `Pr(T > γ̂ | H0)` in the large-`M` limit, in closed form for distinct `η_i`.
/// Clustered `η` (or a closed form that leaves `[0, 1]`) falls back to a
/// seeded Monte Carlo estimate with [`FALLBACK_SAMPLES`] draws.
pub fn weighted_chi2_tail(eta: &[f64], scenario: &Scenario, m: usize, gamma_hat: f64) -> Result<TailEstimate> {
    Ok(WeightedExpSum::new(eta, scenario, m)?.tail(gamma_hat))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdThreshold {
    pub gamma_hat: f64,
    pub target_pfa: f64,
    pub eta: Vec<f64>,
    pub fallback: bool,
}

/// Inverts [`weighted_chi2_tail`] for `ε` by bisection on `γ̂`, starting at the
/// constant offset and growing the upper end geometrically.
pub fn ed_threshold_for_pfa(eta: &[f64], scenario: &Scenario, m: usize, target_pfa: f64) -> Result<EdThreshold> {
    check_pfa(target_pfa)?;
    let law = WeightedExpSum::new(eta, scenario, m)?;
    let mut out = EdThreshold {
        gamma_hat: law.offset,
        target_pfa,
        eta: eta.to_vec(),
        fallback: false,
    };

    let closed = |g: f64| {
        let p = law.closed_form_tail(g - law.offset);
        (p.is_finite() && (-1e-9..=1.0 + 1e-9).contains(&p)).then_some(p)
    };
    if law.closed_form {
        let max_w = law.weights.iter().cloned().fold(0.0, f64::max);
        let mut hi = law.offset + max_w;
        let mut ok = true;
        for _ in 0..200 {
            match closed(hi) {
                Some(p) if p > target_pfa => hi = law.offset + 2.0 * (hi - law.offset),
                Some(_) => break,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        let mut lo = law.offset;
        for _ in 0..400 {
            if !ok {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let Some(p) = closed(mid) else {
                ok = false;
                break;
            };
            if (p - target_pfa).abs() <= THRESHOLD_TOL {
                out.gamma_hat = mid;
                return Ok(out);
            }
            if p > target_pfa {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if ok {
            return Err(Error::NoConvergence(format!(
                "energy threshold bisection stalled in [{lo}, {hi}]"
            )));
        }
    }
    // Empirical (1 − ε) quantile of the simulated sum.
    let s = law.samples();
    let idx = ((1.0 - target_pfa) * s.len() as f64).floor() as usize;
    out.gamma_hat = law.offset + s[idx.min(s.len() - 1)];
    out.fallback = true;
    Ok(out)
}

/// `Var(zᴴAz) = tr(A²)` for `z ~ CN(0, I)` and Hermitian `A`.
pub fn quadratic_form_variance(a: &DMatrix<Complex64>) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "{}×{} matrix is not square",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let n = a.nrows();
    for i in 0..n {
        for j in i..n {
            if (a[(i, j)] - a[(j, i)].conj()).norm() > 1e-12 * scale.max(1e-300) {
                return Err(Error::InvalidArgument("matrix is not Hermitian".into()));
            }
        }
    }
    Ok((a * a).trace().re)
}
