//! Sweeps of operating points, each evaluated for every configured curve.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::ed_gains::{closed_form_high_snr, closed_form_low_snr, solve_qclp, EdAllocationProblem};
use crate::energy::{deflection_exact, ed_threshold_for_pfa, eta, single_antenna_deflection};
use crate::error::{Error, Result};
use crate::lmmse::{lmmse_estimate, mse_bound, single_antenna_mse_bracket};
use crate::np_detector::{NpTestContext, SingleAntennaContext};
use crate::np_gains::{
    np_pd_bound, single_antenna_optimal_gains, single_antenna_zeta, waterfill, PowerRegime, DEFAULT_TOL,
};
use crate::rng::{stream, trial_stream, Domain};
use crate::scenario::{
    complex_normal, sample_channel, ChannelRealization, GainVector, Hypothesis, Scenario, StandardDraw,
};

use super::config::{Curve, DetectorKind, EdThresholdRule, ExperimentConfig, ExperimentId, GainPolicy, PowerSpec};
use super::estimate::{binomial_stderr, Statistic, CHUNK};
use super::exec::{map_indexed, Execution};

/// One `(M, P, policy, detector)` line of output. Columns that do not apply
/// to the detector, or could not be computed, are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: ExperimentId,
    pub policy: GainPolicy,
    pub detector: DetectorKind,
    pub antennas: usize,
    pub power: f64,
    pub pd_emp: Option<f64>,
    pub pd_theory: Option<f64>,
    pub pfa_emp: Option<f64>,
    pub mse_emp: Option<f64>,
    pub mse_theory: Option<f64>,
    pub deflection: Option<f64>,
    pub bound_lo: Option<f64>,
    pub bound_hi: Option<f64>,
    /// Standard error of `pd_emp`, or of `mse_emp` for estimator rows.
    pub stderr: Option<f64>,
    pub trials: usize,
    /// `ok`, or the error that stopped this row.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// The resolved (possibly sampled) sensor parameters every row used.
    pub scenario: Scenario,
    pub rows: Vec<ResultRow>,
}

/// Runs every operating point of the sweep for every curve. Only an invalid
/// config is an error; failures at a single point are reported in its row.
pub fn run_experiment(config: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    config.validate()?;
    let scenario = config.scenario.resolve(config.master_seed)?;
    let points = config.sweep.points(&scenario);
    let mut rows = Vec::with_capacity(points.len() * config.curves.len());
    for (pi, &(m, p)) in points.iter().enumerate() {
        for (ci, &curve) in config.curves.iter().enumerate() {
            let run = CurveRun {
                config,
                scenario: &scenario,
                curve,
                m,
                p,
                calibration_index: (pi * config.curves.len() + ci) as u64,
            };
            rows.push(run.evaluate(exec).unwrap_or_else(|e| run.failed_row(&e)));
        }
    }
    Ok(ExperimentResult {
        config: config.clone(),
        scenario,
        rows,
    })
}

struct CurveRun<'a> {
    config: &'a ExperimentConfig,
    scenario: &'a Scenario,
    curve: Curve,
    m: usize,
    p: f64,
    calibration_index: u64,
}

/// Per-curve quantities that do not depend on the channel draw.
enum Shared {
    Gains(GainVector, Option<f64>),
    Threshold(f64),
    Nothing,
}

enum Processor {
    Np(NpTestContext),
    Single(SingleAntennaContext),
    Energy,
    Lmmse(NpTestContext),
}

/// Everything a trial needs for one channel draw.
struct Prepared {
    channel: ChannelRealization,
    gains: GainVector,
    processor: Processor,
    threshold: f64,
    pd_theory: Option<f64>,
    mse_theory: Option<f64>,
    deflection: Option<f64>,
    zeta: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    trials: usize,
    h1: usize,
    h0: usize,
    sq_err: f64,
    sq_err2: f64,
}

impl Tally {
    fn merge(&mut self, o: &Tally) {
        self.trials += o.trials;
        self.h1 += o.h1;
        self.h0 += o.h0;
        self.sq_err += o.sq_err;
        self.sq_err2 += o.sq_err2;
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Gains for `policy`; `h` is the single-antenna channel, only used by
/// [`GainPolicy::SingleAntennaOptimal`].
pub fn policy_gains(
    policy: GainPolicy,
    scenario: &Scenario,
    m: usize,
    p: f64,
    h: Option<&[Complex64]>,
    metric: crate::energy::DeflectionMetric,
) -> Result<GainVector> {
    match policy {
        GainPolicy::Waterfill => Ok(waterfill(scenario, m, p, DEFAULT_TOL)?.gains()),
        GainPolicy::Equal => GainVector::equal(scenario.n_sensors(), p),
        GainPolicy::Qclp => Ok(solve_qclp(&EdAllocationProblem::new(scenario, m, p, metric)?)?.gains()),
        GainPolicy::ClosedFormLow => closed_form_low_snr(scenario, p),
        GainPolicy::ClosedFormHigh => closed_form_high_snr(scenario, p),
        GainPolicy::SingleAntennaOptimal => {
            let h = h.ok_or_else(|| Error::InvalidArgument("single-antenna optimal gains need a channel".into()))?;
            single_antenna_optimal_gains(scenario, h, p)
        }
    }
}

impl CurveRun<'_> {
    fn seed(&self) -> u64 {
        self.config.master_seed
    }

    fn single_channel(&self, s: usize) -> Result<ChannelRealization> {
        sample_channel(
            self.scenario,
            1,
            &mut stream(self.seed(), Domain::SingleAntennaChannel, s as u64),
        )
    }

    fn gains_for(&self, h: &[Complex64]) -> Result<GainVector> {
        policy_gains(
            self.curve.policy,
            self.scenario,
            self.m,
            self.p,
            Some(h),
            self.config.metric,
        )
    }

    fn ed_multi_threshold(&self, gains: &GainVector) -> Result<f64> {
        Ok(ed_threshold_for_pfa(
            &eta(gains, self.scenario),
            self.scenario,
            self.m,
            self.config.target_pfa,
        )?
        .gamma_hat)
    }

    /// `(1 − ε)` quantile of the energy statistic under H0, averaged over
    /// channel fading: without CSI a threshold can only target the
    /// fading-averaged false-alarm rate.
    ///
    /// Averaged over Rayleigh fading, `y | v` is `CN(0, (q + σ²_n) I_M)` with
    /// `q = Σ |a_j|² σ²_{v,j} |v_j|² / d_j^α`, so `T = (q + σ²_n) Γ(M, 1) / M`
    /// and no channel matrix is needed. Channel-dependent gains on the
    /// single-antenna detector are the exception and are simulated directly.
    fn calibrated_energy_threshold(&self, fixed: Option<&GainVector>) -> Result<f64> {
        let scn = self.scenario;
        let n = scn.n_sensors();
        let m = if self.curve.detector.single_antenna() {
            1
        } else {
            self.m
        };
        let k = self.config.calibration_samples;
        let gamma = Gamma::new(m as f64, 1.0).map_err(|e| Error::InvalidArgument(format!("gamma law: {e}")))?;
        let mut rng = stream(self.seed(), Domain::Calibration, self.calibration_index);
        let mut stats = Vec::with_capacity(k);
        for _ in 0..k {
            let h = sample_channel(scn, 1, &mut rng)?;
            let owned;
            let gains = match fixed {
                Some(g) => g,
                None => {
                    owned = self.gains_for(&h.row(0))?;
                    &owned
                }
            };
            if fixed.is_none() && m == 1 {
                let d = StandardDraw::sample(n, 1, &mut rng);
                stats.push(d.observe(&h, gains, scn, Hypothesis::H0).y[0].norm_sqr());
                continue;
            }
            let q: f64 = (0..n)
                .map(|j| {
                    let v = complex_normal(&mut rng, 1.0);
                    gains.gains()[j].norm_sqr() * scn.meas_noise_vars()[j] * v.norm_sqr() / scn.path_loss(j)
                })
                .sum();
            let g: f64 = rng.sample(gamma);
            stats.push((q + scn.fc_noise_var()) * g / m as f64);
        }
        let idx = (((1.0 - self.config.target_pfa) * k as f64).floor() as usize).min(k - 1);
        let (_, q, _) = stats.select_nth_unstable_by(idx, f64::total_cmp);
        Ok(*q)
    }

    fn energy_threshold(&self, fixed: Option<&GainVector>) -> Result<Option<f64>> {
        match (self.curve.detector, self.config.ed_threshold, fixed) {
            (DetectorKind::EdMulti, EdThresholdRule::Asymptotic, Some(g)) => Ok(Some(self.ed_multi_threshold(g)?)),
            (DetectorKind::EdMulti, EdThresholdRule::Asymptotic, None) => Ok(None),
            (DetectorKind::EdMulti | DetectorKind::EdSingle, _, _) => {
                Ok(Some(self.calibrated_energy_threshold(fixed)?))
            }
            _ => Ok(None),
        }
    }

    fn prepare(&self, s: usize, shared: &Shared) -> Result<Prepared> {
        let scn = self.scenario;
        let pfa = self.config.target_pfa;
        let det = self.curve.detector;
        let single = self.single_channel(s)?;
        let h = single.row(0);
        let (gains, threshold) = match shared {
            Shared::Gains(g, t) => (g.clone(), *t),
            Shared::Threshold(t) => (self.gains_for(&h)?, Some(*t)),
            Shared::Nothing => (self.gains_for(&h)?, None),
        };
        let channel = if det.single_antenna() {
            single
        } else {
            sample_channel(scn, self.m, &mut stream(self.seed(), Domain::Channel, s as u64))?
        };
        let zeta = single_antenna_zeta(scn, &h, self.m);
        let mut out = Prepared {
            threshold: 0.0,
            pd_theory: None,
            mse_theory: None,
            deflection: None,
            zeta,
            processor: Processor::Energy,
            channel,
            gains,
        };
        match det {
            DetectorKind::NpMulti => {
                let ctx = NpTestContext::new(&out.gains, &out.channel, scn)?;
                out.threshold = ctx.threshold(pfa)?;
                out.pd_theory = Some(ctx.pd(pfa)?);
                out.processor = Processor::Np(ctx);
            }
            DetectorKind::NpSingle => {
                let ctx = SingleAntennaContext::new(&out.gains, &h, scn)?;
                out.threshold = ctx.threshold(pfa)?;
                out.pd_theory = Some(ctx.pd_closed_form(pfa)?);
                out.processor = Processor::Single(ctx);
            }
            DetectorKind::LmmseMulti | DetectorKind::LmmseSingle => {
                let ctx = NpTestContext::new(&out.gains, &out.channel, scn)?;
                out.mse_theory = Some(crate::lmmse::mse_closed_form(ctx.snr(), scn.signal_var()));
                out.processor = Processor::Lmmse(ctx);
            }
            DetectorKind::EdMulti => {
                out.threshold = match threshold {
                    Some(t) => t,
                    None => self.ed_multi_threshold(&out.gains)?,
                };
                out.deflection = Some(deflection_exact(&out.gains, &out.channel, scn)?);
            }
            DetectorKind::EdSingle => {
                out.threshold = threshold.ok_or_else(|| {
                    Error::InvalidArgument("single-antenna energy threshold was not calibrated".into())
                })?;
                out.deflection = Some(single_antenna_deflection(&out.gains, &h, scn)?);
            }
        }
        Ok(out)
    }

    fn run_chunk(&self, s: usize, chunk: usize, prep: &Prepared) -> Result<Tally> {
        let scn = self.scenario;
        let n = scn.n_sensors();
        let m = prep.channel.m_antennas();
        let trials = self.config.trials_per_scenario;
        let mut tally = Tally::default();
        for t in chunk * CHUNK..((chunk + 1) * CHUNK).min(trials) {
            let mut rng = trial_stream(self.seed(), s as u64, t as u64);
            let d1 = StandardDraw::sample(n, m, &mut rng);
            let y1 = d1.observe(&prep.channel, &prep.gains, scn, Hypothesis::H1);
            tally.trials += 1;
            if let Processor::Lmmse(ctx) = &prep.processor {
                let est = lmmse_estimate(ctx, &y1)?;
                let e = (est.estimate - d1.theta(scn)).norm_sqr();
                tally.sq_err += e;
                tally.sq_err2 += e * e;
                continue;
            }
            let d0 = StandardDraw::sample(n, m, &mut rng);
            let y0 = d0.observe(&prep.channel, &prep.gains, scn, Hypothesis::H0);
            let stat: &dyn Statistic = match &prep.processor {
                Processor::Np(ctx) => ctx,
                Processor::Single(ctx) => ctx,
                _ => &super::estimate::EnergyDetector,
            };
            tally.h1 += usize::from(stat.statistic(&y1)? > prep.threshold);
            tally.h0 += usize::from(stat.statistic(&y0)? > prep.threshold);
        }
        Ok(tally)
    }

    fn evaluate(&self, exec: Execution) -> Result<ResultRow> {
        let cfg = self.config;
        // CSI-free gains, and energy thresholds not tied to one channel draw,
        // are shared by every scenario.
        let shared = if !self.curve.policy.uses_csi() {
            let g = policy_gains(self.curve.policy, self.scenario, self.m, self.p, None, cfg.metric)?;
            let t = self.energy_threshold(Some(&g))?;
            Shared::Gains(g, t)
        } else {
            match self.energy_threshold(None)? {
                Some(t) => Shared::Threshold(t),
                None => Shared::Nothing,
            }
        };

        let scenarios = cfg.n_scenarios;
        let prepared: Vec<Prepared> = map_indexed(scenarios, exec, |s| self.prepare(s, &shared))?
            .into_iter()
            .collect::<Result<_>>()?;

        let chunks = cfg.trials_per_scenario.div_ceil(CHUNK);
        let tallies = map_indexed(scenarios * chunks, exec, |w| {
            let (s, c) = (w / chunks, w % chunks);
            self.run_chunk(s, c, &prepared[s])
        })?;
        let mut total = Tally::default();
        for t in tallies {
            total.merge(&t?);
        }
        Ok(self.row(&total, &prepared))
    }

    fn row(&self, total: &Tally, prepared: &[Prepared]) -> ResultRow {
        let mut row = self.empty_row();
        let n = total.trials;
        row.trials = n;
        row.status = "ok".into();
        let det = self.curve.detector;
        if det.estimator() {
            let mse = total.sq_err / n as f64;
            row.mse_emp = Some(mse);
            row.stderr = Some(((total.sq_err2 / n as f64 - mse * mse).max(0.0) / n as f64).sqrt());
            row.mse_theory = mean(prepared.iter().filter_map(|p| p.mse_theory));
        } else {
            let pd = total.h1 as f64 / n as f64;
            row.pd_emp = Some(pd);
            row.pfa_emp = Some(total.h0 as f64 / n as f64);
            row.stderr = Some(binomial_stderr(pd, n));
            row.pd_theory = mean(prepared.iter().filter_map(|p| p.pd_theory));
            row.deflection = mean(prepared.iter().filter_map(|p| p.deflection));
        }
        let (lo, hi) = self.bounds(prepared);
        row.bound_lo = lo;
        row.bound_hi = hi;
        row
    }

    /// Reference bounds for the row. Under the `1/M` power schedule these are
    /// the low-power results; otherwise the regime-free ones (`ε` below, the
    /// infinite-power ceiling above).
    fn bounds(&self, prepared: &[Prepared]) -> (Option<f64>, Option<f64>) {
        let scn = self.scenario;
        let pfa = self.config.target_pfa;
        let low = self.config.sweep.power == PowerSpec::InverseM;
        let np = |r| np_pd_bound(scn, r, pfa).ok().map(|b| b.value);
        match self.curve.detector {
            DetectorKind::NpMulti => (
                if low { np(PowerRegime::Low) } else { Some(pfa) },
                np(PowerRegime::High),
            ),
            DetectorKind::NpSingle if low => (
                Some(pfa),
                mean(prepared.iter().map(|p| (pfa.ln() / (1.0 + p.zeta)).exp())),
            ),
            DetectorKind::NpSingle => (Some(pfa), np(PowerRegime::High)),
            DetectorKind::LmmseMulti => (
                Some(mse_bound(scn, PowerRegime::High).value),
                Some(if low {
                    mse_bound(scn, PowerRegime::Low).value
                } else {
                    scn.signal_var()
                }),
            ),
            DetectorKind::LmmseSingle if low => (
                mean(prepared.iter().map(|p| single_antenna_mse_bracket(scn, p.zeta).0)),
                Some(scn.signal_var()),
            ),
            DetectorKind::LmmseSingle => (Some(mse_bound(scn, PowerRegime::High).value), Some(scn.signal_var())),
            DetectorKind::EdMulti | DetectorKind::EdSingle => (None, None),
        }
    }

    fn empty_row(&self) -> ResultRow {
        ResultRow {
            experiment: self.config.experiment,
            policy: self.curve.policy,
            detector: self.curve.detector,
            antennas: self.m,
            power: self.p,
            pd_emp: None,
            pd_theory: None,
            pfa_emp: None,
            mse_emp: None,
            mse_theory: None,
            deflection: None,
            bound_lo: None,
            bound_hi: None,
            stderr: None,
            trials: 0,
            status: String::new(),
        }
    }

    fn failed_row(&self, e: &Error) -> ResultRow {
        let mut row = self.empty_row();
        row.status = format!("error: {e}");
        row
    }
}
