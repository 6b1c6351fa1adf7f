//! Empirical detection and false-alarm rates at a fixed threshold.

use crate::energy::ed_statistic;
use crate::error::{Error, Result};
use crate::np_detector::{NpTestContext, SingleAntennaContext};
use crate::rng::trial_stream;
use crate::scenario::{check_dims, ChannelRealization, GainVector, Hypothesis, Observation, Scenario, StandardDraw};

use super::exec::{map_indexed, Execution};

/// Trials handed to one worker at a time. Fixed so that the summation order,
/// and therefore every output bit, is independent of the thread count.
pub(crate) const CHUNK: usize = 256;

pub const MIN_TRIALS: usize = 100;

/// A scalar test statistic; the detector decides H1 when it exceeds a threshold.
pub trait Statistic: Sync {
    fn statistic(&self, y: &Observation) -> Result<f64>;
}

impl Statistic for NpTestContext {
    fn statistic(&self, y: &Observation) -> Result<f64> {
        NpTestContext::statistic(self, y)
    }
}

/// `|y|²` on a one-antenna observation.
impl Statistic for SingleAntennaContext {
    fn statistic(&self, y: &Observation) -> Result<f64> {
        if y.len() != 1 {
            return Err(Error::Dimension(format!(
                "single-antenna statistic needs one sample, got {}",
                y.len()
            )));
        }
        Ok(y.y[0].norm_sqr())
    }
}

/// `T = yᴴy / M`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnergyDetector;

impl Statistic for EnergyDetector {
    fn statistic(&self, y: &Observation) -> Result<f64> {
        Ok(ed_statistic(y))
    }
}

/// Scenario, channel and gains at which trials are simulated.
#[derive(Debug, Clone, Copy)]
pub struct OperatingPoint<'a> {
    pub scenario: &'a Scenario,
    pub channel: &'a ChannelRealization,
    pub gains: &'a GainVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEstimate {
    pub pd: f64,
    pub pfa: f64,
    pub pd_stderr: f64,
    pub pfa_stderr: f64,
    pub trials: usize,
}

/// `sqrt(p(1 − p)/n)`.
pub fn binomial_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Runs `trials` independent H1 and H0 trials on one operating point. Trial
/// `t` uses stream `(seed, stream_index, t)` and draws its H1 then its H0
/// sample from it, so every detector sees the same noise for the same `t`.
pub fn estimate_pd_pfa<D: Statistic + ?Sized>(
    detector: &D,
    threshold: f64,
    point: OperatingPoint<'_>,
    trials: usize,
    seed: u64,
    stream_index: u64,
    exec: Execution,
) -> Result<DetectionEstimate> {
    if trials < MIN_TRIALS {
        return Err(Error::InvalidArgument(format!(
            "at least {MIN_TRIALS} trials are required, got {trials}"
        )));
    }
    check_dims(point.channel, point.gains, point.scenario)?;
    let n = point.scenario.n_sensors();
    let m = point.channel.m_antennas();
    let chunks = trials.div_ceil(CHUNK);
    let counts = map_indexed(chunks, exec, |c| -> Result<(usize, usize)> {
        let mut hits = (0, 0);
        for t in c * CHUNK..((c + 1) * CHUNK).min(trials) {
            let mut rng = trial_stream(seed, stream_index, t as u64);
            let d1 = StandardDraw::sample(n, m, &mut rng);
            let d0 = StandardDraw::sample(n, m, &mut rng);
            let y1 = d1.observe(point.channel, point.gains, point.scenario, Hypothesis::H1);
            let y0 = d0.observe(point.channel, point.gains, point.scenario, Hypothesis::H0);
            hits.0 += usize::from(detector.statistic(&y1)? > threshold);
            hits.1 += usize::from(detector.statistic(&y0)? > threshold);
        }
        Ok(hits)
    })?;
    let (mut h1, mut h0) = (0usize, 0usize);
    for c in counts {
        let (a, b) = c?;
        h1 += a;
        h0 += b;
    }
    let pd = h1 as f64 / trials as f64;
    let pfa = h0 as f64 / trials as f64;
    Ok(DetectionEstimate {
        pd,
        pfa,
        pd_stderr: binomial_stderr(pd, trials),
        pfa_stderr: binomial_stderr(pfa, trials),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use crate::scenario::{sample_channel, ScenarioSampler};

    fn setup(m: usize) -> (Scenario, ChannelRealization, GainVector) {
        let s = ScenarioSampler::default()
            .sample(&mut stream(3, Domain::Scenario, 0))
            .unwrap();
        let ch = sample_channel(&s, m, &mut stream(3, Domain::Channel, 0)).unwrap();
        let g = GainVector::equal(s.n_sensors(), 1.0).unwrap();
        (s, ch, g)
    }

    #[test]
    fn trivial_thresholds() {
        let (s, ch, g) = setup(8);
        let ctx = NpTestContext::new(&g, &ch, &s).unwrap();
        let point = OperatingPoint {
            scenario: &s,
            channel: &ch,
            gains: &g,
        };
        let all = estimate_pd_pfa(&ctx, 0.0, point, 500, 1, 0, Execution::Serial).unwrap();
        assert_eq!((all.pd, all.pfa), (1.0, 1.0));
        assert_eq!(all.pd_stderr, 0.0);
        let none = estimate_pd_pfa(&EnergyDetector, f64::INFINITY, point, 500, 1, 0, Execution::Serial).unwrap();
        assert_eq!((none.pd, none.pfa), (0.0, 0.0));
        assert!(estimate_pd_pfa(&ctx, 0.0, point, 99, 1, 0, Execution::Serial).is_err());
    }

    #[test]
    fn np_calibration() {
        let (s, ch, g) = setup(16);
        let ctx = NpTestContext::new(&g, &ch, &s).unwrap();
        let point = OperatingPoint {
            scenario: &s,
            channel: &ch,
            gains: &g,
        };
        let est = estimate_pd_pfa(
            &ctx,
            ctx.threshold(0.05).unwrap(),
            point,
            20_000,
            9,
            0,
            Execution::Parallel,
        )
        .unwrap();
        assert!((est.pfa - 0.05).abs() < 4.0 * binomial_stderr(0.05, 20_000));
        let pd = ctx.pd(0.05).unwrap();
        assert!((est.pd - pd).abs() < 4.0 * binomial_stderr(pd, 20_000));
    }

    #[test]
    fn thread_count_does_not_matter() {
        let (s, ch, g) = setup(4);
        let point = OperatingPoint {
            scenario: &s,
            channel: &ch,
            gains: &g,
        };
        let a = estimate_pd_pfa(&EnergyDetector, 0.5, point, 3000, 5, 2, Execution::Serial).unwrap();
        let b = estimate_pd_pfa(&EnergyDetector, 0.5, point, 3000, 5, 2, Execution::Threads(4)).unwrap();
        assert_eq!(a, b);
    }
}
