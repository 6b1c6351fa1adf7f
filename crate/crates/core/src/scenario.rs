//! Network description, Rayleigh channel draws and observation sampling.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{format_list, KvDoc};

/// Static network: per-sensor distances and measurement noise, plus the
/// signal, fusion-center noise and path-loss parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    distances: Vec<f64>,
    meas_noise_vars: Vec<f64>,
    signal_var: f64,
    fc_noise_var: f64,
    path_loss_exp: f64,
}

impl Scenario {
    pub fn new(
        distances: Vec<f64>,
        meas_noise_vars: Vec<f64>,
        signal_var: f64,
        fc_noise_var: f64,
        path_loss_exp: f64,
    ) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::InvalidScenario("at least one sensor is required".into()));
        }
        if distances.len() != meas_noise_vars.len() {
            return Err(Error::InvalidScenario(format!(
                "{} distances but {} measurement noise variances",
                distances.len(),
                meas_noise_vars.len()
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !distances.iter().all(|&d| positive(d)) {
            return Err(Error::InvalidScenario("distances must be positive".into()));
        }
        if !meas_noise_vars.iter().all(|&s| positive(s)) {
            return Err(Error::InvalidScenario(
                "measurement noise variances must be positive".into(),
            ));
        }
        if !positive(signal_var) || !positive(fc_noise_var) {
            return Err(Error::InvalidScenario(
                "signal and fusion-center noise variances must be positive".into(),
            ));
        }
        if !(path_loss_exp.is_finite() && path_loss_exp >= 0.0) {
            return Err(Error::InvalidScenario("path-loss exponent must be nonnegative".into()));
        }
        Ok(Scenario {
            distances,
            meas_noise_vars,
            signal_var,
            fc_noise_var,
            path_loss_exp,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.distances.len()
    }
    pub fn distances(&self) -> &[f64] {
        &self.distances
    }
    pub fn meas_noise_vars(&self) -> &[f64] {
        &self.meas_noise_vars
    }
    pub fn signal_var(&self) -> f64 {
        self.signal_var
    }
    pub fn fc_noise_var(&self) -> f64 {
        self.fc_noise_var
    }
    pub fn path_loss_exp(&self) -> f64 {
        self.path_loss_exp
    }

    /// `d_i^α`, the inverse of sensor `i`'s average channel power.
    pub fn path_loss(&self, i: usize) -> f64 {
        self.distances[i].powf(self.path_loss_exp)
    }

    /// `Σ 1/σ²_{v,i}`, the SNR ceiling reached when measurement noise dominates.
    pub fn info_ceiling(&self) -> f64 {
        self.meas_noise_vars.iter().map(|s| 1.0 / s).sum()
    }

    /// Limit of `HᴴH / M`: `diag(1/d_i^α)`.
    pub fn asymptotic_gram(&self) -> DMatrix<f64> {
        let n = self.n_sensors();
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / self.path_loss(i) } else { 0.0 })
    }

    /// Parses the flat config format. Missing `distances`/`meas_noise_vars`
    /// are sampled with [`ScenarioSampler`] from `seed`; unspecified scalars
    /// take the sampler defaults.
    pub fn from_config(doc: &KvDoc) -> Result<Self> {
        doc.reject_unknown(SCENARIO_KEYS)?;
        scenario_source(doc)?.resolve(doc.parse_value("seed")?.unwrap_or(0))
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        Self::from_config(&KvDoc::parse(text)?)
    }

    /// Serializes with explicit vectors, so reading it back skips sampling.
    pub fn to_config_string(&self) -> String {
        format!(
            "n_sensors = {}\ndistances = {}\nmeas_noise_vars = {}\nsignal_var = {:?}\nfc_noise_var = {:?}\npath_loss_exp = {:?}\n",
            self.n_sensors(),
            format_list(&self.distances),
            format_list(&self.meas_noise_vars),
            self.signal_var,
            self.fc_noise_var,
            self.path_loss_exp
        )
    }
}

pub const SCENARIO_KEYS: &[&str] = &[
    "n_sensors",
    "distances",
    "meas_noise_vars",
    "signal_var",
    "fc_noise_var",
    "path_loss_exp",
    "seed",
];

/// Either an explicit scenario or a recipe for drawing one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    Explicit(Scenario),
    Sampled(ScenarioSampler),
}

impl ScenarioSource {
    pub fn resolve(&self, seed: u64) -> Result<Scenario> {
        match self {
            ScenarioSource::Explicit(s) => Ok(s.clone()),
            ScenarioSource::Sampled(sampler) => {
                let mut rng = crate::rng::stream(seed, crate::rng::Domain::Scenario, 0);
                sampler.sample(&mut rng)
            }
        }
    }
}

/// Reads the scenario keys of a config document without resolving sampling.
pub(crate) fn scenario_source(doc: &KvDoc) -> Result<ScenarioSource> {
    let defaults = ScenarioSampler::default();
    let signal_var = doc.parse_value("signal_var")?.unwrap_or(defaults.signal_var);
    let fc_noise_var = doc.parse_value("fc_noise_var")?.unwrap_or(defaults.fc_noise_var);
    let path_loss_exp = doc.parse_value("path_loss_exp")?.unwrap_or(defaults.path_loss_exp);
    let n_sensors: Option<usize> = doc.parse_value("n_sensors")?;
    let distances: Option<Vec<f64>> = doc.parse_list("distances")?;
    let noise: Option<Vec<f64>> = doc.parse_list("meas_noise_vars")?;
    match (distances, noise) {
        (Some(d), Some(v)) => {
            if let Some(n) = n_sensors {
                if n != d.len() {
                    return Err(Error::config(0, format!("n_sensors = {n} but {} distances", d.len())));
                }
            }
            Ok(ScenarioSource::Explicit(Scenario::new(
                d,
                v,
                signal_var,
                fc_noise_var,
                path_loss_exp,
            )?))
        }
        (None, None) => {
            let n_sensors = n_sensors.unwrap_or(defaults.n_sensors);
            if n_sensors == 0 {
                return Err(Error::config(0, "n_sensors must be at least 1"));
            }
            Ok(ScenarioSource::Sampled(ScenarioSampler {
                n_sensors,
                signal_var,
                fc_noise_var,
                path_loss_exp,
                ..defaults
            }))
        }
        _ => Err(Error::config(0, "distances and meas_noise_vars must be given together")),
    }
}

/// Draws distances and measurement noise uniformly; the defaults are the
/// standard ten-sensor setup (d ∈ [2, 10], σ²_v ∈ [0.25, 0.5], σ²_θ = 1,
/// σ²_n = 0.3, α = 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSampler {
    pub n_sensors: usize,
    pub distance_range: (f64, f64),
    pub meas_noise_range: (f64, f64),
    pub signal_var: f64,
    pub fc_noise_var: f64,
    pub path_loss_exp: f64,
}

impl Default for ScenarioSampler {
    fn default() -> Self {
        ScenarioSampler {
            n_sensors: 10,
            distance_range: (2.0, 10.0),
            meas_noise_range: (0.25, 0.5),
            signal_var: 1.0,
            fc_noise_var: 0.3,
            path_loss_exp: 2.0,
        }
    }
}

impl ScenarioSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Scenario> {
        let uniform = |(lo, hi): (f64, f64)| {
            Uniform::new_inclusive(lo, hi)
                .map_err(|e| Error::InvalidScenario(format!("bad sampling range [{lo}, {hi}]: {e}")))
        };
        let d = uniform(self.distance_range)?;
        let v = uniform(self.meas_noise_range)?;
        let distances = (0..self.n_sensors).map(|_| rng.sample(d)).collect();
        let noise = (0..self.n_sensors).map(|_| rng.sample(v)).collect();
        Scenario::new(distances, noise, self.signal_var, self.fc_noise_var, self.path_loss_exp)
    }
}

/// Draws from `CN(0, var)`: independent real and imaginary parts of variance `var / 2`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// One draw of the `M × N` fading matrix with its Gram product `HᴴH`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    h: DMatrix<Complex64>,
    gram: DMatrix<Complex64>,
}

impl ChannelRealization {
    pub fn from_matrix(h: DMatrix<Complex64>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::Dimension("channel matrix must be non-empty".into()));
        }
        let gram = h.adjoint() * &h;
        Ok(ChannelRealization { h, gram })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.h
    }
    /// `HᴴH`.
    pub fn gram(&self) -> &DMatrix<Complex64> {
        &self.gram
    }
    pub fn m_antennas(&self) -> usize {
        self.h.nrows()
    }
    pub fn n_sensors(&self) -> usize {
        self.h.ncols()
    }

    /// Row `r` as a per-sensor vector; row 0 of a single-antenna draw is the
    /// scalar-channel vector `h`.
    pub fn row(&self, r: usize) -> Vec<Complex64> {
        self.h.row(r).iter().copied().collect()
    }

    /// `H c` for a per-sensor vector `c`.
    pub fn apply(&self, c: &[Complex64]) -> DVector<Complex64> {
        &self.h * DVector::from_column_slice(c)
    }
}

/// Column `i` is `h̃_i / sqrt(d_i^α)` with `h̃_i ~ CN(0, I_M)`.
pub fn sample_channel<R: Rng + ?Sized>(scenario: &Scenario, m: usize, rng: &mut R) -> Result<ChannelRealization> {
    if m == 0 {
        return Err(Error::InvalidArgument("antenna count must be at least 1".into()));
    }
    let n = scenario.n_sensors();
    let mut h = DMatrix::<Complex64>::zeros(m, n);
    for j in 0..n {
        let var = 1.0 / scenario.path_loss(j);
        for i in 0..m {
            h[(i, j)] = complex_normal(rng, var);
        }
    }
    ChannelRealization::from_matrix(h)
}

/// Complex per-sensor transmit gains and their total power `Σ |a_i|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainVector {
    gains: Vec<Complex64>,
    sum_power: f64,
}

impl GainVector {
    pub fn new(gains: Vec<Complex64>) -> Result<Self> {
        if gains.iter().any(|g| !g.re.is_finite() || !g.im.is_finite()) {
            return Err(Error::InvalidArgument("gains must be finite".into()));
        }
        let sum_power = gains.iter().map(|g| g.norm_sqr()).sum();
        Ok(GainVector { gains, sum_power })
    }

    /// Real nonnegative gains `sqrt(x_i)` from per-sensor powers `x_i`.
    pub fn from_powers(x: &[f64]) -> Result<Self> {
        if x.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidArgument(
                "per-sensor powers must be finite and nonnegative".into(),
            ));
        }
        Self::new(x.iter().map(|&v| Complex64::new(v.sqrt(), 0.0)).collect())
    }

    pub fn zeros(n: usize) -> Self {
        GainVector {
            gains: vec![Complex64::new(0.0, 0.0); n],
            sum_power: 0.0,
        }
    }

    /// Equal power `P / N` at every sensor.
    pub fn equal(n: usize, power: f64) -> Result<Self> {
        Self::from_powers(&vec![power / n as f64; n])
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.gains
    }
    pub fn len(&self) -> usize {
        self.gains.len()
    }
    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }
    pub fn sum_power(&self) -> f64 {
        self.sum_power
    }
    /// `|a_i|²`.
    pub fn powers(&self) -> Vec<f64> {
        self.gains.iter().map(|g| g.norm_sqr()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

/// The `M`-antenna received vector; the label is simulation ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: DVector<Complex64>,
    pub hypothesis: Hypothesis,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.y.len()
    }
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Unit-variance complex normals for one trial: `θ̃`, `ṽ` (length N) and `ñ`
/// (length M). Scaling by the scenario variances happens in [`StandardDraw::observe`],
/// so one draw can drive several gain policies.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardDraw {
    pub theta: Complex64,
    pub v: Vec<Complex64>,
    pub n: Vec<Complex64>,
}

impl StandardDraw {
    pub fn sample<R: Rng + ?Sized>(n_sensors: usize, m: usize, rng: &mut R) -> Self {
        let theta = complex_normal(rng, 1.0);
        let v = (0..n_sensors).map(|_| complex_normal(rng, 1.0)).collect();
        let n = (0..m).map(|_| complex_normal(rng, 1.0)).collect();
        StandardDraw { theta, v, n }
    }

    /// `θ = σ_θ θ̃`.
    pub fn theta(&self, scenario: &Scenario) -> Complex64 {
        self.theta * scenario.signal_var().sqrt()
    }

    /// Per-sensor transmitted values `a_i (θ·[H1] + v_i)`.
    pub fn transmitted(&self, gains: &GainVector, scenario: &Scenario, hypothesis: Hypothesis) -> Vec<Complex64> {
        let theta = match hypothesis {
            Hypothesis::H1 => self.theta(scenario),
            Hypothesis::H0 => Complex64::new(0.0, 0.0),
        };
        gains
            .gains()
            .iter()
            .zip(&self.v)
            .zip(scenario.meas_noise_vars())
            .map(|((a, v), s)| a * (theta + v * s.sqrt()))
            .collect()
    }

    /// `y = H a θ + H D v + n` under H1, without the `θ` term under H0.
    pub fn observe(
        &self,
        channel: &ChannelRealization,
        gains: &GainVector,
        scenario: &Scenario,
        hypothesis: Hypothesis,
    ) -> Observation {
        let c = self.transmitted(gains, scenario, hypothesis);
        let sn = scenario.fc_noise_var().sqrt();
        let mut y = channel.apply(&c);
        for (yi, ni) in y.iter_mut().zip(&self.n) {
            *yi += ni * sn;
        }
        Observation { y, hypothesis }
    }
}

/// Draws one observation of the coherent multiple-access model.
pub fn sample_observation<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    gains: &GainVector,
    scenario: &Scenario,
    hypothesis: Hypothesis,
    rng: &mut R,
) -> Result<Observation> {
    check_dims(channel, gains, scenario)?;
    let draw = StandardDraw::sample(scenario.n_sensors(), channel.m_antennas(), rng);
    Ok(draw.observe(channel, gains, scenario, hypothesis))
}

pub(crate) fn check_dims(channel: &ChannelRealization, gains: &GainVector, scenario: &Scenario) -> Result<()> {
    let n = scenario.n_sensors();
    if channel.n_sensors() != n || gains.len() != n {
        return Err(Error::Dimension(format!(
            "scenario has {n} sensors, channel {} columns, gain vector {} entries",
            channel.n_sensors(),
            gains.len()
        )));
    }
    Ok(())
}
