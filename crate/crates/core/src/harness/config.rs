//! Experiment recipes: the flat config format, gain policies, detectors and sweeps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::energy::DeflectionMetric;
use crate::error::{check_pfa, Error, Result};
use crate::kv::KvDoc;
use crate::np_gains::reference_low_power_budget;
use crate::scenario::{scenario_source, Scenario, ScenarioSource, SCENARIO_KEYS};

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                $name::ALL.iter().copied().find(|v| v.name() == s).ok_or_else(|| {
                    let names: Vec<_> = $name::ALL.iter().map(|v| v.name()).collect();
                    Error::config(0, format!("unknown {} `{s}` (expected one of {})", stringify!($name), names.join(", ")))
                })
            }
        }
    };
}

named_enum! {
    /// How the sum power `P` is split across sensors.
    GainPolicy {
        Waterfill => "waterfill",
        Equal => "equal",
        Qclp => "qclp",
        ClosedFormLow => "closed_form_low",
        ClosedFormHigh => "closed_form_high",
        SingleAntennaOptimal => "single_antenna_optimal",
    }
}

impl GainPolicy {
    /// Whether the gains depend on the channel draw.
    pub fn uses_csi(self) -> bool {
        self == GainPolicy::SingleAntennaOptimal
    }
}

named_enum! {
    /// A fusion-center processor. `*_single` variants see one antenna.
    DetectorKind {
        NpMulti => "np_multi",
        NpSingle => "np_single",
        LmmseMulti => "lmmse_multi",
        LmmseSingle => "lmmse_single",
        EdMulti => "ed_multi",
        EdSingle => "ed_single",
    }
}

impl DetectorKind {
    pub fn single_antenna(self) -> bool {
        matches!(
            self,
            DetectorKind::NpSingle | DetectorKind::LmmseSingle | DetectorKind::EdSingle
        )
    }
    pub fn estimator(self) -> bool {
        matches!(self, DetectorKind::LmmseMulti | DetectorKind::LmmseSingle)
    }
    pub fn energy(self) -> bool {
        matches!(self, DetectorKind::EdMulti | DetectorKind::EdSingle)
    }
}

named_enum! {
    ExperimentId {
        Fig1 => "fig1",
        Fig2 => "fig2",
        Fig3 => "fig3",
        Fig4 => "fig4",
        Fig5 => "fig5",
        Fig6 => "fig6",
        Custom => "custom",
    }
}

named_enum! {
    /// Threshold of the multi-antenna energy detector: inversion of the
    /// large-`M` H0 tail, or the fading-averaged H0 quantile found by simulation.
    EdThresholdRule {
        Asymptotic => "asymptotic",
        Calibrated => "calibrated",
    }
}

/// One output curve: a gain policy evaluated with one detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Curve {
    pub policy: GainPolicy,
    pub detector: DetectorKind,
}

impl FromStr for Curve {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (p, d) = s
            .split_once(':')
            .ok_or_else(|| Error::config(0, format!("curve `{s}` is not `policy:detector`")))?;
        Ok(Curve {
            policy: p.trim().parse()?,
            detector: d.trim().parse()?,
        })
    }
}

/// Sum power at each antenna count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerSpec {
    /// Every listed `P` at every `M`.
    Fixed(Vec<f64>),
    /// `P = Σ σ²_n d_i^α / (2 σ²_{v,i} M)`.
    InverseM,
    /// `P = scale / √M`.
    InverseSqrtM(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub antennas: Vec<usize>,
    pub power: PowerSpec,
}

impl Sweep {
    /// `(M, P)` operating points, antenna-major.
    pub fn points(&self, scenario: &Scenario) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for &m in &self.antennas {
            match &self.power {
                PowerSpec::Fixed(ps) => out.extend(ps.iter().map(|&p| (m, p))),
                PowerSpec::InverseM => out.push((m, reference_low_power_budget(scenario, m))),
                PowerSpec::InverseSqrtM(scale) => out.push((m, scale / (m as f64).sqrt())),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub scenario: ScenarioSource,
    pub sweep: Sweep,
    pub trials_per_scenario: usize,
    /// Independent channel draws; the sensor parameters stay fixed.
    pub n_scenarios: usize,
    pub target_pfa: f64,
    pub master_seed: u64,
    pub curves: Vec<Curve>,
    /// H0 draws behind each simulated energy threshold.
    pub calibration_samples: usize,
    pub metric: DeflectionMetric,
    pub ed_threshold: EdThresholdRule,
}

pub const EXPERIMENT_KEYS: &[&str] = &[
    "experiment",
    "antennas",
    "powers",
    "power_schedule",
    "power_scale",
    "trials",
    "scenarios",
    "pfa",
    "curves",
    "policies",
    "detectors",
    "calibration_samples",
    "metric",
    "ed_threshold",
];

pub const DEFAULT_TRIALS: usize = 1_000;
pub const DEFAULT_SCENARIOS: usize = 30;
pub const DEFAULT_PFA: f64 = 0.05;
pub const DEFAULT_CALIBRATION: usize = 200_000;

/// Checked-in recipe text for a figure experiment.
pub fn builtin_config_text(id: ExperimentId) -> Option<&'static str> {
    match id {
        ExperimentId::Fig1 => Some(include_str!("../../configs/fig1.cfg")),
        ExperimentId::Fig2 => Some(include_str!("../../configs/fig2.cfg")),
        ExperimentId::Fig3 => Some(include_str!("../../configs/fig3.cfg")),
        ExperimentId::Fig4 => Some(include_str!("../../configs/fig4.cfg")),
        ExperimentId::Fig5 => Some(include_str!("../../configs/fig5.cfg")),
        ExperimentId::Fig6 => Some(include_str!("../../configs/fig6.cfg")),
        ExperimentId::Custom => None,
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvDoc::parse(text)?)
    }

    pub fn builtin(id: ExperimentId) -> Result<Self> {
        let text =
            builtin_config_text(id).ok_or_else(|| Error::InvalidArgument(format!("`{id}` has no built-in recipe")))?;
        Self::parse(text)
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let allowed: Vec<&str> = EXPERIMENT_KEYS.iter().chain(SCENARIO_KEYS).copied().collect();
        doc.reject_unknown(&allowed)?;
        let experiment = doc.parse_value("experiment")?.unwrap_or(ExperimentId::Custom);
        let antennas = doc
            .parse_list::<usize>("antennas")?
            .ok_or_else(|| Error::config(0, "`antennas` is required"))?;
        let schedule = doc.raw("power_schedule").unwrap_or("fixed");
        let powers = doc.parse_list::<f64>("powers")?;
        let scale = doc.parse_value::<f64>("power_scale")?;
        let power = match (schedule, powers, scale) {
            ("fixed", Some(ps), None) => PowerSpec::Fixed(ps),
            ("fixed", None, _) => return Err(Error::config(0, "`powers` is required for a fixed schedule")),
            ("inverse_m", None, None) => PowerSpec::InverseM,
            ("inverse_sqrt_m", None, s) => PowerSpec::InverseSqrtM(s.unwrap_or(15.0)),
            ("fixed" | "inverse_m" | "inverse_sqrt_m", _, _) => {
                return Err(Error::config(
                    0,
                    format!("`powers`/`power_scale` do not apply to the `{schedule}` schedule"),
                ))
            }
            (other, _, _) => {
                return Err(Error::config(
                    0,
                    format!("unknown power_schedule `{other}` (expected fixed, inverse_m, inverse_sqrt_m)"),
                ))
            }
        };

        let curves = match (
            doc.parse_list::<Curve>("curves")?,
            doc.parse_list::<GainPolicy>("policies")?,
            doc.parse_list::<DetectorKind>("detectors")?,
        ) {
            (Some(c), None, None) => c,
            (None, Some(ps), Some(ds)) => ps
                .iter()
                .flat_map(|&policy| ds.iter().map(move |&detector| Curve { policy, detector }))
                .collect(),
            _ => {
                return Err(Error::config(
                    0,
                    "give either `curves` or both `policies` and `detectors`",
                ))
            }
        };
        let metric = match doc.raw("metric").unwrap_or("deflection") {
            "deflection" => DeflectionMetric::Deflection,
            "modified_deflection" => DeflectionMetric::ModifiedDeflection,
            other => {
                return Err(Error::config(
                    0,
                    format!("unknown metric `{other}` (expected deflection, modified_deflection)"),
                ))
            }
        };

        let ed_threshold = doc.parse_value("ed_threshold")?.unwrap_or(EdThresholdRule::Asymptotic);
        let cfg = ExperimentConfig {
            experiment,
            scenario: scenario_source(doc)?,
            sweep: Sweep { antennas, power },
            trials_per_scenario: doc.parse_value("trials")?.unwrap_or(DEFAULT_TRIALS),
            n_scenarios: doc.parse_value("scenarios")?.unwrap_or(DEFAULT_SCENARIOS),
            target_pfa: doc.parse_value("pfa")?.unwrap_or(DEFAULT_PFA),
            master_seed: doc.parse_value("seed")?.unwrap_or(0),
            curves,
            calibration_samples: doc.parse_value("calibration_samples")?.unwrap_or(DEFAULT_CALIBRATION),
            metric,
            ed_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_pfa(self.target_pfa)?;
        let bad = |msg: &str| Err(Error::config(0, msg.to_string()));
        if self.trials_per_scenario == 0 {
            return bad("trials must be at least 1");
        }
        if self.n_scenarios == 0 {
            return bad("scenarios must be at least 1");
        }
        if self.curves.is_empty() {
            return bad("at least one curve is required");
        }
        if self.sweep.antennas.is_empty() || self.sweep.antennas.contains(&0) {
            return bad("antennas must be a nonempty list of positive counts");
        }
        match &self.sweep.power {
            PowerSpec::Fixed(ps) if ps.is_empty() || !ps.iter().all(|p| p.is_finite() && *p > 0.0) => {
                bad("powers must be a nonempty list of positive values")
            }
            PowerSpec::InverseSqrtM(s) if !(s.is_finite() && *s > 0.0) => bad("power_scale must be positive"),
            _ => Ok(()),
        }?;
        if self.curves.iter().any(|c| {
            c.detector == DetectorKind::EdSingle
                || (c.detector == DetectorKind::EdMulti && self.ed_threshold == EdThresholdRule::Calibrated)
        }) && self.calibration_samples < 1_000
        {
            return bad("calibration_samples must be at least 1000");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        for &id in ExperimentId::ALL {
            if id == ExperimentId::Custom {
                continue;
            }
            let cfg = ExperimentConfig::builtin(id).unwrap();
            assert_eq!(cfg.experiment, id);
            assert_eq!(cfg.trials_per_scenario, DEFAULT_TRIALS);
            assert_eq!(cfg.n_scenarios, DEFAULT_SCENARIOS);
        }
    }

    #[test]
    fn product_and_errors() {
        let base = "antennas = 4\npowers = 1\n";
        let cfg = ExperimentConfig::parse(&format!(
            "{base}policies = equal, waterfill\ndetectors = np_multi, ed_single, lmmse_multi\n"
        ))
        .unwrap();
        assert_eq!(cfg.curves.len(), 6);
        assert_eq!(
            cfg.curves[1],
            Curve {
                policy: GainPolicy::Equal,
                detector: DetectorKind::EdSingle
            }
        );

        for extra in [
            "curves = equal:np_multi\nbogus = 1\n",
            "curves = equal:nope\n",
            "curves = equal\n",
            "curves = equal:np_multi\npfa = 1.5\n",
            "curves = equal:np_multi\ntrials = 0\n",
            "curves = equal:np_multi\npower_schedule = inverse_m\n",
        ] {
            assert!(ExperimentConfig::parse(&format!("{base}{extra}")).is_err(), "{extra}");
        }
        assert!(ExperimentConfig::parse("antennas = 4\ncurves = equal:np_multi\n").is_err());
    }

    #[test]
    fn sweep_points() {
        let s = Scenario::new(vec![2.0, 4.0], vec![0.5, 0.25], 1.0, 0.3, 2.0).unwrap();
        let sw = Sweep {
            antennas: vec![16, 64],
            power: PowerSpec::InverseSqrtM(8.0),
        };
        assert_eq!(sw.points(&s), vec![(16, 2.0), (64, 1.0)]);
        let sw = Sweep {
            antennas: vec![10],
            power: PowerSpec::InverseM,
        };
        // (0.3·4/0.5 + 0.3·16/0.25) / 20
        assert!((sw.points(&s)[0].1 - (2.4 + 19.2) / 20.0).abs() < 1e-12);
        let sw = Sweep {
            antennas: vec![1, 2],
            power: PowerSpec::Fixed(vec![0.5, 3.0]),
        };
        assert_eq!(sw.points(&s).len(), 4);
    }
}
