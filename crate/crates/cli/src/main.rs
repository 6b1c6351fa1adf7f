use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mimo_wsn::ed_gains::{solve_qclp, EdAllocationProblem};
use mimo_wsn::energy::{deflection_limit, ed_threshold_for_pfa, eta, DeflectionMetric};
use mimo_wsn::harness::{
    policy_gains, run_experiment, Execution, ExperimentConfig, ExperimentId, GainPolicy, Manifest,
};
use mimo_wsn::kv::{format_list, KvDoc};
use mimo_wsn::lmmse::mse_bound;
use mimo_wsn::np_detector::{NpTestContext, SingleAntennaContext};
use mimo_wsn::np_gains::{
    np_pd_bound, reference_low_power_budget, waterfill, waterfill_kkt_residual, PowerRegime, DEFAULT_TOL,
};
use mimo_wsn::rng::{stream, Domain};
use mimo_wsn::scenario::{sample_channel, Scenario, SCENARIO_KEYS};
use mimo_wsn::Error;

const OUTPUT_DIR_ENV: &str = "MIMO_WSN_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "mimo-wsn",
    version,
    about = "Sensor-network detection with a many-antenna fusion center"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write `<name>.csv` and `<name>.manifest.json`.
    Run(RunArgs),
    /// Water-filling powers for the multi-antenna NP detector.
    Waterfill(AllocArgs),
    /// Deflection-optimal powers for the energy detector.
    EdAlloc(EdAllocArgs),
    /// Detection threshold for a target false-alarm probability.
    Threshold(ThresholdArgs),
    /// Asymptotic detection and estimation bounds of a scenario.
    Bounds(BoundsArgs),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["experiment", "config", "replay"]))]
struct RunArgs {
    /// Built-in figure recipe (fig1 .. fig6).
    #[arg(long)]
    experiment: Option<String>,
    /// Experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest of an earlier run to reproduce exactly.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; does not change results.
    #[arg(long)]
    threads: Option<usize>,
    /// Defaults to $MIMO_WSN_OUTPUT_DIR, then ./results.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Output file stem; defaults to the experiment id.
    #[arg(long)]
    name: Option<String>,
    /// Override a config key, e.g. `--set pfa=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario config (sensor keys only). Without it a ten-sensor network is sampled.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for scenario sampling and channel draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct AllocArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    power: f64,
    #[arg(long)]
    antennas: usize,
}

#[derive(Args)]
struct EdAllocArgs {
    #[command(flatten)]
    alloc: AllocArgs,
    #[arg(long, value_enum, default_value_t = MetricArg::Deflection)]
    metric: MetricArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Deflection,
    ModifiedDeflection,
}

impl From<MetricArg> for DeflectionMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Deflection => DeflectionMetric::Deflection,
            MetricArg::ModifiedDeflection => DeflectionMetric::ModifiedDeflection,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ThresholdDetector {
    /// Multi-antenna NP test on one channel draw.
    Np,
    /// Single-antenna NP test on one channel draw.
    NpSingle,
    /// Multi-antenna energy detector; needs no channel.
    Ed,
}

#[derive(Args)]
struct ThresholdArgs {
    #[command(flatten)]
    alloc: AllocArgs,
    #[arg(long, value_enum)]
    detector: ThresholdDetector,
    #[arg(long)]
    pfa: f64,
    /// Gain policy (waterfill, equal, qclp, closed_form_low, closed_form_high, single_antenna_optimal).
    #[arg(long, default_value = "equal")]
    policy: String,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0.05)]
    pfa: f64,
    /// Also report the 1/M reference power at this antenna count.
    #[arg(long)]
    antennas: Option<usize>,
}

/// A failure with its exit code: 2 for usage and config problems, 1 otherwise.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: 2,
            msg: msg.into(),
        }
    }
    fn runtime(msg: impl Into<String>) -> Self {
        Failure {
            code: 1,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Degenerate(_) | Error::NoConvergence(_) => Failure::runtime(e.to_string()),
            _ => Failure::usage(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Waterfill(a) => cmd_waterfill(a),
        Command::EdAlloc(a) => cmd_ed_alloc(a),
        Command::Threshold(a) => cmd_threshold(a),
        Command::Bounds(a) => cmd_bounds(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mimo-wsn: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn apply_overrides(doc: &mut KvDoc, overrides: &[String]) -> Result<(), Failure> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("override `{o}` is not KEY=VALUE")))?;
        doc.set(k.trim(), v);
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let config = if let Some(path) = &a.replay {
        if a.trials.is_some() || a.scenarios.is_some() || a.seed.is_some() || !a.overrides.is_empty() {
            return Err(Failure::usage(
                "a replay cannot be combined with --trials, --scenarios, --seed or --set",
            ));
        }
        Manifest::from_json(&read(path)?)?.replay_config()
    } else {
        let text = match (&a.experiment, &a.config) {
            (Some(id), _) => {
                let id: ExperimentId = id.parse()?;
                mimo_wsn::harness::builtin_config_text(id)
                    .ok_or_else(|| Failure::usage(format!("`{id}` has no built-in recipe; use --config")))?
                    .to_string()
            }
            (None, Some(path)) => read(path)?,
            (None, None) => unreachable!("clap requires a source"),
        };
        let mut doc = KvDoc::parse(&text)?;
        apply_overrides(&mut doc, &a.overrides)?;
        for (key, value) in [
            ("trials", a.trials.map(|v| v.to_string())),
            ("scenarios", a.scenarios.map(|v| v.to_string())),
            ("seed", a.seed.map(|v| v.to_string())),
        ] {
            if let Some(v) = value {
                doc.set(key, &v);
            }
        }
        ExperimentConfig::from_kv(&doc)?
    };
    let exec = Execution::from_threads(a.threads)?;
    let out_dir = a
        .output_dir
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let name = a.name.unwrap_or_else(|| config.experiment.to_string());

    let result = run_experiment(&config, exec).map_err(|e| Failure::runtime(e.to_string()))?;
    let csv = result.to_csv().map_err(|e| Failure::runtime(e.to_string()))?;
    fs::create_dir_all(&out_dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let csv_path = out_dir.join(format!("{name}.csv"));
    let manifest_path = out_dir.join(format!("{name}.manifest.json"));
    let write =
        |p: &Path, s: &str| fs::write(p, s).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", p.display())));
    write(&csv_path, &csv)?;
    write(&manifest_path, &result.manifest().to_json())?;

    for row in result.rows.iter().filter(|r| r.status != "ok") {
        eprintln!(
            "mimo-wsn: M={} P={} {}:{}: {}",
            row.antennas, row.power, row.policy, row.detector, row.status
        );
    }
    println!("wrote {} ({} rows)", csv_path.display(), result.rows.len());
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn load_scenario(a: &ScenarioArgs) -> Result<Scenario, Failure> {
    let mut doc = match &a.config {
        Some(path) => KvDoc::parse(&read(path)?)?,
        None => KvDoc::default(),
    };
    apply_overrides(&mut doc, &a.overrides)?;
    if !doc.contains("seed") {
        doc.set("seed", &a.seed.to_string());
    }
    doc.reject_unknown(SCENARIO_KEYS)?;
    Ok(Scenario::from_config(&doc)?)
}

fn print_scenario(s: &Scenario) {
    print!("{}", s.to_config_string());
}

fn cmd_waterfill(a: AllocArgs) -> Result<(), Failure> {
    let scn = load_scenario(&a.scenario)?;
    let sol = waterfill(&scn, a.antennas, a.power, DEFAULT_TOL)?;
    print_scenario(&scn);
    println!("antennas = {}", a.antennas);
    println!("power = {:?}", a.power);
    println!("x = {}", format_list(&sol.magnitudes_sq));
    println!("multiplier = {:?}", sol.multiplier);
    println!("asymptotic_snr = {:?}", sol.achieved_snr);
    println!("kkt_residual = {:?}", waterfill_kkt_residual(&sol, &scn, a.antennas));
    println!("iterations = {}", sol.iterations);
    Ok(())
}

fn cmd_ed_alloc(a: EdAllocArgs) -> Result<(), Failure> {
    let scn = load_scenario(&a.alloc.scenario)?;
    let problem = EdAllocationProblem::new(&scn, a.alloc.antennas, a.alloc.power, a.metric.into())?;
    let sol = solve_qclp(&problem)?;
    print_scenario(&scn);
    println!("antennas = {}", a.alloc.antennas);
    println!("power = {:?}", a.alloc.power);
    println!("x = {}", format_list(&sol.x));
    println!("method = {:?}", sol.method);
    println!("kkt_residual = {:?}", sol.kkt_residual);
    println!("upper_bound_objective = {:?}", sol.upper_bound_objective);
    println!("deflection = {:?}", sol.full_objective);
    println!(
        "deflection_limit = {:?}",
        deflection_limit(
            &sol.x
                .iter()
                .map(|x| x * (a.alloc.antennas as f64).sqrt())
                .collect::<Vec<_>>(),
            &scn
        )?
    );
    Ok(())
}

fn cmd_threshold(a: ThresholdArgs) -> Result<(), Failure> {
    let scn = load_scenario(&a.alloc.scenario)?;
    let m = a.alloc.antennas;
    let seed = a.alloc.scenario.seed;
    let policy: GainPolicy = a.policy.parse()?;
    let single = sample_channel(&scn, 1, &mut stream(seed, Domain::SingleAntennaChannel, 0))?;
    let h = single.row(0);
    let gains = policy_gains(policy, &scn, m, a.alloc.power, Some(&h), DeflectionMetric::Deflection)?;
    println!("power = {:?}", a.alloc.power);
    println!("antennas = {m}");
    println!("policy = {policy}");
    println!("pfa = {:?}", a.pfa);
    println!("x = {}", format_list(&gains.powers()));
    match a.detector {
        ThresholdDetector::Np => {
            let ch = sample_channel(&scn, m, &mut stream(seed, Domain::Channel, 0))?;
            let ctx = NpTestContext::new(&gains, &ch, &scn)?;
            println!("threshold = {:?}", ctx.threshold(a.pfa)?);
            println!("snr = {:?}", ctx.snr());
            println!("pd = {:?}", ctx.pd(a.pfa)?);
        }
        ThresholdDetector::NpSingle => {
            let ctx = SingleAntennaContext::new(&gains, &h, &scn)?;
            println!("threshold = {:?}", ctx.threshold(a.pfa)?);
            println!("snr_ratio = {:?}", ctx.snr_ratio());
            println!("pd = {:?}", ctx.pd_closed_form(a.pfa)?);
        }
        ThresholdDetector::Ed => {
            let thr = ed_threshold_for_pfa(&eta(&gains, &scn), &scn, m, a.pfa)?;
            println!("threshold = {:?}", thr.gamma_hat);
            println!("eta = {}", format_list(&thr.eta));
            println!("fallback = {}", thr.fallback);
        }
    }
    Ok(())
}

fn cmd_bounds(a: BoundsArgs) -> Result<(), Failure> {
    let scn = load_scenario(&a.scenario)?;
    print_scenario(&scn);
    println!("pfa = {:?}", a.pfa);
    println!(
        "np_pd_low_power_lower = {:?}",
        np_pd_bound(&scn, PowerRegime::Low, a.pfa)?.value
    );
    println!(
        "np_pd_high_power_upper = {:?}",
        np_pd_bound(&scn, PowerRegime::High, a.pfa)?.value
    );
    println!("mse_low_power_upper = {:?}", mse_bound(&scn, PowerRegime::Low).value);
    println!("mse_high_power_lower = {:?}", mse_bound(&scn, PowerRegime::High).value);
    if let Some(m) = a.antennas {
        if m == 0 {
            return Err(Failure::usage("--antennas must be at least 1"));
        }
        println!("reference_power = {:?}", reference_low_power_budget(&scn, m));
    }
    Ok(())
}
