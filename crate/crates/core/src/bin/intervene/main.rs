//! `intervene`: validate instances, simulate, sweep budgets, run the
//! certification suites, and drive the logged-data pipeline.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 a verification check
//! failed, 3 runtime error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use intervene::harness::config::ExperimentConfig;
use intervene::harness::theory::{run_suite, Suite, SuiteOptions};
use intervene::harness::{budget_sweep, simulate};
use intervene::model::{validate_instance, Instance, Population};
use intervene::offline::synthetic::{generate_synthetic_population, SyntheticConfig};
use intervene::offline::{featurize, fit_ridge, zhat, LoggedDataset, RidgeModel, WARMUP_DAYS};
use intervene::policies::{
    top_by_score, DecompPiOracle, EligibilityRule, ExactOptimal, MyopicOracle, NullPolicy, Policy, RandomBaseline,
    DEFAULT_EXACT_CAP,
};

#[derive(Debug, Parser)]
#[command(name = "intervene", version, about = "Budget-constrained intervention targeting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check an instance file; prints OK or one violation per line.
    Validate {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Run one policy on an instance and print the trajectory summary as JSON.
    Simulate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = SimPolicy::DecompPiOracle)]
        policy: SimPolicy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Require this many consecutive non-verified days (0 = state-zero rule).
        #[arg(long, default_value_t = 0)]
        streak: usize,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a budget sweep from an experiment config and write CSVs.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run randomized certification suites and print a JSON report.
    Verify {
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Negate the index policy's values (negative control).
        #[arg(long, hide = true)]
        flip_sign: bool,
    },
    /// Generate a synthetic population and its logged trajectories.
    GenData {
        /// Synthetic config JSON; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Logging policy budget.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON-lines output.
        #[arg(long)]
        out: PathBuf,
        /// Also write the ground-truth population JSON here.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit per-arm ridge models on a logged dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank patients by estimated intervention value on a given day.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        day: usize,
        #[arg(long)]
        budget: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SimPolicy {
    Null,
    RandomBaseline,
    DecompPiOracle,
    MyopicOracle,
    ExactOptimal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SuiteArg {
    Coupling,
    Bounds,
    #[value(name = "prop3")]
    GainIdentity,
    Robustness,
    All,
}

enum Failure {
    Usage(String),
    Verification,
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Verification => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Runtime(m) => eprintln!("runtime error: {m}"),
                Failure::Verification => eprintln!("verification failed"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { instance } => cmd_validate(&instance),
        Command::Simulate {
            instance,
            policy,
            seed,
            streak,
            out,
        } => cmd_simulate(&instance, policy, seed, streak, out.as_deref()),
        Command::Sweep { config, out } => cmd_sweep(&config, out.as_deref()),
        Command::Verify {
            suite,
            trials,
            seed,
            out,
            flip_sign,
        } => cmd_verify(suite, trials, seed, flip_sign, out.as_deref()),
        Command::GenData {
            config,
            n,
            horizon,
            budget,
            seed,
            out,
            truth,
        } => cmd_gen_data(config.as_deref(), n, horizon, budget, seed, &out, truth.as_deref()),
        Command::Fit { data, lambda, out } => cmd_fit(&data, lambda, &out),
        Command::Score {
            model,
            data,
            day,
            budget,
        } => cmd_score(&model, &data, day, budget),
    }
}

fn read_instance(path: &Path) -> Result<Instance, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Instance::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, format!("{text}\n")).map_err(|e| runtime(format!("{}: {e}", path.display()))),
        None => print_line(text),
    }
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn print_line(text: &str) -> Result<(), Failure> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(runtime(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let inst = read_instance(path)?;
    let report = validate_instance(&inst);
    print_line(&report.to_string())?;
    if report.is_ok() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{} is not a valid instance", path.display())))
    }
}

fn cmd_simulate(path: &Path, which: SimPolicy, seed: u64, streak: usize, out: Option<&Path>) -> Result<(), Failure> {
    let inst = read_instance(path)?.validated().map_err(usage)?;
    let pop = Population::from_instance(inst).map_err(usage)?;
    let mut policy: Box<dyn Policy> = match which {
        SimPolicy::Null => Box::new(NullPolicy),
        SimPolicy::RandomBaseline => Box::new(RandomBaseline),
        SimPolicy::DecompPiOracle => Box::new(DecompPiOracle::new()),
        SimPolicy::MyopicOracle => Box::new(MyopicOracle),
        SimPolicy::ExactOptimal => Box::new(ExactOptimal::solve(&pop, DEFAULT_EXACT_CAP).map_err(usage)?),
    };
    let eligibility = if streak == 0 {
        EligibilityRule::StateZero
    } else {
        EligibilityRule::Streak { k: streak }
    };
    let run = simulate(&pop, policy.as_mut(), eligibility, seed).map_err(runtime)?;
    let report = serde_json::json!({
        "policy": policy.label(),
        "seed": seed,
        "total_reward": run.total_reward,
        "verification_rate": run.verification_rate(),
        "actions": run.actions,
        "states": run.states,
    });
    emit(&serde_json::to_string_pretty(&report).map_err(runtime)?, out)
}

fn cmd_sweep(config_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config_path).map_err(usage)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let out_dir = match (out, &cfg.output) {
        (Some(dir), _) => dir.to_path_buf(),
        (None, Some(dir)) => base.join(dir),
        (None, None) => return Err(usage("no output directory: pass --out or set `output`")),
    };
    let pop = cfg.population(base).map_err(usage)?;
    let policies = cfg.build_policies(&pop, base).map_err(usage)?;
    match budget_sweep(&pop, &policies, &cfg.budgets, cfg.eligibility(), cfg.replications, cfg.seed) {
        Ok(result) => result.write_csvs(&out_dir).map_err(runtime),
        Err(failure) => {
            // keep whatever finished
            let _ = failure.partial.write_csvs(&out_dir);
            Err(runtime(failure.error))
        }
    }
}

fn cmd_verify(suite: SuiteArg, trials: usize, seed: u64, flip_sign: bool, out: Option<&Path>) -> Result<(), Failure> {
    if trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let suites: Vec<Suite> = match suite {
        SuiteArg::Coupling => vec![Suite::Coupling],
        SuiteArg::Bounds => vec![Suite::Bounds],
        SuiteArg::GainIdentity => vec![Suite::GainIdentity],
        SuiteArg::Robustness => vec![Suite::Robustness],
        SuiteArg::All => Suite::ALL.to_vec(),
    };
    let opts = SuiteOptions { trials, seed, flip_sign };
    let reports = suites
        .into_iter()
        .map(|s| run_suite(s, &opts))
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    emit(&serde_json::to_string_pretty(&reports).map_err(runtime)?, out)?;
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn cmd_gen_data(
    config: Option<&Path>,
    n: Option<usize>,
    horizon: Option<usize>,
    budget: Option<usize>,
    seed: u64,
    out: &Path,
    truth: Option<&Path>,
) -> Result<(), Failure> {
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize::<_, SyntheticConfig>(de)
                .map_err(|e| usage(format!("{}: {}: {}", path.display(), e.path(), e.inner())))?
        }
        None => SyntheticConfig::default(),
    };
    if let Some(n) = n {
        cfg.n = n;
    }
    if let Some(h) = horizon {
        cfg.horizon = h;
        cfg.max_window = cfg.max_window.min(h);
        cfg.min_window = cfg.min_window.min(cfg.max_window);
    }
    if let Some(b) = budget {
        cfg.budget = b;
    }
    cfg.check().map_err(usage)?;
    let (pop, data) = generate_synthetic_population(&cfg, seed).map_err(runtime)?;
    let file = File::create(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let mut w = BufWriter::new(file);
    data.write_jsonl(&mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    if let Some(path) = truth {
        let text = serde_json::to_string_pretty(&pop).map_err(runtime)?;
        std::fs::write(path, text + "\n").map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn read_dataset(path: &Path) -> Result<LoggedDataset, Failure> {
    let file = File::open(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    LoggedDataset::read_jsonl(BufReader::new(file)).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_fit(data: &Path, lambda: f64, out: &Path) -> Result<(), Failure> {
    let dataset = read_dataset(data)?;
    let model = fit_ridge(&dataset, lambda).map_err(usage)?;
    let text = serde_json::to_string_pretty(&model).map_err(runtime)?;
    std::fs::write(out, text + "\n").map_err(|e| runtime(format!("{}: {e}", out.display())))
}

fn cmd_score(model_path: &Path, data: &Path, day: usize, budget: usize) -> Result<(), Failure> {
    let text = std::fs::read_to_string(model_path)
        .map_err(|e| usage(format!("cannot read {}: {e}", model_path.display())))?;
    let model: RidgeModel = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", model_path.display())))?;
    let dataset = read_dataset(data)?;
    let mut scored = Vec::new();
    let mut undesired = Vec::new();
    for record in &dataset.records {
        if !record.in_window(day) || day < record.t_start + WARMUP_DAYS {
            continue;
        }
        let features = featurize(record, day).map_err(usage)?;
        let z = zhat(&model, features.as_slice(), record.t_end - day).map_err(usage)?;
        scored.push((record.id, z));
        if record.v_at(day) == Some(false) {
            undesired.push((record.id, z));
        }
    }
    let selected = top_by_score(undesired, budget, true);
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let stdout = std::io::stdout();
    let mut w = csv::Writer::from_writer(stdout.lock());
    w.write_record(["rank", "patient", "zhat", "selected"]).map_err(runtime)?;
    for (rank, (id, z)) in scored.iter().enumerate() {
        w.write_record([
            (rank + 1).to_string(),
            id.to_string(),
            z.to_string(),
            (selected.contains(*id) as u8).to_string(),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}
