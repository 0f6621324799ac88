//! `drl`: simulate datasets, run estimators, run benchmark configurations,
//! compute efficiency bounds and train `π^d` policies.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drl_core::bench::{
    build_pi_d, check_failure_budget, emit_csv, evaluate_dataset, replication_seed, run_problem, write_csv,
    BuiltEnv, ExperimentConfig, PolicyConfig, Problem,
};
use drl_core::oracle::{effbounds, exact_bounds, mis_gap_mc};
use drl_core::{rng, Dataset, Error};

#[derive(Parser)]
#[command(name = "drl", version, about = "Double reinforcement learning for off-policy evaluation")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML, or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configuration's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout when absent, unless the configuration names one).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw trajectories from the behavior policy and write them as JSON lines.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of trajectories (defaults to the first configured size).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run one setting's estimators on a saved dataset; prints JSON.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Dataset in JSON-lines form.
        #[arg(long)]
        data: PathBuf,
        /// Setting name (defaults to the first one).
        #[arg(long)]
        setting: Option<String>,
    },
    /// Run the full benchmark and write the CSV table.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Efficiency bounds of a tabular problem; prints JSON.
    Effbound {
        #[command(flatten)]
        common: Common,
        /// Monte Carlo trajectories.
        #[arg(long, default_value_t = 100_000)]
        n_mc: usize,
    },
    /// Train the near-optimal policy of a mixture configuration and save it as JSON.
    TrainPid {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { common, n } => {
            let config = load(&common)?;
            let problem = Problem::prepare(&config)?;
            let n = n.unwrap_or(config.sizes[0]);
            let data = drl_core::with_env!(&problem.env, e => drl_core::envs::simulate(e, &problem.behavior, n, config.seed))?;
            let mut buf = Vec::new();
            data.write_jsonl(&mut buf)?;
            write_output(common.out.as_deref(), &String::from_utf8_lossy(&buf))
        }
        Command::Evaluate { common, data, setting } => {
            let config = load(&common)?;
            let problem = Problem::prepare(&config)?;
            let index = match &setting {
                None => 0,
                Some(name) => config
                    .settings
                    .iter()
                    .position(|s| &s.name == name)
                    .ok_or_else(|| Error::Config(format!("no setting named {name:?}")))?,
            };
            let data = Dataset::load(&data)?;
            let results = evaluate_dataset(&config, &problem, index, &data, rng::derive(config.seed, 2))?;
            let mut out = serde_json::Map::new();
            for (kind, r) in config.settings[index].estimators.iter().zip(results) {
                let value = match r {
                    Ok(est) => serde_json::to_value(est)?,
                    Err(e) => serde_json::json!({ "error": e.to_string() }),
                };
                out.insert(kind.name().to_string(), value);
            }
            write_output(common.out.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))
        }
        Command::Bench { common } => {
            let config = load(&common)?;
            let problem = Problem::build(&config)?;
            let rows = run_problem(&config, &problem)?;
            match common.out.as_ref().or(config.output.as_ref()) {
                Some(path) => emit_csv(&rows, path)?,
                None => write_csv(&rows, std::io::stdout().lock())?,
            }
            check_failure_budget(&rows, config.max_failure_fraction)
        }
        Command::Effbound { common, n_mc } => {
            let config = load(&common)?;
            let problem = Problem::prepare(&config)?;
            let spec = problem
                .env
                .tabular_model()
                .ok_or_else(|| Error::Config("efficiency bounds need a tabular environment".into()))?;
            let seed = replication_seed(config.seed, n_mc, 0);
            let mc = effbounds(&spec, &problem.behavior, &problem.target, n_mc, seed)?;
            let gap = mis_gap_mc(&spec, &problem.behavior, &problem.target, n_mc, seed)?;
            let exact = exact_bounds(&spec, &problem.behavior, &problem.target)?;
            let report = serde_json::json!({
                "monte_carlo": {
                    "n": n_mc,
                    "effbound_m1": mc.m1,
                    "effbound_m2": mc.m2,
                    "m1_minus_m2": mc.m1_minus_m2,
                    "mis_gap": gap,
                },
                "exact": exact,
            });
            write_output(common.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
        }
        Command::TrainPid { common } => {
            let config = load(&common)?;
            let PolicyConfig::Mixture { pi_d, .. } = &config.policies else {
                return Err(Error::Config("train-pid needs a mixture policy configuration".into()));
            };
            let env = BuiltEnv::from_config(&config.env)?;
            let policy = build_pi_d(&env, &config.env, pi_d)?;
            write_output(common.out.as_deref(), &(serde_json::to_string(&policy)? + "\n"))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidFoldCount { .. } | Error::InfiniteStateSpace(_) | Error::Json(_) => 2,
        Error::FailureBudgetExceeded { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
