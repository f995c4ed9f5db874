use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dss_core::pipeline::{render, replay, ExperimentConfig, Pipeline, PipelineError, Stage};
use dss_core::ConfigError;
use log::info;

const EXIT_CONFIG: u8 = 2;
const EXIT_EXECUTION: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "dss",
    version,
    about = "Lane-keeping test generation across simulator siblings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed. For `replay`, the episode seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Reuse stage outputs whose inputs are unchanged.
    #[arg(long, global = true, value_enum, default_value_t = Toggle::On)]
    stage_cache: Toggle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the search on every sibling.
    Search,
    /// Migrate sibling maps across siblings and build the union maps.
    Migrate,
    /// Merge the union maps.
    Merge,
    /// Build the twin map and compare every map against it.
    Evaluate,
    /// Render heatmaps and tables.
    Report,
    /// All stages.
    Pipeline,
    /// Re-execute one archived test and write its trace.
    Replay {
        #[arg(long)]
        test_id: String,
        /// Restrict the lookup to one sibling.
        #[arg(long)]
        simulator: Option<String>,
        /// Trace CSV path (default: <out>/replay/<test id>.csv).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| ConfigError::new("--config", "required for this command"))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn out_dir(common: &Common, config: Option<&ExperimentConfig>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| config.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run_stages(common: &Common, stages: &[Stage]) -> Result<()> {
    let config = load_config(common)?;
    let dir = out_dir(common, Some(&config));
    let mut p = Pipeline::open(config, &dir, common.stage_cache == Toggle::On)?;
    for &s in stages {
        p.run(s)?;
    }
    if stages.contains(&Stage::Evaluate) {
        print!("{}", render::summary(&p.load_report()?));
    }
    println!("run directory: {}", dir.display());
    Ok(())
}

fn run_replay(
    common: &Common,
    test_id: &str,
    simulator: Option<&str>,
    trace: Option<&Path>,
) -> Result<()> {
    let dir = out_dir(common, None);
    let outcome = replay(&dir, test_id, simulator, common.seed)?;
    let trace_path = trace
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("replay").join(format!("{test_id}.csv")));
    if let Some(parent) = trace_path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = fs::File::create(&trace_path)
        .with_context(|| format!("creating {}", trace_path.display()))?;
    outcome
        .episode
        .write_trace_csv(std::io::BufWriter::new(file))
        .with_context(|| format!("writing {}", trace_path.display()))?;
    println!("{}", describe(&outcome));
    println!("trace: {}", trace_path.display());
    if let Some(msg) = outcome.mismatch_description() {
        bail!("replay mismatch: {msg}");
    }
    info!("replay of {test_id} matches the archive");
    Ok(())
}

fn describe(outcome: &dss_core::pipeline::ReplayOutcome) -> String {
    format!(
        "test {} on {}: outcome {:?}, fitness {}, steps {}, seed {}, matches archive: {}",
        outcome.test_id,
        outcome.simulator,
        outcome.episode.outcome,
        outcome.episode.fitness,
        outcome.episode.steps,
        outcome.episode_seed,
        outcome.matches
    )
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<PipelineError>() {
        Some(e) if e.is_config() => EXIT_CONFIG,
        _ => EXIT_EXECUTION,
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            return Err(ConfigError::new("--jobs", "must be >= 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    let common = &cli.common;
    match &cli.command {
        Command::Search => run_stages(common, &[Stage::Search]),
        Command::Migrate => run_stages(common, &[Stage::Union]),
        Command::Merge => run_stages(common, &[Stage::Merge]),
        Command::Evaluate => run_stages(common, &[Stage::Evaluate]),
        Command::Report => run_stages(common, &[Stage::Report]),
        Command::Pipeline => run_stages(common, &Stage::ALL),
        Command::Replay {
            test_id,
            simulator,
            trace,
        } => run_replay(common, test_id, simulator.as_deref(), trace.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
