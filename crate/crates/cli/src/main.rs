use std::path::PathBuf;
use std::process::ExitCode;

use amtgen::config::{BackendSpec, ConfigError, RunConfig};
use amtgen::runner::{RunError, Runner, StageReport};
use amtgen::scoring::RedundancyForm;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "amtgen", version, about = "Reverse argument-chain generation, dataset pipeline and detector evaluation")]
struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides `rng_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `mock` or `remote:<url>`.
    #[arg(long, global = true)]
    backends: Option<String>,
    #[arg(long, global = true, default_value = "run")]
    stage_dir: PathBuf,
    /// Worker threads for intra-stage parallelism.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true, value_enum)]
    redundancy_form: Option<Form>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Form {
    MainText,
    Appendix,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Ingest sources and curate seeds.
    Curate {
        /// SeedRecord JSONL used instead of the configured sources.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Reverse search for every curated seed.
    Generate,
    /// Per-subgroup cap by chain score.
    Select,
    /// Difficulty tiers for the selected instances.
    Augment,
    /// Non-hate counterparts for a sample of families.
    Counter,
    /// Query the configured generator as a moderator.
    Evaluate,
    /// HSR tables from predictions.
    Report {
        /// Predictions JSONL used instead of the stage's own.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Generation-strategy and reward ablations.
    Ablate,
    /// Every stage from curate to report.
    Run {
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Print the resolved configuration and its hash.
    Config,
}

fn load(cli: &Cli) -> Result<RunConfig, RunError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    if let Some(b) = &cli.backends {
        b.parse::<BackendSpec>()?;
        cfg.backend = b.clone();
    }
    if let Some(p) = cli.parallelism {
        cfg.parallelism = Some(p);
    }
    if let Some(f) = cli.redundancy_form {
        cfg.search.reward.redundancy_form = match f {
            Form::MainText => RedundancyForm::MainText,
            Form::Appendix => RedundancyForm::Appendix,
        };
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Vec<StageReport>, RunError> {
    let cfg = load(&cli)?;
    if let Some(n) = cfg.parallelism {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))?;
    }
    let resolved = cfg.resolve()?;
    if let Cmd::Config = cli.cmd {
        let out = json!({ "config_hash": resolved.config_hash, "config": resolved.config });
        println!("{}", serde_json::to_string_pretty(&out).expect("config serializes"));
        return Ok(Vec::new());
    }
    let runner = Runner::new(resolved, &cli.stage_dir);
    Ok(match cli.cmd {
        Cmd::Curate { records } => vec![runner.curate(records.as_deref())?],
        Cmd::Generate => vec![runner.generate()?],
        Cmd::Select => vec![runner.select()?],
        Cmd::Augment => vec![runner.augment()?],
        Cmd::Counter => vec![runner.counter()?],
        Cmd::Evaluate => vec![runner.evaluate()?],
        Cmd::Report { predictions } => vec![runner.report(predictions.as_deref())?],
        Cmd::Ablate => vec![runner.ablate()?],
        Cmd::Run { records } => runner.run_all(records.as_deref())?,
        Cmd::Config => unreachable!(),
    })
}

fn exit_code(kind: &str) -> u8 {
    match kind {
        "ConfigInvalid" => 2,
        "MissingUpstream" => 3,
        "BackendUnavailable" => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(reports) => {
            for r in reports {
                println!("{}", serde_json::to_string(&r).expect("report serializes"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e.kind();
            eprintln!("{}", json!({ "error": kind, "message": e.to_string() }));
            ExitCode::from(exit_code(kind))
        }
    }
}
