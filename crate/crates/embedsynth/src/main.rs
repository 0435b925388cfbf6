//! Command-line front end: one subcommand per pipeline stage plus
//! cost-report, scaling-fit, and status.

use clap::{Args, Parser, Subcommand};
use embedsynth::config::Config;
use embedsynth::ledger::{self, Budget};
use embedsynth::pipeline::{self, StageName, Workdir};
use embedsynth::scaling;
use embedsynth::taxonomy::TopicPool;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "embedsynth", about = "Synthetic embedding-data pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct StageArgs {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pipeline working directory.
    #[arg(long, default_value = "workdir")]
    workdir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sample and truncate topics (or just print a sample with --file).
    Topics {
        #[command(flatten)]
        stage: StageArgs,
        /// Sample directly from this topic file instead of running the stage.
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        max_depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Brainstorm task descriptions per topic.
    Brainstorm(StageArgs),
    /// Teacher-generated seed data.
    Seed(StageArgs),
    /// Export the junior-generator SFT corpus.
    ExportSft(StageArgs),
    /// Junior-generator candidate lists for judging.
    GenerateRoot(StageArgs),
    /// Teacher best/worst judgments over candidate lists.
    Judge(StageArgs),
    /// Build and export preference pairs.
    ExportDpo(StageArgs),
    /// Teacher revisions of root data.
    ReviseSignal(StageArgs),
    /// Export the revisor SFT corpus.
    ExportRevisorSft(StageArgs),
    /// Large-scale synthesis with the senior generator.
    Synth(StageArgs),
    /// Single-pass revision of the synthesized corpus.
    Revise(StageArgs),
    /// Near-duplicate removal.
    Dedup {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        bands: Option<usize>,
    },
    /// Sample the final training mix.
    Mix(StageArgs),
    /// Export the mixed training set.
    ExportTrain(StageArgs),
    /// Run every stage in order.
    RunAll(StageArgs),
    /// Per-stage completion table with cumulative cost.
    Status(StageArgs),
    /// API usage totals versus reference and baseline costs.
    CostReport {
        #[command(flatten)]
        stage: StageArgs,
        /// Optional budget file (JSON) to check caps against.
        #[arg(long)]
        budget_file: Option<PathBuf>,
    },
    /// Fit score = a + b·log10(n) to a CSV of (n, score) points.
    ScalingFit {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn load_config(args: &StageArgs) -> anyhow::Result<Config> {
    match &args.config {
        Some(path) => Ok(Config::load(path)?),
        None => {
            let config = Config::default();
            config.validate()?;
            Ok(config)
        }
    }
}

async fn run_one(args: &StageArgs, stage: StageName) -> anyhow::Result<()> {
    let config = load_config(args)?;
    let workdir = Workdir::new(&args.workdir);
    let manifest = pipeline::run_stage(&config, &workdir, stage).await?;
    let records = manifest.counts.get("records").copied().unwrap_or(0);
    println!("{stage}: complete ({records} records)");
    Ok(())
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Topics {
            stage,
            file,
            n,
            max_depth,
            seed,
        } => {
            if let Some(file) = file {
                let pool = TopicPool::from_file(&file, max_depth)?;
                for topic in pool.sample(n, seed)? {
                    println!("{topic}");
                }
            } else {
                run_one(&stage, StageName::Topics).await?;
            }
        }
        Command::Brainstorm(a) => run_one(&a, StageName::Brainstorm).await?,
        Command::Seed(a) => run_one(&a, StageName::Seed).await?,
        Command::ExportSft(a) => run_one(&a, StageName::ExportSft).await?,
        Command::GenerateRoot(a) => run_one(&a, StageName::GenerateRoot).await?,
        Command::Judge(a) => run_one(&a, StageName::Judge).await?,
        Command::ExportDpo(a) => run_one(&a, StageName::ExportDpo).await?,
        Command::ReviseSignal(a) => run_one(&a, StageName::ReviseSignal).await?,
        Command::ExportRevisorSft(a) => run_one(&a, StageName::ExportRevisorSft).await?,
        Command::Synth(a) => run_one(&a, StageName::Synth).await?,
        Command::Revise(a) => run_one(&a, StageName::Revise).await?,
        Command::Dedup {
            stage,
            threshold,
            k,
            bands,
        } => {
            let mut config = load_config(&stage)?;
            if let Some(t) = threshold {
                config.dedup.threshold = t;
            }
            if let Some(k) = k {
                config.dedup.k = k;
                config.dedup.rows = k / config.dedup.bands.max(1);
            }
            if let Some(b) = bands {
                config.dedup.bands = b;
                config.dedup.rows = config.dedup.k / b.max(1);
            }
            let workdir = Workdir::new(&stage.workdir);
            let manifest = pipeline::run_stage(&config, &workdir, StageName::Dedup).await?;
            println!(
                "dedup: complete ({} kept, {} removed)",
                manifest.counts.get("records").copied().unwrap_or(0),
                manifest.counts.get("removed").copied().unwrap_or(0),
            );
        }
        Command::Mix(a) => run_one(&a, StageName::Mix).await?,
        Command::ExportTrain(a) => run_one(&a, StageName::ExportTrain).await?,
        Command::RunAll(a) => {
            let config = load_config(&a)?;
            let workdir = Workdir::new(&a.workdir);
            for manifest in pipeline::run_all(&config, &workdir).await? {
                let records = manifest.counts.get("records").copied().unwrap_or(0);
                println!("{}: complete ({records} records)", manifest.stage);
            }
        }
        Command::Status(a) => {
            let config = load_config(&a)?;
            let workdir = Workdir::new(&a.workdir);
            let table = pipeline::status(&config, &workdir)?;
            let usage = pipeline::load_ledger_snapshot(&workdir)?;
            print!("{}", pipeline::status_table(&table, &usage));
        }
        Command::CostReport { stage, budget_file } => {
            let workdir = Workdir::new(&stage.workdir);
            let snapshot = pipeline::load_ledger_snapshot(&workdir)?;
            let budget = match budget_file {
                Some(path) => {
                    let body = std::fs::read_to_string(&path)?;
                    Some(serde_json::from_str::<Budget>(&body)?)
                }
                None => None,
            };
            let report = ledger::report(&snapshot, budget);
            print!("{}", report.to_table());
        }
        Command::ScalingFit { input } => {
            let body = std::fs::read_to_string(&input)?;
            let points = scaling::parse_points_csv(&body)?;
            let fit = scaling::fit(&points)?;
            let sizes: Vec<u64> = points.iter().map(|p| p.n).collect();
            print!("{}", scaling::fitted_csv(&fit, &sizes)?);
            println!(
                "score = {:.6} + {:.6} * log10(n)   (r^2 = {:.6}, {} points)",
                fit.intercept, fit.slope, fit.r_squared, fit.n_points
            );
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
