//! `medrobust`: calibrate, perturb, score and report.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use medrobust_core::aggregate::ReportOptions;
use medrobust_core::calibrate::DEFAULT_MAX_ITERATIONS;
use medrobust_core::pipeline::{self, RunConfig, ScoreRequest};
use medrobust_core::{Error, Registry, SeverityLevel, Task};

#[derive(Debug, Parser)]
#[command(name = "medrobust", version, about = "SSIM-calibrated perturbations and robustness reports for medical images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fill the calibration cache for every sample, perturbation and level.
    Calibrate(RunArgs),
    /// Write perturbed images, the ledger and co-transformed ground truth.
    Perturb(PerturbArgs),
    /// Score a predictions file against ground truth.
    Score(ScoreArgs),
    /// Build the robustness report from metric-record files.
    Report(ReportArgs),
    /// Check manifests without running anything.
    ValidateManifest(ValidateArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Dataset manifest (repeatable).
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long, default_value = "calibration.json")]
    cache: PathBuf,
    /// Severity levels, e.g. `1,2,3` or `1-5`.
    #[arg(long, default_value = "1-5", value_parser = parse_levels)]
    levels: Levels,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated perturbation ids (default: all applicable).
    #[arg(long, value_delimiter = ',')]
    perturbations: Option<Vec<String>>,
    /// Calibrate on a fixed 32-image subsample and apply the median intensity to all images.
    #[arg(long)]
    dataset_level_calibration: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iterations: u32,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Score geometric perturbations against untransformed ground truth.
    #[arg(long)]
    no_co_transform: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// segmentation, vqa, grounding or captioning.
    #[arg(long, value_parser = parse_task)]
    task: Task,
    #[arg(long)]
    model: String,
    #[arg(long)]
    strategy: String,
    #[arg(long)]
    dataset: String,
    /// Perturbation ledger, used to flag unconverged conditions.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Output metric-record file (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Metric-record file (repeatable).
    #[arg(long = "records", required = true)]
    records: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Whether conditions whose calibration did not converge count.
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    include_unconverged: bool,
    #[arg(long, default_value_t = 15)]
    top_k: usize,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    perturbations: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
struct Levels(Vec<u8>);

fn parse_levels(s: &str) -> Result<Levels, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (a, b) = match part.split_once('-') {
            Some((a, b)) => (a, b),
            None => (part, part),
        };
        let a: u8 = a.trim().parse().map_err(|_| format!("bad level `{part}`"))?;
        let b: u8 = b.trim().parse().map_err(|_| format!("bad level `{part}`"))?;
        for l in a..=b {
            SeverityLevel::new(l).map_err(|e| e.to_string())?;
            if !out.contains(&l) {
                out.push(l);
            }
        }
    }
    if out.is_empty() {
        return Err("no levels given".into());
    }
    out.sort_unstable();
    Ok(Levels(out))
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            master_seed: self.seed,
            levels: self
                .levels
                .0
                .iter()
                .map(|&l| SeverityLevel::new(l).expect("validated by the parser"))
                .collect(),
            perturbations: self.perturbations.clone(),
            workers: self.workers,
            cache_path: self.cache.clone(),
            include_unconverged: true,
            dataset_level: self.dataset_level_calibration,
            max_iterations: self.max_iterations,
            ..Default::default()
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Calibrate(args) => {
            let config = args.config();
            let manifests = pipeline::load_manifests(&args.manifests, &config)?;
            let summary = pipeline::cmd_calibrate(&manifests, &config)?;
            print!("{summary}");
            println!("cache: {}", config.cache_path.display());
        }
        Command::Perturb(args) => {
            let mut config = args.run.config();
            config.out_dir = args.out.clone();
            config.co_transform = !args.no_co_transform;
            let manifests = pipeline::load_manifests(&args.run.manifests, &config)?;
            let summary = pipeline::cmd_perturb(&manifests, &config)?;
            print!("{summary}");
            println!("ledger: {}", config.out_dir.join(pipeline::LEDGER_FILE).display());
        }
        Command::Score(args) => {
            let req = ScoreRequest {
                predictions: args.predictions,
                ground_truth: args.ground_truth,
                task: args.task,
                model: args.model,
                strategy: args.strategy,
                dataset: args.dataset,
                ledger: args.ledger,
                registry: Registry::builtin(),
            };
            let outcome = pipeline::score_to_file(&req, &args.out)?;
            print!("{outcome}");
            println!("records: {}", args.out.display());
        }
        Command::Report(args) => {
            let options = ReportOptions {
                include_unconverged: args.include_unconverged,
                top_k: args.top_k,
            };
            let report = pipeline::cmd_report(&args.records, &args.out, options)
                .with_context(|| format!("building report in {}", args.out.display()))?;
            for n in &report.notices {
                println!("note: {n}");
            }
            println!("{}", report.ranking_summary);
            println!("report: {}", args.out.display());
        }
        Command::ValidateManifest(args) => {
            let config = RunConfig {
                perturbations: args.perturbations,
                ..Default::default()
            };
            let manifests = pipeline::load_manifests(&args.manifests, &config)?;
            for m in &manifests {
                println!("{}: {} samples, modality {}, ok", m.dataset_id, m.samples.len(), m.modality.as_str());
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
