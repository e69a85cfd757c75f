//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error. Failures
//! print one line to stderr, prefixed `facl: config error:` or
//! `facl: runtime error:`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::encoder::{read_checkpoint, write_checkpoint};
use crate::error::{Error, Result};
use crate::protocol::{load_data, run_ablation_grid, run_pipeline, sweep_delta, RunOutcome};
use crate::report;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "facl", version, about = "Few-shot class-incremental learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Base training plus all incremental sessions.
    Train(RunArgs),
    /// Every variant listed under `ablations`.
    Ablate(RunArgs),
    /// One run per value of `sweep_deltas` and seed.
    SweepDelta(RunArgs),
    /// Extractor features of every store sample as CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Config file; defaults apply to every missing key.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Checkpoint to load; defaults to the config's checkpoint in its output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output CSV; defaults to `embeddings.csv` in the output directory.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

/// metrics.json, metrics.csv, confusion.csv and losses.csv of one run.
fn write_run_reports(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    prepare_dir(dir)?;
    write(&dir.join("metrics.json"), &report::metrics_json(&outcome.metrics))?;
    write(&dir.join("metrics.csv"), &report::metrics_csv(&outcome.metrics))?;
    let last = outcome.sessions.last().ok_or_else(|| Error::Session("run has no sessions".into()))?;
    let classes = outcome.state.classes().last().map_or(0, |&c| c + 1);
    write(&dir.join("confusion.csv"), &report::confusion_csv(&last.evaluation.confusion(classes)))?;
    let mut losses = String::from("epoch,loss\n");
    for (e, l) in outcome.epoch_losses.iter().enumerate() {
        losses.push_str(&format!("{e},{l}\n"));
    }
    write(&dir.join("losses.csv"), &losses)
}

pub fn train(cfg: &RunConfig) -> Result<RunOutcome> {
    prepare_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join("manifest.cfg"), &cfg.to_manifest())?;
    let outcome = run_pipeline(cfg)?;
    write_run_reports(&cfg.out_dir, &outcome)?;
    write_checkpoint(&outcome.params, &cfg.out_dir.join(&cfg.checkpoint))?;
    Ok(outcome)
}

fn variant_dir(name: &str) -> String {
    name.replace(['+', ':'], "_")
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    prepare_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join("manifest.cfg"), &cfg.to_manifest())?;
    let rows = run_ablation_grid(cfg)?;
    for r in &rows {
        let dir = cfg.out_dir.join(variant_dir(&r.variant.to_string()));
        prepare_dir(&dir)?;
        write(&dir.join("metrics.json"), &report::metrics_json(&r.metrics))?;
        write(&dir.join("metrics.csv"), &report::metrics_csv(&r.metrics))?;
    }
    write(&cfg.out_dir.join("ablation.csv"), &report::ablation_csv(&rows))
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    prepare_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join("manifest.cfg"), &cfg.to_manifest())?;
    let rows = sweep_delta(&cfg.sweep_deltas, cfg)?;
    for r in &rows {
        for run in &r.runs {
            let dir = cfg.out_dir.join(format!("delta_{}", r.delta)).join(format!("seed_{}", run.config.seed));
            write_run_reports(&dir, run)?;
        }
    }
    write(&cfg.out_dir.join("sweep.csv"), &report::sweep_csv(&rows))
}

pub fn export(args: &ExportArgs) -> Result<PathBuf> {
    let cfg = resolve(&args.run)?;
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join(&cfg.checkpoint));
    let params = read_checkpoint(&ckpt)?;
    let store = load_data(&cfg)?;
    let file = args.file.clone().unwrap_or_else(|| cfg.out_dir.join("embeddings.csv"));
    if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    report::export_embeddings(&params, &store, &cfg.dataset_spec(), &file)?;
    Ok(file)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(&resolve(a)?).map(|_| ()),
        Command::Ablate(a) => ablate(&resolve(a)?),
        Command::SweepDelta(a) => sweep(&resolve(a)?),
        Command::ExportEmbeddings(a) => export(a).map(|_| ()),
    }
}

/// Runs a parsed command and maps the outcome to an exit code, printing the
/// diagnostic for failures.
pub fn run(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let (code, kind) = match e {
                Error::Config(_) => (EXIT_CONFIG, "config error"),
                _ => (EXIT_RUNTIME, "runtime error"),
            };
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("facl: {kind}: {msg}");
            code
        }
    }
}
