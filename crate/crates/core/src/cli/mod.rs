//! Command-line front end: `generate`, `eval`, `postproc` and `selftest`.
//!
//! Data goes to files only; progress and errors go to stderr. Every
//! command exits non-zero when anything failed.

pub mod bank;
pub mod eval;
pub mod fixtures;
pub mod generate;
pub mod postproc;
pub mod selftest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Result;
use crate::segmetrics::Hd95Mode;
use crate::synthgen::config::GenConfig;

#[derive(Debug, Parser)]
#[command(name = "strokesynth", version, about = "Synthetic stroke MRI generation and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic training pairs from healthy and lesion banks.
    Generate(GenerateArgs),
    /// Score predicted lesion masks against ground truth.
    Eval(EvalArgs),
    /// Merge, ensemble or pseudo-label stacks of network outputs.
    Postproc(PostprocArgs),
    /// Check the numerical core against brute-force references.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest of healthy posterior stacks.
    #[arg(long, required_unless_present = "replay")]
    pub healthy: Option<PathBuf>,
    /// Manifest of lesion masks.
    #[arg(long, required_unless_present = "replay")]
    pub lesions: Option<PathBuf>,
    /// Manifest of real image/label pairs mixed into the schedule.
    #[arg(long)]
    pub real: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also write the warped soft posterior stack of each sample.
    #[arg(long)]
    pub write_soft: bool,
    #[arg(long)]
    pub gzip: bool,
    /// Regenerate the single sample described by this provenance file.
    #[arg(long, conflicts_with_all = ["config", "healthy", "lesions", "real", "count"])]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Hd95Arg {
    Pooled,
    MaxOfSides,
}

impl From<Hd95Arg> for Hd95Mode {
    fn from(a: Hd95Arg) -> Self {
        match a {
            Hd95Arg::Pooled => Hd95Mode::Pooled,
            Hd95Arg::MaxOfSides => Hd95Mode::MaxOfSides,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// JSONL lines `{"case_id", "pred", "gt", "modality"?}`; otherwise
    /// files are paired by name.
    #[arg(long)]
    pub pairing: Option<PathBuf>,
    /// Per-case CSV; summaries are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "unknown")]
    pub modality: String,
    /// Foreground label value; any non-zero voxel when omitted.
    #[arg(long)]
    pub label: Option<u32>,
    #[arg(long, value_enum, default_value_t = Hd95Arg::Pooled)]
    pub hd95: Hd95Arg,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct PostprocArgs {
    #[arg(long, value_enum)]
    pub mode: postproc::Mode,
    /// Input stack manifests, in order.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Feature stack manifest for `dpl`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output stack manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::postproc::UPL_THRESHOLD)]
    pub upl_threshold: f64,
    #[arg(long)]
    pub gzip: bool,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Smaller fixtures.
    #[arg(long)]
    pub quick: bool,
    /// Corrupt the fixture of one named check.
    #[arg(long)]
    pub inject_fault: Option<String>,
}

fn run_generate(a: GenerateArgs) -> Result<bool> {
    if let Some(p) = &a.replay {
        generate::replay(p, &a.out, a.jobs)?;
        eprintln!("replayed {} into {}", p.display(), a.out.display());
        return Ok(true);
    }
    let config = match &a.config {
        Some(p) => GenConfig::from_file(p)?,
        None => GenConfig::default(),
    };
    let opts = generate::GenerateOptions {
        config,
        healthy: a.healthy,
        lesions: a.lesions,
        real: a.real,
        out: a.out,
        seed: a.seed,
        count: a.count,
        jobs: a.jobs,
        write_soft: a.write_soft,
        gzip: a.gzip,
    };
    let failures = generate::generate(&opts)?;
    for (i, e) in &failures {
        eprintln!("sample {i}: {e}");
    }
    eprintln!(
        "generated {} of {} samples in {}",
        opts.count - failures.len() as u64,
        opts.count,
        opts.out.display()
    );
    Ok(failures.is_empty())
}

fn run_eval(a: EvalArgs) -> Result<bool> {
    let o = eval::EvalOptions {
        pred_dir: a.pred,
        gt_dir: a.gt,
        pairing: a.pairing,
        out: a.out,
        modality: a.modality,
        label: a.label,
        hd95: a.hd95.into(),
        jobs: a.jobs,
    };
    let r = eval::evaluate(&o)?;
    for (id, e) in &r.errors {
        eprintln!("case {id}: {e}");
    }
    eprintln!("evaluated {} cases, {} errors", r.reports.len(), r.errors.len());
    Ok(r.errors.is_empty())
}

fn run_postproc(a: PostprocArgs) -> Result<bool> {
    postproc::run(&postproc::PostprocOptions {
        mode: a.mode,
        inputs: a.inputs,
        features: a.features,
        out: a.out,
        upl_threshold: a.upl_threshold,
        gzip: a.gzip,
    })?;
    Ok(true)
}

fn run_selftest(a: SelftestArgs) -> Result<bool> {
    let results = selftest::run(a.quick, a.inject_fault.as_deref())?;
    for r in &results {
        if r.passed {
            eprintln!("PASS {:<12} ({} ms)", r.name, r.millis);
        } else {
            eprintln!("FAIL {:<12} ({} ms): {}", r.name, r.millis, r.detail);
        }
    }
    Ok(results.iter().all(|r| r.passed))
}

/// Runs a parsed command; `Ok(false)` means it completed with failures.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate(a) => run_generate(a),
        Command::Eval(a) => run_eval(a),
        Command::Postproc(a) => run_postproc(a),
        Command::Selftest(a) => run_selftest(a),
    }
}
