//! Command-line surface for taxonomy-adaptive label fusion: generate or
//! ingest datasets, run the reassignment pipeline, and score the results.

mod backends;
mod chart;
mod dataset;
mod evalcmd;
mod fuse;
mod precompute;
mod sweep;
mod synth;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use taxfuse_core::label_space::{emit_context_prompt, TaxonomyConfig};

/// Region-level label reassignment across segmentation taxonomies.
#[derive(Debug, Parser)]
#[command(name = "taxfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fuse coarse predictions and mask proposals into fine pseudo-labels.
    Fuse(fuse::FuseArgs),
    /// Score predicted label maps against ground truth.
    Eval(evalcmd::EvalArgs),
    /// Decide regions once, then render and score several thresholds.
    Sweep(sweep::SweepArgs),
    /// Check a taxonomy mapping file; exit 1 on violations, 2 on bad JSON.
    Validate {
        /// Taxonomy mapping JSON.
        taxonomy: PathBuf,
    },
    /// Generate synthetic scene bundles with exact ground truth.
    Synth(synth::SynthArgs),
    /// Encode region features once for later precomputed-backend runs.
    Precompute(precompute::PrecomputeArgs),
    /// Print the description-generation prompt for one class.
    Prompt {
        /// Class name used as the head noun.
        #[arg(long)]
        class: String,
        /// Scene context the descriptions should assume.
        #[arg(long, default_value = "street scene")]
        scene: String,
    },
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Fuse(args) => fuse::run(args),
        Command::Eval(args) => evalcmd::run(args),
        Command::Sweep(args) => sweep::run(args),
        Command::Validate { taxonomy } => cmd_validate(&taxonomy),
        Command::Synth(args) => synth::run(args),
        Command::Precompute(args) => precompute::run(args),
        Command::Prompt { class, scene } => {
            print!("{}", emit_context_prompt(&class, &scene)?);
            Ok(0)
        }
    }
}

fn cmd_validate(path: &Path) -> Result<u8> {
    let config = match TaxonomyConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(2);
        }
    };
    let report = config.validate();
    if report.is_empty() {
        println!(
            "{}: ok ({} -> {}, {} target classes, {} known)",
            path.display(),
            config.source_space.name,
            config.target_space.name,
            config.target_space.classes.len(),
            config.known_split.len()
        );
        Ok(0)
    } else {
        for v in report.violations() {
            println!("{v}");
        }
        Ok(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
