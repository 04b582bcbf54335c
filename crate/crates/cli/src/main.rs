//! `surgiatm`: batch desmoking, synthesis, analysis and checks.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid argument or config,
//! 3 unpaired frames, 4 I/O or unreadable image, 5 failed check.

mod commands;
mod config;
mod exit;
mod frames;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{ablate, analyze, desmoke, gradcheck, metrics, synth, train_demo};
use crate::config::RunConfig;
use crate::frames::Pool;

/// glibc returns large frame buffers to the kernel on free, so every frame
/// pays fresh page faults; mimalloc keeps them mapped.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Debug, Parser)]
#[command(name = "surgiatm", version, about = "Surgical smoke removal through an atmosphere-model layer")]
struct Cli {
    /// Frame-level worker threads; outputs do not depend on this.
    #[arg(long, global = true, env = "SURGIATM_WORKERS")]
    workers: Option<usize>,
    /// Flat JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Restore smoky frames with the DCP restorer or the layer.
    Desmoke(desmoke::DesmokeArgs),
    /// Generate paired clean/smoky frames with Perlin smoke.
    Synth(synth::SynthArgs),
    /// Fit error statistics and the optimal gate per dark-channel bin.
    Analyze(analyze::AnalyzeArgs),
    /// Train the toy predictor over an (eta, z) grid.
    Ablate(ablate::AblateArgs),
    /// Finite-difference check of the layer's gradients.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Train the toy predictor once and write its artifacts.
    TrainDemo(train_demo::TrainDemoArgs),
    /// Score restored frames against ground truth.
    Metrics(metrics::MetricsArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let pool = Pool::new(cli.workers.unwrap_or_else(frames::default_workers))?;
    match cli.command {
        Command::Desmoke(args) => desmoke::run(args, cfg, &pool),
        Command::Synth(args) => synth::run(args, cfg, &pool),
        Command::Analyze(args) => analyze::run(args, cfg, &pool),
        Command::Ablate(args) => ablate::run(args, cfg, &pool),
        Command::Gradcheck(args) => gradcheck::run(args, cfg),
        Command::TrainDemo(args) => train_demo::run(args, cfg, &pool),
        Command::Metrics(args) => metrics::run(args, cfg, &pool),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, matching exit::ARGUMENT
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit::code(&err))
        }
    }
}
