use std::path::PathBuf;

use clap::Args;
use surgiatm::dataset::pair_frames;
use surgiatm::metrics::{evaluate_pair, FrameMetrics, MetricRun};
use surgiatm::Error;

use crate::config::{set, RunConfig};
use crate::frames::{self, Pool};

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Restored frames.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth frames paired by file name.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    no_resize: bool,
}

pub fn run(args: MetricsArgs, mut cfg: RunConfig, pool: &Pool) -> anyhow::Result<()> {
    set(&mut cfg.truth_dir, args.truth.clone().map(Some));
    if args.no_resize {
        cfg.resize = None;
    }
    cfg.validate()?;
    let truth = cfg
        .truth_dir
        .clone()
        .ok_or_else(|| Error::Argument("missing --truth directory".into()))?;
    let rows = pair_frames(&args.pred, &[&truth])?;
    let resize = cfg.resize_to();
    let scored = pool.map(&rows, |row| {
        let pred = frames::load_rgb(&row[0], resize)?;
        let clean = frames::load_rgb(&row[1], resize)?;
        let report = evaluate_pair(&pred, &clean)?;
        Ok(FrameMetrics { frame: frames::file_name(&row[0]), report })
    })?;
    let run = MetricRun::new(scored)?;
    match &args.output {
        Some(path) => frames::write_json(path, &run)?,
        None => println!("{}", serde_json::to_string_pretty(&run)?),
    }
    Ok(())
}
