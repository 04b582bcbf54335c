use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use surgiatm::dataset::pair_frames;
use surgiatm::image::save_image;
use surgiatm::smokesim::{synthetic_set, SmokeSynthConfig};
use surgiatm::toytrain::{self, TrainOutcome};
use surgiatm::{Error, ImageBuffer, LossKind, MetricReport, SurgiAtmConfig, ToyPredictor, TrainConfig, TrainMode};

use crate::config::{set, RunConfig};
use crate::frames::{self, Pool};

/// Training data: a `synth`-style directory or an in-memory synthetic set.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding `smoky/` and `clean/` frames paired by file name.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic frame count when no data directory is given.
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Synthetic frame side length when no data directory is given.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

/// Optimizer settings shared by `train-demo` and `ablate`.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "surgiatm")]
    pub mode: TrainMode,
    #[arg(long, default_value = "l1")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    /// Step size; defaults to the tuned rate for the mode and loss.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::for_mode(self.mode, self.loss);
        cfg.epochs = self.epochs;
        cfg.seed = seed;
        set(&mut cfg.learning_rate, self.lr);
        cfg
    }
}

pub type Pairs = Vec<(ImageBuffer, ImageBuffer)>;

/// `(smoky, clean)` training pairs at native size.
pub fn load_pairs(data: &DataArgs, seed: u64, pool: &Pool) -> anyhow::Result<Pairs> {
    match &data.data {
        Some(dir) => {
            let rows = pair_frames(&dir.join("smoky"), &[&dir.join("clean")])?;
            pool.map(&rows, |row| Ok((frames::load_rgb(&row[0], None)?, frames::load_rgb(&row[1], None)?)))
        }
        None => {
            if data.frames == 0 || data.size == 0 {
                return Err(Error::Argument("--frames and --size must be positive".into()).into());
            }
            let set = synthetic_set(data.frames, data.size, data.size, seed, &SmokeSynthConfig::default())?;
            Ok(set.into_iter().map(|f| (f.smoky, f.clean)).collect())
        }
    }
}

/// Trains one model and scores its clamped predictions on the training pairs.
pub fn train_and_score(
    pairs: &Pairs,
    train: &TrainConfig,
    atm: &SurgiAtmConfig,
) -> surgiatm::Result<(TrainOutcome, MetricReport)> {
    let outcome = toytrain::train(pairs, train, atm)?;
    let report = toytrain::evaluate(&outcome.model, pairs, atm)?;
    Ok((outcome, report))
}

#[derive(Debug, Args)]
pub struct TrainDemoArgs {
    /// Receives `loss_trace.csv`, `model.json`, `summary.json` and `triptychs/`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Dark-channel floor η >= 0 [default: 0.1].
    #[arg(long)]
    eta: Option<f64>,
    /// Odd dark-channel window size [default: 15].
    #[arg(long)]
    z: Option<usize>,
    /// Number of smoky | restored | clean panels to write.
    #[arg(long, default_value_t = 4)]
    triptychs: usize,
}

#[derive(Debug, Serialize)]
struct TraceRow {
    epoch: usize,
    loss: f64,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub mode: TrainMode,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub eta: f64,
    pub z: usize,
    pub frames: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub rmse: f64,
    pub metrics: MetricReport,
}

fn triptych(smoky: &ImageBuffer, restored: &ImageBuffer, clean: &ImageBuffer) -> ImageBuffer {
    let w = smoky.width();
    let panels = [smoky, restored, clean];
    ImageBuffer::from_fn(3 * w, smoky.height(), 3, |x, y, c| panels[x / w].get(x % w, y, c))
}

fn write_triptychs(dir: &Path, model: &ToyPredictor, pairs: &Pairs, atm: &SurgiAtmConfig, count: usize, pool: &Pool) -> anyhow::Result<()> {
    frames::create_dir(dir)?;
    let shown: Vec<(usize, &(ImageBuffer, ImageBuffer))> = pairs.iter().take(count).enumerate().collect();
    pool.map(&shown, |&(i, (smoky, clean))| {
        let restored = model.predict(smoky, atm)?;
        save_image(&triptych(smoky, &restored, clean), dir.join(format!("{i:04}.png")))?;
        Ok(())
    })?;
    Ok(())
}

pub fn run(args: TrainDemoArgs, mut cfg: RunConfig, pool: &Pool) -> anyhow::Result<()> {
    set(&mut cfg.output_dir, args.output.clone().map(Some));
    set(&mut cfg.eta, args.eta);
    set(&mut cfg.z, args.z);
    set(&mut cfg.seed, args.train.seed);
    cfg.validate()?;
    let output = cfg.output()?.to_path_buf();
    let mut inputs: Vec<&Path> = Vec::new();
    if let Some(d) = &args.data.data {
        inputs.push(d);
    }
    frames::prepare_output(&output, &inputs)?;

    let pairs = load_pairs(&args.data, cfg.seed, pool)?;
    let train = args.train.config(cfg.seed);
    let atm = cfg.atm(true);
    let (outcome, report) = train_and_score(&pairs, &train, &atm)?;

    let trace: Vec<TraceRow> = outcome
        .loss_trace
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| TraceRow { epoch, loss })
        .collect();
    frames::write_csv(&output.join("loss_trace.csv"), &trace)?;
    frames::write_json(&output.join("model.json"), &outcome.model)?;
    write_triptychs(&output.join("triptychs"), &outcome.model, &pairs, &atm, args.triptychs, pool)?;
    let summary = Summary {
        mode: train.mode,
        loss: train.loss,
        learning_rate: train.learning_rate,
        epochs: train.epochs,
        seed: train.seed,
        eta: cfg.eta,
        z: cfg.z,
        frames: pairs.len(),
        initial_loss: outcome.loss_trace[0],
        final_loss: *outcome.loss_trace.last().expect("trace has epochs + 1 entries"),
        rmse: report.rmse,
        metrics: report,
    };
    frames::write_json(&output.join("summary.json"), &summary)?;
    println!(
        "{:?} {:?}: loss {:.6} -> {:.6}, rmse {:.6} over {} frames",
        summary.mode, summary.loss, summary.initial_loss, summary.final_loss, summary.rmse, summary.frames
    );
    Ok(())
}
