use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use surgiatm::darkprior::dcp_restore;
use surgiatm::dataset::{list_frames, pair_frames};
use surgiatm::image::save_image;
use surgiatm::metrics::{evaluate_pair, FrameMetrics, MetricRun};
use surgiatm::{atmlayer, Error, ImageBuffer, Raster, ToyPredictor, TrainMode};

use crate::config::{set, RunConfig};
use crate::frames::{self, Pool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Dcp,
    Surgiatm,
}

#[derive(Debug, Args)]
pub struct DesmokeArgs {
    /// Directory of smoky frames.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory for restored frames (same file names as the input).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Ground-truth frames paired by file name; enables the metrics report.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dcp")]
    method: Method,
    /// Uniform ρ in [0, 1] for every pixel.
    #[arg(long, group = "rho")]
    rho_const: Option<f64>,
    /// Directory of ρ maps paired by file name (grayscale or RGB, 1.0 = white).
    #[arg(long, group = "rho")]
    rho_dir: Option<PathBuf>,
    /// Toy predictor JSON written by `train-demo` in surgiatm mode.
    #[arg(long, group = "rho")]
    model: Option<PathBuf>,
    /// Dark-channel floor η >= 0 [default: 0.1].
    #[arg(long)]
    eta: Option<f64>,
    /// Odd dark-channel window size [default: 15].
    #[arg(long)]
    z: Option<usize>,
    /// Transmission floor of the DCP restorer [default: 0.1].
    #[arg(long)]
    t0: Option<f64>,
    /// Keep native frame sizes instead of resizing.
    #[arg(long)]
    no_resize: bool,
    /// Skip the metrics report even when truth is given.
    #[arg(long)]
    no_metrics: bool,
    /// Where to write the metrics JSON; defaults to `<output>/metrics.json`.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

impl DesmokeArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.input_dir, self.input.clone().map(Some));
        set(&mut cfg.output_dir, self.output.clone().map(Some));
        set(&mut cfg.truth_dir, self.truth.clone().map(Some));
        set(&mut cfg.eta, self.eta);
        set(&mut cfg.z, self.z);
        set(&mut cfg.t0, self.t0);
        if self.no_resize {
            cfg.resize = None;
        }
        if self.no_metrics {
            cfg.metrics = false;
        }
    }
}

/// Where the layer's `ρ` comes from.
enum RhoSource {
    Constant(f64),
    Maps(PathBuf),
    Model(ToyPredictor),
}

impl RhoSource {
    fn from_args(args: &DesmokeArgs) -> anyhow::Result<Self> {
        if let Some(v) = args.rho_const {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Argument(format!("--rho-const must lie in [0, 1], got {v}")).into());
            }
            return Ok(RhoSource::Constant(v));
        }
        if let Some(dir) = &args.rho_dir {
            return Ok(RhoSource::Maps(dir.clone()));
        }
        if let Some(path) = &args.model {
            let model: ToyPredictor = frames::read_json(path)?;
            if model.mode != TrainMode::Surgiatm {
                return Err(Error::Argument(format!(
                    "{} is a direct-mode model and yields no ρ",
                    path.display()
                ))
                .into());
            }
            return Ok(RhoSource::Model(model));
        }
        Err(Error::Argument("method surgiatm needs --rho-const, --rho-dir or --model".into()).into())
    }
}

fn rho_map(path: &Path, frame: &ImageBuffer) -> surgiatm::Result<Raster> {
    let map = frames::load(path, Some((frame.width(), frame.height())))?;
    let data = match map.channels() {
        1 => map.data().iter().flat_map(|&v| [v; 3]).collect(),
        _ => map.into_data(),
    };
    Raster::new(frame.shape(), data)
}

fn restore(
    frame: &ImageBuffer,
    name: &str,
    method: Method,
    rho: Option<&RhoSource>,
    cfg: &RunConfig,
) -> surgiatm::Result<ImageBuffer> {
    match (method, rho) {
        (Method::Dcp, _) => dcp_restore(frame, &cfg.dcp()),
        (Method::Surgiatm, Some(RhoSource::Constant(v))) => {
            let state = atmlayer::forward(frame, &Raster::filled(frame.shape(), *v), &cfg.atm(false))?;
            ImageBuffer::from_clamped(frame.shape(), state.reconstruction().to_vec())
        }
        (Method::Surgiatm, Some(RhoSource::Maps(dir))) => {
            let rho = rho_map(&dir.join(name), frame)?;
            let state = atmlayer::forward(frame, &rho, &cfg.atm(false))?;
            ImageBuffer::from_clamped(frame.shape(), state.reconstruction().to_vec())
        }
        (Method::Surgiatm, Some(RhoSource::Model(model))) => model.predict(frame, &cfg.atm(true)),
        (Method::Surgiatm, None) => unreachable!("rho source resolved before restoring"),
    }
}

pub fn run(args: DesmokeArgs, mut cfg: RunConfig, pool: &Pool) -> anyhow::Result<()> {
    args.apply(&mut cfg);
    cfg.validate()?;
    let input = cfg.input()?.to_path_buf();
    let output = cfg.output()?.to_path_buf();
    let rho = match args.method {
        Method::Dcp => None,
        Method::Surgiatm => Some(RhoSource::from_args(&args)?),
    };
    let truth = cfg.truth_dir.clone().filter(|_| cfg.metrics);
    let mut paired: Vec<&Path> = Vec::new();
    if let Some(t) = &truth {
        paired.push(t);
    }
    if let Some(RhoSource::Maps(dir)) = &rho {
        paired.push(dir);
    }
    let rows = if paired.is_empty() {
        let listed = list_frames(&input)?;
        if listed.is_empty() {
            return Err(Error::Pairing { offenders: vec![format!("{}: no frames", input.display())] }.into());
        }
        listed.into_iter().map(|p| vec![p]).collect()
    } else {
        pair_frames(&input, &paired)?
    };
    let mut inputs: Vec<&Path> = vec![&input];
    inputs.extend(&paired);
    frames::prepare_output(&output, &inputs)?;

    let resize = cfg.resize_to();
    let scored = pool.map(&rows, |row| {
        let name = frames::file_name(&row[0]);
        let frame = frames::load_rgb(&row[0], resize)?;
        let restored = restore(&frame, &name, args.method, rho.as_ref(), &cfg)
            .with_context(|| format!("restoring {name}"))?;
        save_image(&restored, output.join(&name))?;
        match &truth {
            Some(_) => {
                let clean = frames::load_rgb(&row[1], resize)?;
                let report = evaluate_pair(&frames::quantized(&restored), &clean)?;
                Ok(Some(FrameMetrics { frame: name, report }))
            }
            None => Ok(None),
        }
    })?;

    if truth.is_some() {
        let run = MetricRun::new(scored.into_iter().flatten().collect())?;
        let path = args.metrics_out.clone().unwrap_or_else(|| output.join("metrics.json"));
        frames::write_json(&path, &run)?;
        println!(
            "{} frames: rmse {:.6} psnr {:.3} ssim {:.4} ciede2000 {:.4}",
            run.frames.len(),
            run.aggregate.rmse,
            run.aggregate.psnr,
            run.aggregate.ssim,
            run.aggregate.ciede2000
        );
    } else {
        println!("{} frames restored", rows.len());
    }
    Ok(())
}
