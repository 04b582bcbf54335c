use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use surgiatm::image::save_image;
use surgiatm::smokesim::{frame_seeds, synthetic_frame, FrameSmoke, SmokeSynthConfig};
use surgiatm::Error;

use crate::config::{set, RunConfig};
use crate::frames::{self, Pool};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Root directory; receives `clean/`, `smoky/`, `density/` and `manifest.json`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct ManifestFrame {
    name: String,
    clean_seed: u64,
    smoke: FrameSmoke,
}

#[derive(Debug, Serialize)]
struct Manifest {
    seed: u64,
    width: usize,
    height: usize,
    config: SmokeSynthConfig,
    frames: Vec<ManifestFrame>,
}

pub fn frame_name(index: usize) -> String {
    format!("{index:04}.png")
}

pub fn run(args: SynthArgs, mut cfg: RunConfig, pool: &Pool) -> anyhow::Result<()> {
    set(&mut cfg.output_dir, args.output.clone().map(Some));
    set(&mut cfg.seed, args.seed);
    if args.count == 0 || args.width == 0 || args.height == 0 {
        return Err(Error::Argument("count, width and height must be positive".into()).into());
    }
    let root = cfg.output()?.to_path_buf();
    let dirs = ["clean", "smoky", "density"].map(|d| root.join(d));
    for d in &dirs {
        frames::create_dir(d)?;
    }
    let synth = SmokeSynthConfig::default();
    let seeds: Vec<(usize, (u64, u64))> = frame_seeds(args.count, cfg.seed).into_iter().enumerate().collect();
    let entries = pool.map(&seeds, |&(i, s)| {
        let frame = synthetic_frame(args.width, args.height, s, &synth)?;
        let name = frame_name(i);
        save_image(&frame.clean, dirs[0].join(&name))?;
        save_image(&frame.smoky, dirs[1].join(&name))?;
        save_image(&frame.density.to_image(), dirs[2].join(&name))?;
        Ok(ManifestFrame { name, clean_seed: frame.clean_seed, smoke: frame.smoke })
    })?;
    let manifest = Manifest {
        seed: cfg.seed,
        width: args.width,
        height: args.height,
        config: synth,
        frames: entries,
    };
    frames::write_json(&root.join("manifest.json"), &manifest)?;
    println!("{} frames written to {}", args.count, root.display());
    Ok(())
}
