use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use surgiatm::{Error, SurgiAtmConfig};

use super::train_demo::{load_pairs, train_and_score, DataArgs, TrainArgs};
use crate::config::{set, RunConfig};
use crate::frames::{self, Pool};

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Grid CSV with columns `eta,z,rmse`.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,1")]
    etas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    zs: Vec<usize>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Serialize)]
struct Cell {
    eta: f64,
    z: usize,
    rmse: f64,
}

pub fn run(args: AblateArgs, mut cfg: RunConfig, pool: &Pool) -> anyhow::Result<()> {
    set(&mut cfg.seed, args.train.seed);
    if args.etas.is_empty() || args.zs.is_empty() {
        return Err(Error::Argument("ablation grid is empty".into()).into());
    }
    let cells: Vec<SurgiAtmConfig> = args
        .etas
        .iter()
        .flat_map(|&eta| args.zs.iter().map(move |&z| SurgiAtmConfig { eta, z, apply_sigmoid: true }))
        .collect();
    for cell in &cells {
        cell.validate()?;
    }
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        frames::create_dir(parent)?;
    }
    let pairs = load_pairs(&args.data, cfg.seed, pool)?;
    let train = args.train.config(cfg.seed);
    let rows = pool.map(&cells, |atm| {
        let (_, report) = train_and_score(&pairs, &train, atm)?;
        Ok(Cell { eta: atm.eta, z: atm.z, rmse: report.rmse })
    })?;
    frames::write_csv(&args.output, &rows)?;
    for row in &rows {
        println!("eta {:<6} z {:<3} rmse {:.6}", row.eta, row.z, row.rmse);
    }
    Ok(())
}
