use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use surgiatm::darkprior::{dark_channel, dcp_restore_with_airlight, estimate_airlight};
use surgiatm::dataset::pair_frames;
use surgiatm::moestat::{
    bin_samples, bootstrap_gate_interval, distribution_fit_report, fit_laplace, gate_profile, DistributionFit,
    ErrorBin,
};
use surgiatm::{BinnedErrorStats, Error, GaussParams, LaplaceParams};

use crate::config::{set, RunConfig};
use crate::frames::{self, Pool};

const DCP: &str = "dcp";
const BOOTSTRAP_LEVEL: f64 = 0.95;

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Smoky input frames.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Ground-truth frames.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Restored frames of a learned method as `NAME=DIR`; repeatable.
    #[arg(long = "pred", value_parser = parse_pred)]
    preds: Vec<(String, PathBuf)>,
    /// Receives `report.json` and one `profile_<method>.csv` per method.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Dark-channel bins over [0, 1].
    #[arg(long)]
    bins: Option<usize>,
    /// Errors a bin needs before it is fitted.
    #[arg(long)]
    min_bin_samples: Option<usize>,
    /// Histogram bins for the Jensen-Shannon comparison.
    #[arg(long, default_value_t = 100)]
    hist_bins: usize,
    /// Bootstrap resamples per bin for a 95% interval on W*; 0 disables.
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    /// Odd dark-channel window size [default: 15].
    #[arg(long)]
    z: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_resize: bool,
}

fn parse_pred(s: &str) -> Result<(String, PathBuf), String> {
    let (name, dir) = s.split_once('=').ok_or_else(|| format!("expected NAME=DIR, got {s:?}"))?;
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(format!("method name {name:?} must be non-empty and use [A-Za-z0-9_-]"));
    }
    Ok((name.to_string(), PathBuf::from(dir)))
}

#[derive(Debug, Serialize)]
struct BinRow {
    lo: f64,
    hi: f64,
    count: usize,
    laplace: Option<LaplaceParams>,
    gauss: Option<GaussParams>,
    /// Why the bin has no fit.
    absent: Option<String>,
}

#[derive(Debug, Serialize)]
struct MethodReport {
    name: String,
    samples: usize,
    fit: Option<DistributionFit>,
    fit_error: Option<String>,
    bins: Vec<BinRow>,
}

#[derive(Debug, Serialize)]
struct GateRow {
    midpoint: f64,
    w_star: Option<f64>,
    interval: Option<(f64, f64)>,
}

#[derive(Debug, Serialize)]
struct GateReport {
    /// Expert 2; expert 1 is always the DCP restorer.
    method: String,
    profile: Vec<GateRow>,
    pearson_w_star_dark: Option<f64>,
    pearson_error: Option<String>,
}

#[derive(Debug, Serialize)]
struct Report {
    frames: usize,
    bins: usize,
    min_bin_samples: usize,
    hist_bins: usize,
    methods: Vec<MethodReport>,
    gates: Vec<GateReport>,
}

#[derive(Debug, Serialize)]
struct ProfileRow {
    midpoint: f64,
    count: usize,
    mu: Option<f64>,
    b: Option<f64>,
    sigma: Option<f64>,
    w_star: Option<f64>,
}

/// Dark channel per pixel and per-method signed errors of one frame.
struct FrameSamples {
    dark: Vec<f64>,
    errors: Vec<Vec<f64>>,
}

fn bin_rows(grouped: &[Vec<f64>], stats: &BinnedErrorStats) -> Vec<BinRow> {
    grouped
        .iter()
        .zip(&stats.bins)
        .map(|(errs, bin): (&Vec<f64>, &ErrorBin)| {
            let absent = if bin.laplace.is_some() {
                None
            } else if errs.len() < stats.min_samples.max(2) {
                Some(format!("{} samples, need {}", errs.len(), stats.min_samples.max(2)))
            } else {
                fit_laplace(errs).err().map(|e| e.to_string())
            };
            BinRow { lo: bin.lo, hi: bin.hi, count: bin.count, laplace: bin.laplace, gauss: bin.gauss, absent }
        })
        .collect()
}

pub fn run(args: AnalyzeArgs, mut cfg: RunConfig, pool: &Pool) -> anyhow::Result<()> {
    set(&mut cfg.input_dir, args.input.clone().map(Some));
    set(&mut cfg.truth_dir, args.truth.clone().map(Some));
    set(&mut cfg.output_dir, args.output.clone().map(Some));
    set(&mut cfg.bins, args.bins);
    set(&mut cfg.min_bin_samples, args.min_bin_samples);
    set(&mut cfg.z, args.z);
    set(&mut cfg.seed, args.seed);
    if args.no_resize {
        cfg.resize = None;
    }
    cfg.validate()?;
    let mut names = vec![DCP.to_string()];
    for (name, _) in &args.preds {
        if names.contains(name) {
            return Err(Error::Argument(format!("method name {name:?} is reserved or repeated")).into());
        }
        names.push(name.clone());
    }
    let input = cfg.input()?.to_path_buf();
    let output = cfg.output()?.to_path_buf();
    let truth = cfg
        .truth_dir
        .clone()
        .ok_or_else(|| Error::Argument("missing --truth directory".into()))?;
    let mut others: Vec<&Path> = vec![&truth];
    others.extend(args.preds.iter().map(|(_, d)| d.as_path()));
    let rows = pair_frames(&input, &others)?;
    let mut inputs = vec![input.as_path()];
    inputs.extend(&others);
    frames::prepare_output(&output, &inputs)?;

    let resize = cfg.resize_to();
    let dcp_cfg = cfg.dcp();
    let per_frame = pool.map(&rows, |row| {
        let smoky = frames::load_rgb(&row[0], resize)?;
        let clean = frames::load_rgb(&row[1], resize)?;
        let airlight = estimate_airlight(&smoky, dcp_cfg.z, dcp_cfg.airlight_fraction)?;
        let dark = dark_channel(&smoky, &airlight, dcp_cfg.z)?.into_data();
        let mut restored = vec![frames::quantized(&dcp_restore_with_airlight(&smoky, &airlight, &dcp_cfg)?)];
        for path in &row[2..] {
            restored.push(frames::load_rgb(path, Some((smoky.width(), smoky.height())))?);
        }
        let errors = restored
            .iter()
            .map(|r| r.data().iter().zip(clean.data()).map(|(p, t)| p - t).collect())
            .collect();
        Ok(FrameSamples { dark, errors })
    })?;

    let mut methods = Vec::with_capacity(names.len());
    let mut grouped_all = Vec::with_capacity(names.len());
    let mut stats_all = Vec::with_capacity(names.len());
    for (m, name) in names.iter().enumerate() {
        let mut samples = Vec::new();
        for f in &per_frame {
            samples.extend(f.errors[m].iter().enumerate().map(|(i, &e)| (f.dark[i / 3], e)));
        }
        let errors: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let (fit, fit_error) = match distribution_fit_report(&errors, args.hist_bins) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let grouped = bin_samples(&samples, cfg.bins)?;
        let stats = BinnedErrorStats::from_grouped(&grouped, cfg.min_bin_samples);
        methods.push(MethodReport {
            name: name.clone(),
            samples: errors.len(),
            fit,
            fit_error,
            bins: bin_rows(&grouped, &stats),
        });
        grouped_all.push(grouped);
        stats_all.push(stats);
    }

    let mut gates = Vec::new();
    for m in 1..names.len() {
        let profile = gate_profile(&stats_all[0], &stats_all[m])?;
        let (pearson_w_star_dark, pearson_error) = match profile.correlation_with_dark_channel() {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let rows = profile
            .entries
            .iter()
            .enumerate()
            .map(|(b, e)| {
                let interval = match (e.w, args.bootstrap) {
                    (Some(_), n) if n > 0 => bootstrap_gate_interval(
                        &grouped_all[0][b],
                        &grouped_all[m][b],
                        n,
                        BOOTSTRAP_LEVEL,
                        cfg.seed.wrapping_add(b as u64),
                    )
                    .ok(),
                    _ => None,
                };
                GateRow { midpoint: e.midpoint, w_star: e.w, interval }
            })
            .collect();
        gates.push(GateReport { method: names[m].clone(), profile: rows, pearson_w_star_dark, pearson_error });
    }

    for (m, method) in methods.iter().enumerate() {
        let gate = m.checked_sub(1).map(|g| &gates[g]);
        let profile: Vec<ProfileRow> = method
            .bins
            .iter()
            .enumerate()
            .map(|(b, bin)| ProfileRow {
                midpoint: 0.5 * (bin.lo + bin.hi),
                count: bin.count,
                mu: bin.laplace.map(|l| l.mu),
                b: bin.laplace.map(|l| l.b),
                sigma: bin.gauss.map(|g| g.sigma),
                w_star: gate.and_then(|g| g.profile[b].w_star),
            })
            .collect();
        frames::write_csv(&output.join(format!("profile_{}.csv", method.name)), &profile)?;
    }

    let report = Report {
        frames: rows.len(),
        bins: cfg.bins,
        min_bin_samples: cfg.min_bin_samples,
        hist_bins: args.hist_bins,
        methods,
        gates,
    };
    frames::write_json(&output.join("report.json"), &report)?;
    for method in &report.methods {
        match &method.fit {
            Some(f) => println!(
                "{:<12} js_gauss {:.4} js_laplace {:.4} ({} errors)",
                method.name, f.js_gauss, f.js_laplace, method.samples
            ),
            None => println!(
                "{:<12} no fit: {}",
                method.name,
                method.fit_error.as_deref().unwrap_or("unknown")
            ),
        }
    }
    for gate in &report.gates {
        match gate.pearson_w_star_dark {
            Some(r) => println!("gate dcp/{}: pearson(W*, D) {:.4}", gate.method, r),
            None => println!("gate dcp/{}: no correlation", gate.method),
        }
    }
    Ok(())
}
