use std::path::PathBuf;

use clap::Args;
use surgiatm::gradcheck::{self, GradCheckConfig};
use surgiatm::{Error, LossKind};

use crate::config::{set, RunConfig};
use crate::exit::CheckFailed;
use crate::frames;

/// Mismatches printed per failing case.
const SHOWN_MISMATCHES: usize = 5;

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 50)]
    cases: usize,
    /// Comma-separated frame sizes as `WxH`, cycled through by the cases.
    #[arg(long, default_value = "16x16", value_parser = parse_size, value_delimiter = ',')]
    sizes: Vec<(usize, usize)>,
    /// Full JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Harness self-test: flips the analytic gradient's sign.
    #[arg(long, hide = true)]
    corrupt_sign: bool,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{s:?}: {e}"));
    let size = (parse(w)?, parse(h)?);
    if size.0 == 0 || size.1 == 0 {
        return Err(format!("{s:?}: sizes must be positive"));
    }
    Ok(size)
}

pub fn run(args: GradcheckArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    set(&mut cfg.seed, args.seed);
    if args.cases == 0 {
        return Err(Error::Argument("--cases must be positive".into()).into());
    }
    let report = gradcheck::run(&GradCheckConfig {
        seed: cfg.seed,
        cases: args.cases,
        sizes: args.sizes.clone(),
        corrupt_sign: args.corrupt_sign,
    })?;
    if let Some(path) = &args.report {
        frames::write_json(path, &report)?;
    }
    println!(
        "{} checks over {} configurations: max rel error L2 {:.3e} (tol {:e}), L1 {:.3e} (tol {:e})",
        report.cases.len(),
        args.cases,
        report.max_rel_error(LossKind::L2),
        gradcheck::L2_TOLERANCE,
        report.max_rel_error(LossKind::L1),
        gradcheck::L1_TOLERANCE,
    );
    println!(
        "vanishing case (eta=0, all-black input, L2): max |grad| = {:e}",
        report.vanishing_max_abs_grad
    );
    let failing: Vec<_> = report.cases.iter().filter(|c| !c.passed()).collect();
    for case in &failing {
        println!(
            "FAIL {}x{} eta={} z={} sigmoid={} loss={:?}: {} of {} elements",
            case.width,
            case.height,
            case.eta,
            case.z,
            case.apply_sigmoid,
            case.loss,
            case.mismatches.len(),
            case.checked
        );
        for m in case.mismatches.iter().take(SHOWN_MISMATCHES) {
            println!(
                "  pixel ({}, {}) channel {}: analytic {:e} numeric {:e} rel {:.3e}",
                m.x, m.y, m.c, m.analytic, m.numeric, m.rel_error
            );
        }
    }
    if !failing.is_empty() {
        return Err(CheckFailed(format!("{} of {} gradient checks failed", failing.len(), report.cases.len())).into());
    }
    if report.vanishing_max_abs_grad != 0.0 {
        return Err(CheckFailed("vanishing case has a non-zero gradient".into()).into());
    }
    println!("all gradient checks passed");
    Ok(())
}
