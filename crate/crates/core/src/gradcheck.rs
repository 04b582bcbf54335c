//! Finite-difference validation of the layer's analytic gradients.
//!
//! Each case perturbs one raw predictor output at a time, reruns the full
//! forward pass, and compares the central difference of the summed loss with
//! the analytic gradient.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::atmlayer::{self, LossKind, SurgiAtmConfig};
use crate::image::{ImageBuffer, Raster, Shape};
use crate::{Error, Result};

pub const ETA_GRID: [f64; 3] = [0.0, 0.1, 1.0];
pub const WINDOW_GRID: [usize; 3] = [1, 3, 15];
pub const L2_TOLERANCE: f64 = 1e-5;
pub const L1_TOLERANCE: f64 = 1e-4;
/// L1 elements closer than this to the kink are skipped.
pub const L1_KINK_MARGIN: f64 = 1e-3;
const STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub cases: usize,
    /// `(width, height)` sizes cycled through by the cases.
    pub sizes: Vec<(usize, usize)>,
    /// Flips the analytic gradient's sign; the check must then fail.
    pub corrupt_sign: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 50,
            sizes: vec![(16, 16)],
            corrupt_sign: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradMismatch {
    pub x: usize,
    pub y: usize,
    pub c: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub width: usize,
    pub height: usize,
    pub eta: f64,
    pub z: usize,
    pub apply_sigmoid: bool,
    pub loss: LossKind,
    pub checked: usize,
    pub skipped_near_kink: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub mismatches: Vec<GradMismatch>,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub cases: Vec<CaseReport>,
    /// Largest |∂L/∂ρ| for η = 0 on an all-black frame; zero by construction.
    pub vanishing_max_abs_grad: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseReport::passed) && self.vanishing_max_abs_grad == 0.0
    }

    pub fn max_rel_error(&self, loss: LossKind) -> f64 {
        self.cases
            .iter()
            .filter(|c| c.loss == loss)
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// `|a − n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn per_element_loss(state: &atmlayer::AtmForwardState, target: &ImageBuffer, kind: LossKind) -> Vec<f64> {
    target
        .data()
        .iter()
        .zip(state.reconstruction())
        .map(|(j, jh)| {
            let r = j - jh;
            match kind {
                LossKind::L1 => r.abs(),
                LossKind::L2 => 0.5 * r * r,
            }
        })
        .collect()
}

/// Checks one configuration, returning every element outside tolerance.
pub fn check_case(
    input: &ImageBuffer,
    rho_raw: &Raster,
    target: &ImageBuffer,
    cfg: &SurgiAtmConfig,
    kind: LossKind,
    corrupt_sign: bool,
) -> Result<CaseReport> {
    let state = atmlayer::forward(input, rho_raw, cfg)?;
    let mut analytic = atmlayer::backward_loss(&state, target, kind)?.into_data();
    if corrupt_sign {
        analytic.iter_mut().for_each(|g| *g = -*g);
    }
    let tolerance = match kind {
        LossKind::L1 => L1_TOLERANCE,
        LossKind::L2 => L2_TOLERANCE,
    };
    let shape = input.shape();
    let base = rho_raw.data().to_vec();
    let mut probe = base.clone();
    let mut report = CaseReport {
        width: shape.width,
        height: shape.height,
        eta: cfg.eta,
        z: cfg.z,
        apply_sigmoid: cfg.apply_sigmoid,
        loss: kind,
        checked: 0,
        skipped_near_kink: 0,
        max_rel_error: 0.0,
        tolerance,
        mismatches: Vec::new(),
    };
    for i in 0..base.len() {
        if kind == LossKind::L1 && (target.data()[i] - state.reconstruction()[i]).abs() < L1_KINK_MARGIN {
            report.skipped_near_kink += 1;
            continue;
        }
        probe[i] = base[i] + STEP;
        let plus = atmlayer::forward(input, &Raster::new(shape, probe.clone())?, cfg)?;
        probe[i] = base[i] - STEP;
        let minus = atmlayer::forward(input, &Raster::new(shape, probe.clone())?, cfg)?;
        probe[i] = base[i];
        // elementwise differences keep untouched elements at exactly zero
        let diff: f64 = per_element_loss(&plus, target, kind)
            .iter()
            .zip(per_element_loss(&minus, target, kind))
            .map(|(p, m)| p - m)
            .sum();
        let numeric = diff / (2.0 * STEP);
        let rel = relative_error(analytic[i], numeric);
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(rel);
        if rel >= tolerance {
            let px = i / 3;
            report.mismatches.push(GradMismatch {
                x: px % shape.width,
                y: px / shape.width,
                c: i % 3,
                analytic: analytic[i],
                numeric,
                rel_error: rel,
            });
        }
    }
    Ok(report)
}

/// Random frame, logits and target for one case.
///
/// With the sigmoid off, `ρ` is drawn inside `[0.05, 0.95]` so that the
/// central difference never leaves the layer's domain.
pub fn random_case(rng: &mut ChaCha8Rng, shape: Shape, apply_sigmoid: bool) -> Result<(ImageBuffer, Raster, ImageBuffer)> {
    let n = shape.len();
    let input: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let rho: Vec<f64> = (0..n)
        .map(|_| {
            if apply_sigmoid {
                rng.gen_range(-3.0..3.0)
            } else {
                rng.gen_range(0.05..0.95)
            }
        })
        .collect();
    let target: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    Ok((
        ImageBuffer::new(shape.width, shape.height, shape.channels, input)?,
        Raster::new(shape, rho)?,
        ImageBuffer::new(shape.width, shape.height, shape.channels, target)?,
    ))
}

/// Largest |∂L/∂ρ| for the L2 loss with η = 0 on an all-black frame.
pub fn vanishing_gradient(width: usize, height: usize) -> Result<f64> {
    let shape = Shape::new(width, height, 3);
    let input = ImageBuffer::filled(width, height, 3, 0.0);
    let target = ImageBuffer::filled(width, height, 3, 0.5);
    let cfg = SurgiAtmConfig { eta: 0.0, z: 3, apply_sigmoid: true };
    let state = atmlayer::forward(&input, &Raster::filled(shape, 0.0), &cfg)?;
    let grad = atmlayer::backward_l2(&state, &target)?;
    Ok(grad.data().iter().fold(0.0, |m, g| m.max(g.abs())))
}

/// Runs `cases` random configurations, each checked under both losses.
///
/// `η`, `z` and the sigmoid toggle cycle through every combination before
/// repeating; their order is shuffled by the seed.
pub fn run(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.sizes.is_empty() {
        return Err(Error::Argument("gradient check needs at least one frame size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grid: Vec<(f64, usize, bool)> = Vec::new();
    for &eta in &ETA_GRID {
        for &z in &WINDOW_GRID {
            for sig in [true, false] {
                grid.push((eta, z, sig));
            }
        }
    }
    grid.shuffle(&mut rng);
    let mut cases = Vec::with_capacity(2 * cfg.cases);
    for k in 0..cfg.cases {
        let (eta, z, apply_sigmoid) = grid[k % grid.len()];
        let (w, h) = cfg.sizes[k % cfg.sizes.len()];
        let atm = SurgiAtmConfig { eta, z, apply_sigmoid };
        let (input, rho, target) = random_case(&mut rng, Shape::new(w, h, 3), apply_sigmoid)?;
        for kind in [LossKind::L2, LossKind::L1] {
            cases.push(check_case(&input, &rho, &target, &atm, kind, cfg.corrupt_sign)?);
        }
    }
    let (w, h) = cfg.sizes[0];
    Ok(GradCheckReport {
        cases,
        vanishing_max_abs_grad: vanishing_gradient(w, h)?,
    })
}
