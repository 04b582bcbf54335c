//! Error statistics behind the restoration formula.
//!
//! Two experts, a physics restorer and a learned predictor, are blended per
//! pixel with a gate `W`. Modelling each expert's error as
//! `Laplace(μ(D), b(D))`, the mixed error has variance `2(W²b₁² + (1−W)²b₂²)`
//! and mean `Wμ₁ + (1−W)μ₂`; minimizing variance plus squared mean gives
//!
//! ```text
//! W* = (2b₂² − μ₂(μ₁ − μ₂)) / (2b₁² + 2b₂² + (μ₁ − μ₂)²)
//! ```
//!
//! clipped to `[0, 1]`. This module fits the error models (binned by dark
//! channel), compares Gaussian and Laplacian fits by Jensen-Shannon divergence
//! and evaluates the gate profile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::image::{ImageBuffer, Raster, ScalarField};
use crate::{Error, Result};

pub const SCALE_FLOOR: f64 = 1e-9;
pub const DEFAULT_DARK_BINS: usize = 20;
pub const DEFAULT_MIN_BIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceParams {
    pub mu: f64,
    pub b: f64,
}

impl LaplaceParams {
    pub fn new(mu: f64, b: f64) -> Result<Self> {
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
        if !(b > 0.0) || !mu.is_finite() {
            return Err(Error::Argument(format!("invalid Laplace parameters mu={mu} b={b}")));
        }
        Ok(Self { mu, b })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.b;
        if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        }
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.b * self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussParams {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussParams {
    pub fn cdf(&self, x: f64) -> f64 {
        Normal::new(self.mu, self.sigma)
            .map(|n| n.cdf(x))
            .unwrap_or(f64::NAN)
    }
}

/// Signed per-sample error `pred − truth`.
pub fn error_field(pred: &ImageBuffer, truth: &ImageBuffer) -> Result<Raster> {
    pred.shape().ensure_same(&truth.shape(), "error_field")?;
    Raster::new(
        pred.shape(),
        pred.data().iter().zip(truth.data()).map(|(p, t)| p - t).collect(),
    )
}

fn check_samples(samples: &[f64], what: &str) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::Estimation(format!("{what} needs at least 2 samples, got {}", samples.len())));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimation(format!("{what}: non-finite sample")));
    }
    if samples.iter().all(|&v| v == samples[0]) {
        return Err(Error::Estimation(format!("{what}: all samples equal")));
    }
    Ok(())
}

/// Maximum-likelihood Laplace fit: lower median and mean absolute deviation.
pub fn fit_laplace(samples: &[f64]) -> Result<LaplaceParams> {
    check_samples(samples, "fit_laplace")?;
    let mut sorted = samples.to_vec();
    let k = (sorted.len() - 1) / 2;
    let (_, &mut mu, _) = sorted.select_nth_unstable_by(k, f64::total_cmp);
    let b = samples.iter().map(|x| (x - mu).abs()).sum::<f64>() / samples.len() as f64;
    Ok(LaplaceParams {
        mu,
        b: b.max(SCALE_FLOOR),
    })
}

/// Maximum-likelihood Gaussian fit: mean and population standard deviation.
pub fn fit_gauss(samples: &[f64]) -> Result<GaussParams> {
    check_samples(samples, "fit_gauss")?;
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    Ok(GaussParams {
        mu,
        sigma: var.sqrt().max(SCALE_FLOOR),
    })
}

fn kl_term(p: f64, m: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / m).log2()
    }
}

/// Jensen-Shannon divergence in bits between two normalized histograms.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Argument(format!("histograms have {} and {} bins", p.len(), q.len())));
    }
    for (name, h) in [("p", p), ("q", q)] {
        let total: f64 = h.iter().sum();
        if (total - 1.0).abs() > 1e-9 || h.iter().any(|&v| v < 0.0) {
            return Err(Error::Argument(format!("histogram {name} is not normalized (sum {total})")));
        }
    }
    let mut js = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        js += 0.5 * kl_term(a, m) + 0.5 * kl_term(b, m);
    }
    Ok(js.clamp(0.0, 1.0))
}

/// `bins + 1` uniform edges spanning the sample range.
pub fn histogram_edges(samples: &[f64], bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::Argument("histogram needs at least one bin".into()));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    if !(hi > lo) {
        return Err(Error::Estimation("sample range is empty".into()));
    }
    Ok((0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect())
}

/// Normalized histogram of `samples` over `edges`; the last bin is closed.
pub fn histogram(samples: &[f64], edges: &[f64]) -> Vec<f64> {
    let bins = edges.len() - 1;
    let lo = edges[0];
    let width = (edges[bins] - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    for &x in samples {
        let i = (((x - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1.0;
    }
    let n = samples.len() as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}

/// Probability mass per bin from a CDF; the outer bins absorb the tails so
/// the masses sum to one.
pub fn discretize_cdf(cdf: impl Fn(f64) -> f64, edges: &[f64]) -> Vec<f64> {
    let bins = edges.len() - 1;
    (0..bins)
        .map(|i| {
            let lo = if i == 0 { 0.0 } else { cdf(edges[i]) };
            let hi = if i == bins - 1 { 1.0 } else { cdf(edges[i + 1]) };
            (hi - lo).max(0.0)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionFit {
    pub laplace: LaplaceParams,
    pub gauss: GaussParams,
    pub js_gauss: f64,
    pub js_laplace: f64,
}

/// Fits both families and scores each against the empirical histogram.
pub fn distribution_fit_report(samples: &[f64], bins: usize) -> Result<DistributionFit> {
    if samples.len() < 1000 {
        return Err(Error::Estimation(format!(
            "distribution fit needs at least 1000 samples, got {}",
            samples.len()
        )));
    }
    let laplace = fit_laplace(samples)?;
    let gauss = fit_gauss(samples)?;
    let edges = histogram_edges(samples, bins)?;
    let empirical = histogram(samples, &edges);
    fit_report_from_histogram(&empirical, &edges, laplace, gauss)
}

/// Scores given fits against an already-binned empirical histogram.
pub fn fit_report_from_histogram(
    empirical: &[f64],
    edges: &[f64],
    laplace: LaplaceParams,
    gauss: GaussParams,
) -> Result<DistributionFit> {
    let renorm = |mut h: Vec<f64>| {
        let s: f64 = h.iter().sum();
        h.iter_mut().for_each(|v| *v /= s);
        h
    };
    let lap_hist = renorm(discretize_cdf(|x| laplace.cdf(x), edges));
    let gauss_hist = renorm(discretize_cdf(|x| gauss.cdf(x), edges));
    Ok(DistributionFit {
        laplace,
        gauss,
        js_gauss: js_divergence(empirical, &gauss_hist)?,
        js_laplace: js_divergence(empirical, &lap_hist)?,
    })
}

/// Unclipped minimizer of `Var + E²` for the two-expert mixture.
pub fn optimal_gate_unclipped(p1: &LaplaceParams, p2: &LaplaceParams) -> Result<f64> {
    if !(p1.b > 0.0 && p2.b > 0.0) {
        return Err(Error::Argument(format!("scales must be positive: b1={} b2={}", p1.b, p2.b)));
    }
    let dmu = p1.mu - p2.mu;
    let b1 = p1.b * p1.b;
    let b2 = p2.b * p2.b;
    Ok((2.0 * b2 - p2.mu * dmu) / (2.0 * b1 + 2.0 * b2 + dmu * dmu))
}

/// Optimal gate weight of expert 1 (the physics restorer), clipped to `[0, 1]`.
pub fn optimal_gate(p1: &LaplaceParams, p2: &LaplaceParams) -> Result<f64> {
    Ok(optimal_gate_unclipped(p1, p2)?.clamp(0.0, 1.0))
}

/// Deployed gate approximation `Ŵ = 1 − D`.
pub fn approx_gate(d: &ScalarField) -> ScalarField {
    d.map(|v| 1.0 - v)
}

/// Product-moment correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Argument(format!(
            "pearson needs equal lengths >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Estimation("pearson: zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Statistics of the errors falling in one dark-channel bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub laplace: Option<LaplaceParams>,
    pub gauss: Option<GaussParams>,
}

impl ErrorBin {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Error fits conditioned on the dark channel, in uniform bins over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedErrorStats {
    pub bins: Vec<ErrorBin>,
    pub min_samples: usize,
}

/// Groups `(dark channel, error)` samples into `bins` uniform bins over `[0, 1]`.
pub fn bin_samples(samples: &[(f64, f64)], bins: usize) -> Result<Vec<Vec<f64>>> {
    if bins == 0 {
        return Err(Error::Argument("need at least one dark-channel bin".into()));
    }
    let mut grouped = vec![Vec::new(); bins];
    for &(d, e) in samples {
        grouped[bin_index(d, bins)].push(e);
    }
    Ok(grouped)
}

pub(crate) fn bin_index(d: f64, bins: usize) -> usize {
    ((d.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

impl BinnedErrorStats {
    /// Fits every bin holding at least `min_samples` non-degenerate errors.
    pub fn from_samples(samples: &[(f64, f64)], bins: usize, min_samples: usize) -> Result<Self> {
        let grouped = bin_samples(samples, bins)?;
        Ok(Self::from_grouped(&grouped, min_samples))
    }

    pub fn from_grouped(grouped: &[Vec<f64>], min_samples: usize) -> Self {
        let bins = grouped.len();
        let bins = grouped
            .iter()
            .enumerate()
            .map(|(i, errs)| {
                let enough = errs.len() >= min_samples.max(2);
                ErrorBin {
                    lo: i as f64 / bins as f64,
                    hi: (i + 1) as f64 / bins as f64,
                    count: errs.len(),
                    laplace: enough.then(|| fit_laplace(errs).ok()).flatten(),
                    gauss: enough.then(|| fit_gauss(errs).ok()).flatten(),
                }
            })
            .collect();
        Self { bins, min_samples }
    }

    /// Builds the statistics of an error raster conditioned on a dark-channel field.
    pub fn from_error_field(errors: &Raster, dark: &ScalarField, bins: usize, min_samples: usize) -> Result<Self> {
        dark.ensure_matches(&errors.shape(), "binned error stats")?;
        let ch = errors.shape().channels;
        let samples: Vec<(f64, f64)> = errors
            .data()
            .iter()
            .enumerate()
            .map(|(i, &e)| (dark.data()[i / ch], e))
            .collect();
        Self::from_samples(&samples, bins, min_samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateEntry {
    pub midpoint: f64,
    pub w: Option<f64>,
}

/// Per-bin optimal gate `W*(D)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateProfile {
    pub entries: Vec<GateEntry>,
}

impl GateProfile {
    /// `(midpoint, W*)` of the bins where both experts had data.
    pub fn present(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.entries.iter().filter_map(|e| e.w.map(|w| (e.midpoint, w)))
    }

    /// Correlation of `W*` with the bin midpoint across present bins.
    pub fn correlation_with_dark_channel(&self) -> Result<f64> {
        let (ds, ws): (Vec<f64>, Vec<f64>) = self.present().unzip();
        pearson(&ws, &ds)
    }
}

/// Evaluates the optimal gate bin by bin; `dcp` is expert 1, `dnn` expert 2.
pub fn gate_profile(dcp: &BinnedErrorStats, dnn: &BinnedErrorStats) -> Result<GateProfile> {
    if dcp.bins.len() != dnn.bins.len()
        || dcp.bins.iter().zip(&dnn.bins).any(|(a, b)| a.lo != b.lo || a.hi != b.hi)
    {
        return Err(Error::Argument("gate profile needs identical binning".into()));
    }
    let entries = dcp
        .bins
        .iter()
        .zip(&dnn.bins)
        .map(|(a, b)| {
            let w = match (a.laplace, b.laplace) {
                (Some(p1), Some(p2)) => optimal_gate(&p1, &p2).ok(),
                _ => None,
            };
            Ok(GateEntry {
                midpoint: a.midpoint(),
                w,
            })
        })
        .collect::<Result<_>>()?;
    Ok(GateProfile { entries })
}

/// Percentile bootstrap interval for `W*` from the raw errors of one bin.
///
/// Each resample draws both error sets with replacement, refits the
/// Laplacians and evaluates the clipped gate.
pub fn bootstrap_gate_interval(
    dcp_errors: &[f64],
    dnn_errors: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(format!("bootstrap needs resamples > 0 and level in (0,1), got {resamples}, {level}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |src: &[f64]| -> Vec<f64> { (0..src.len()).map(|_| src[rng.gen_range(0..src.len())]).collect() };
    let mut ws = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let a = draw(dcp_errors);
        let b = draw(dnn_errors);
        if let (Ok(p1), Ok(p2)) = (fit_laplace(&a), fit_laplace(&b)) {
            ws.push(optimal_gate(&p1, &p2)?);
        }
    }
    if ws.is_empty() {
        return Err(Error::Estimation("every bootstrap resample was degenerate".into()));
    }
    ws.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let pick = |q: f64| ws[((q * (ws.len() - 1) as f64).round() as usize).min(ws.len() - 1)];
    Ok((pick(tail), pick(1.0 - tail)))
}
