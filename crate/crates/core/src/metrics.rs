//! Full-reference quality metrics: CIEDE2000, PSNR, RMSE and SSIM.

use serde::{Deserialize, Serialize};

use crate::image::{srgb_to_lab, ImageBuffer, LabPixel, ScalarField};
use crate::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// One row of quality scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ciede2000: f64,
    pub psnr: f64,
    pub rmse: f64,
    pub ssim: f64,
}

impl MetricReport {
    /// Arithmetic mean of each field in slice order.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        if reports.is_empty() {
            return Err(Error::Argument("cannot average zero metric reports".into()));
        }
        let n = reports.len() as f64;
        let sum = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(MetricReport {
            ciede2000: sum(|r| r.ciede2000),
            psnr: sum(|r| r.psnr),
            rmse: sum(|r| r.rmse),
            ssim: sum(|r| r.ssim),
        })
    }
}

/// Per-frame row of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

/// Per-frame rows plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRun {
    pub frames: Vec<FrameMetrics>,
    pub aggregate: MetricReport,
}

impl MetricRun {
    pub fn new(frames: Vec<FrameMetrics>) -> Result<Self> {
        let reports: Vec<MetricReport> = frames.iter().map(|f| f.report).collect();
        let aggregate = MetricReport::mean(&reports)?;
        Ok(Self { frames, aggregate })
    }
}

fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.shape().ensure_same(&b.shape(), "metric")?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data().len() as f64)
}

pub fn rmse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    Ok(mse(a, b)?.sqrt())
}

/// Peak-1 PSNR in dB, capped only for identical images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { PSNR_CAP_DB } else { 10.0 * (1.0 / m).log10() })
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-mode filtering; output is `(w − 10) × (h − 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_fields(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Argument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let k = gaussian_kernel();
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(f).collect::<Vec<f64>>();
    let mu_x = filter_valid(x, w, h, &k);
    let mu_y = filter_valid(y, w, h, &k);
    let xx = filter_valid(&prod(&|i| x[i] * x[i]), w, h, &k);
    let yy = filter_valid(&prod(&|i| y[i] * y[i]), w, h, &k);
    let xy = filter_valid(&prod(&|i| x[i] * y[i]), w, h, &k);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

/// Single-scale SSIM on BT.601 luma.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.shape().ensure_same(&b.shape(), "ssim")?;
    ssim_fields(&a.luma(), &b.luma())
}

fn hue_degrees(b: f64, a: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        0.0
    } else {
        b.atan2(a).to_degrees().rem_euclid(360.0)
    }
}

/// CIEDE2000 colour difference with unit weighting factors.
pub fn delta_e2000(p1: LabPixel, p2: LabPixel) -> f64 {
    const POW25_7: f64 = 6_103_515_625.0;
    let c1 = p1.a.hypot(p1.b);
    let c2 = p2.a.hypot(p2.b);
    let c_bar7 = ((c1 + c2) / 2.0).powi(7);
    let g = 0.5 * (1.0 - (c_bar7 / (c_bar7 + POW25_7)).sqrt());
    let a1 = (1.0 + g) * p1.a;
    let a2 = (1.0 + g) * p2.a;
    let c1p = a1.hypot(p1.b);
    let c2p = a2.hypot(p2.b);
    let h1p = hue_degrees(p1.b, a1);
    let h2p = hue_degrees(p2.b, a2);

    let dl = p2.l - p1.l;
    let dc = c2p - c1p;
    let chroma_zero = c1p * c2p == 0.0;
    let dh_angle = if chroma_zero {
        0.0
    } else {
        let d = h2p - h1p;
        if d > 180.0 {
            d - 360.0
        } else if d < -180.0 {
            d + 360.0
        } else {
            d
        }
    };
    let dh = 2.0 * (c1p * c2p).sqrt() * (dh_angle.to_radians() / 2.0).sin();

    let l_bar = (p1.l + p2.l) / 2.0;
    let c_bar_p = (c1p + c2p) / 2.0;
    let h_bar = if chroma_zero {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 {
        (h1p + h2p) / 2.0
    } else if h1p + h2p < 360.0 {
        (h1p + h2p + 360.0) / 2.0
    } else {
        (h1p + h2p - 360.0) / 2.0
    };
    let cos_deg = |d: f64| d.to_radians().cos();
    let t = 1.0 - 0.17 * cos_deg(h_bar - 30.0) + 0.24 * cos_deg(2.0 * h_bar) + 0.32 * cos_deg(3.0 * h_bar + 6.0)
        - 0.20 * cos_deg(4.0 * h_bar - 63.0);
    let d_theta = 30.0 * (-((h_bar - 275.0) / 25.0).powi(2)).exp();
    let cp7 = c_bar_p.powi(7);
    let r_c = 2.0 * (cp7 / (cp7 + POW25_7)).sqrt();
    let l50 = (l_bar - 50.0).powi(2);
    let s_l = 1.0 + 0.015 * l50 / (20.0 + l50).sqrt();
    let s_c = 1.0 + 0.045 * c_bar_p;
    let s_h = 1.0 + 0.015 * c_bar_p * t;
    let r_t = -(2.0 * d_theta).to_radians().sin() * r_c;

    let (tl, tc, th) = (dl / s_l, dc / s_c, dh / s_h);
    (tl * tl + tc * tc + th * th + r_t * tc * th).max(0.0).sqrt()
}

/// Mean per-pixel CIEDE2000 between two sRGB images.
pub fn ciede2000(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.shape().ensure_same(&b.shape(), "ciede2000")?;
    let la = srgb_to_lab(a)?;
    let lb = srgb_to_lab(b)?;
    let total: f64 = la.pixels.iter().zip(&lb.pixels).map(|(p, q)| delta_e2000(*p, *q)).sum();
    Ok(total / la.pixels.len() as f64)
}

/// All four metrics of a prediction against its reference.
pub fn evaluate_pair(pred: &ImageBuffer, truth: &ImageBuffer) -> Result<MetricReport> {
    Ok(MetricReport {
        ciede2000: ciede2000(pred, truth)?,
        psnr: psnr(pred, truth)?,
        rmse: rmse(pred, truth)?,
        ssim: ssim(pred, truth)?,
    })
}
