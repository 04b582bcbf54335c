//! Dark-channel machinery and the classic dark-channel-prior restorer.
//!
//! The windowed minimum is separable: a row pass followed by a column pass,
//! each using the van Herk/Gil-Werman block prefix/suffix scheme so the cost
//! per pixel does not depend on the window size. Borders are replicated,
//! which for a minimum filter is the same as clipping the window to the frame.

use serde::{Deserialize, Serialize};

use crate::image::{ImageBuffer, ScalarField};
use crate::{Error, Result};

/// Lower bound applied to each airlight component.
pub const AIRLIGHT_FLOOR: f64 = 1e-3;

/// Parameters of the dark-channel-prior restorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcpConfig {
    /// Odd window size in pixels.
    pub z: usize,
    /// Transmission floor in `(0, 1)`.
    pub t0: f64,
    /// Fraction of pixels with the brightest dark channel used to estimate airlight.
    pub airlight_fraction: f64,
}

impl Default for DcpConfig {
    fn default() -> Self {
        Self {
            z: 15,
            t0: 0.1,
            airlight_fraction: 0.001,
        }
    }
}

impl DcpConfig {
    pub fn validate(&self) -> Result<()> {
        check_window(self.z)?;
        if !(self.t0 > 0.0 && self.t0 < 1.0) {
            return Err(Error::Argument(format!("t0 must lie in (0, 1), got {}", self.t0)));
        }
        if !(self.airlight_fraction > 0.0 && self.airlight_fraction <= 1.0) {
            return Err(Error::Argument(format!(
                "airlight fraction must lie in (0, 1], got {}",
                self.airlight_fraction
            )));
        }
        Ok(())
    }
}

/// Per-channel atmospheric light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Airlight(pub [f64; 3]);

impl Airlight {
    pub fn new(a: [f64; 3]) -> Result<Self> {
        if a.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::Argument(format!("airlight components must lie in (0, 1]: {a:?}")));
        }
        Ok(Self(a))
    }

    pub fn uniform(v: f64) -> Result<Self> {
        Self::new([v; 3])
    }
}

pub(crate) fn check_window(z: usize) -> Result<()> {
    if z.is_multiple_of(2) {
        return Err(Error::Argument(format!("window size must be odd and >= 1, got {z}")));
    }
    Ok(())
}

/// Van Herk/Gil-Werman sliding minimum along the outer axis of `input`, read
/// as items of `lanes` contiguous samples. The window is centred, `z` items
/// wide, and the first and last items are replicated past the borders, which
/// for a minimum equals clipping the window.
///
/// Every item of the padded sequence is covered by exactly one block of `z`;
/// output `i` combines the suffix minimum at `i` with the prefix minimum at
/// `i + z − 1`, which always lie in adjacent or identical blocks.
fn sliding_min(input: &[f64], lanes: usize, z: usize, out: &mut [f64], scratch: &mut Scratch) {
    let n = input.len() / lanes;
    let r = z / 2;
    let padded = (n + 2 * r).div_ceil(z) * z;
    let at = |k: usize| k.saturating_sub(r).min(n - 1);
    let Scratch { prefix, suffix } = scratch;
    prefix.resize(padded * lanes, 0.0);
    suffix.resize(padded * lanes, 0.0);
    if lanes == 1 {
        for b in (0..padded).step_by(z) {
            let mut m = f64::INFINITY;
            for k in b..b + z {
                m = m.min(input[at(k)]);
                prefix[k] = m;
            }
            m = f64::INFINITY;
            for k in (b..b + z).rev() {
                m = m.min(input[at(k)]);
                suffix[k] = m;
            }
        }
    } else {
        let item = |k: usize| &input[at(k) * lanes..][..lanes];
        for b in (0..padded).step_by(z) {
            prefix[b * lanes..][..lanes].copy_from_slice(item(b));
            for k in b + 1..b + z {
                let (done, rest) = prefix.split_at_mut(k * lanes);
                let prev = &done[(k - 1) * lanes..];
                for ((v, &p), &s) in rest[..lanes].iter_mut().zip(prev).zip(item(k)) {
                    *v = p.min(s);
                }
            }
            let last = b + z - 1;
            suffix[last * lanes..][..lanes].copy_from_slice(item(last));
            for k in (b..last).rev() {
                let (head, done) = suffix.split_at_mut((k + 1) * lanes);
                for ((v, &q), &s) in head[k * lanes..].iter_mut().zip(&done[..lanes]).zip(item(k)) {
                    *v = q.min(s);
                }
            }
        }
    }
    let tail = &prefix[(z - 1) * lanes..];
    for ((o, &s), &p) in out.iter_mut().zip(suffix.iter()).zip(tail) {
        *o = s.min(p);
    }
}

#[derive(Default)]
struct Scratch {
    prefix: Vec<f64>,
    suffix: Vec<f64>,
}

/// Minimum over the `z`×`z` neighbourhood of every pixel.
pub fn window_min(field: &ScalarField, z: usize) -> Result<ScalarField> {
    check_window(z)?;
    let (w, h) = (field.width(), field.height());
    if z == 1 || w * h == 0 {
        return Ok(field.clone());
    }
    let mut scratch = Scratch::default();
    let mut rows = vec![0.0; w * h];
    for (src, dst) in field.data().chunks_exact(w).zip(rows.chunks_exact_mut(w)) {
        sliding_min(src, 1, z, dst, &mut scratch);
    }
    let mut out = vec![0.0; w * h];
    sliding_min(&rows, w, z, &mut out, &mut scratch);
    ScalarField::new(w, h, out)
}

fn ensure_rgb(img: &ImageBuffer, what: &str) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!("{what} needs 3 channels, got {}", img.channels())));
    }
    Ok(())
}

/// Airlight-normalized dark channel `D`, clamped to `[0, 1]`.
pub fn dark_channel(img: &ImageBuffer, airlight: &Airlight, z: usize) -> Result<ScalarField> {
    ensure_rgb(img, "dark_channel")?;
    let a = airlight.0;
    let per_pixel: Vec<f64> = img
        .pixels()
        .map(|p| (p[0] / a[0]).min(p[1] / a[1]).min(p[2] / a[2]))
        .collect();
    let field = ScalarField::new(img.width(), img.height(), per_pixel)?;
    Ok(window_min(&field, z)?.map(|v| v.clamp(0.0, 1.0)))
}

/// Airlight-free dark channel `𝒟`: windowed minimum over channels of raw intensities.
pub fn denorm_dark_channel(img: &ImageBuffer, z: usize) -> Result<ScalarField> {
    ensure_rgb(img, "denorm_dark_channel")?;
    let mins = img.pixels().map(|p| p[0].min(p[1]).min(p[2])).collect();
    window_min(&ScalarField::new(img.width(), img.height(), mins)?, z)
}

/// Mean input colour over the `fraction` of pixels with the largest `𝒟`.
///
/// Ties are broken by raster order. Each component is floored at
/// [`AIRLIGHT_FLOOR`].
pub fn estimate_airlight(img: &ImageBuffer, z: usize, fraction: f64) -> Result<Airlight> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!("airlight fraction must lie in (0, 1], got {fraction}")));
    }
    let dark = denorm_dark_channel(img, z)?;
    let n = dark.data().len();
    if n == 0 {
        return Ok(Airlight([AIRLIGHT_FLOOR; 3]));
    }
    let take = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| dark.data()[j].total_cmp(&dark.data()[i]).then(i.cmp(&j)));
    let mut sum = [0.0; 3];
    for &i in &order[..take] {
        let p = &img.data()[i * 3..i * 3 + 3];
        for c in 0..3 {
            sum[c] += p[c];
        }
    }
    Ok(Airlight(sum.map(|s| (s / take as f64).max(AIRLIGHT_FLOOR))))
}

/// Dark-channel-prior restoration with an estimated airlight.
pub fn dcp_restore(img: &ImageBuffer, cfg: &DcpConfig) -> Result<ImageBuffer> {
    cfg.validate()?;
    let airlight = estimate_airlight(img, cfg.z, cfg.airlight_fraction)?;
    dcp_restore_with_airlight(img, &airlight, cfg)
}

/// Dark-channel-prior restoration `J = (I − A) / max(1 − D, t0) + A` with a known airlight.
pub fn dcp_restore_with_airlight(
    img: &ImageBuffer,
    airlight: &Airlight,
    cfg: &DcpConfig,
) -> Result<ImageBuffer> {
    cfg.validate()?;
    let dark = dark_channel(img, airlight, cfg.z)?;
    let a = airlight.0;
    let mut out = Vec::with_capacity(img.data().len());
    for (p, &d) in img.pixels().zip(dark.data()) {
        let t = (1.0 - d).max(cfg.t0);
        if t == 1.0 {
            // (I - A) + A is not always bitwise I
            out.extend_from_slice(p);
            continue;
        }
        for c in 0..3 {
            out.push((p[c] - a[c]) / t + a[c]);
        }
    }
    ImageBuffer::from_clamped(img.shape(), out)
}
