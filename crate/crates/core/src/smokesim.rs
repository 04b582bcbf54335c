//! Synthetic surgical smoke.
//!
//! Smoke density is fractal Perlin noise. Frames are composited with the
//! scattering model `I = J·(1 − s) + A·s`, where `s` is the density (one minus
//! transmission) and `A` the smoke colour.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::{ImageBuffer, ScalarField, Shape};
use crate::{Error, Result};

/// Slightly off-white default smoke colour.
pub const DEFAULT_SMOKE_AIRLIGHT: [f64; 3] = [0.92, 0.92, 0.92];

/// Fractal Perlin noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerlinSpec {
    pub seed: u64,
    pub octaves: usize,
    /// Lattice cells across the frame width at the first octave.
    pub base_frequency: f64,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
    /// Upper end of the output range `[0, gain]`.
    pub gain: f64,
}

impl Default for PerlinSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            octaves: 4,
            base_frequency: 3.0,
            persistence: 0.5,
            gain: 0.6,
        }
    }
}

impl PerlinSpec {
    pub fn validate(&self) -> Result<()> {
        if self.octaves == 0 {
            return Err(Error::Argument("perlin noise needs at least one octave".into()));
        }
        if !(self.base_frequency > 0.0 && self.base_frequency.is_finite()) {
            return Err(Error::Argument(format!("base frequency must be positive, got {}", self.base_frequency)));
        }
        if !(self.persistence > 0.0 && self.persistence < 1.0) {
            return Err(Error::Argument(format!("persistence must lie in (0, 1), got {}", self.persistence)));
        }
        if !(0.0..=1.0).contains(&self.gain) {
            return Err(Error::Argument(format!("gain must lie in [0, 1], got {}", self.gain)));
        }
        Ok(())
    }
}

/// Improved Perlin gradient noise over a seeded permutation table.
struct Perlin {
    perm: [u8; 512],
}

impl Perlin {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut p: Vec<u8> = (0..=255).collect();
        p.shuffle(rng);
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = p[i & 255];
        }
        Self { perm }
    }

    fn fade(t: f64) -> f64 {
        t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
    }

    fn grad(hash: u8, x: f64, y: f64) -> f64 {
        match hash & 7 {
            0 => x + y,
            1 => -x + y,
            2 => x - y,
            3 => -x - y,
            4 => x,
            5 => -x,
            6 => y,
            _ => -y,
        }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let xf = x.floor();
        let yf = y.floor();
        let xi = (xf as i64 & 255) as usize;
        let yi = (yf as i64 & 255) as usize;
        let (x, y) = (x - xf, y - yf);
        let (u, v) = (Self::fade(x), Self::fade(y));
        let p = &self.perm;
        let aa = p[p[xi] as usize + yi];
        let ab = p[p[xi] as usize + yi + 1];
        let ba = p[p[xi + 1] as usize + yi];
        let bb = p[p[xi + 1] as usize + yi + 1];
        let lerp = |t: f64, a: f64, b: f64| a + t * (b - a);
        lerp(
            v,
            lerp(u, Self::grad(aa, x, y), Self::grad(ba, x - 1.0, y)),
            lerp(u, Self::grad(ab, x, y - 1.0), Self::grad(bb, x - 1.0, y - 1.0)),
        )
    }
}

/// Fractal Perlin field rescaled affinely onto `[0, gain]`.
pub fn perlin_field(width: usize, height: usize, spec: &PerlinSpec) -> Result<ScalarField> {
    spec.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!("perlin field must be non-empty, got {width}x{height}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Perlin::new(&mut rng);
    // shift off the lattice so different seeds do not share zero crossings
    let offsets: Vec<(f64, f64)> = (0..spec.octaves)
        .map(|_| (rng.gen_range(0.0..256.0), rng.gen_range(0.0..256.0)))
        .collect();
    let scale = spec.base_frequency / width as f64;
    let raw = ScalarField::from_fn(width, height, |x, y| {
        let mut amp = 1.0;
        let mut freq = scale;
        let mut total = 0.0;
        for &(ox, oy) in &offsets {
            total += amp * noise.sample(x as f64 * freq + ox, y as f64 * freq + oy);
            amp *= spec.persistence;
            freq *= 2.0;
        }
        total
    });
    let lo = raw.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    Ok(raw.map(|v| {
        if span > 0.0 {
            ((v - lo) / span * spec.gain).clamp(0.0, spec.gain)
        } else {
            0.0
        }
    }))
}

/// Smoke density with its colour.
#[derive(Debug, Clone, PartialEq)]
pub struct SmokeField {
    density: ScalarField,
    airlight: [f64; 3],
}

impl SmokeField {
    pub fn new(density: ScalarField, airlight: [f64; 3]) -> Result<Self> {
        if density.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("smoke density must lie in [0, 1]".into()));
        }
        if airlight.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::Argument(format!("smoke colour must lie in (0, 1]: {airlight:?}")));
        }
        Ok(Self { density, airlight })
    }

    pub fn density(&self) -> &ScalarField {
        &self.density
    }

    pub fn airlight(&self) -> [f64; 3] {
        self.airlight
    }
}

/// `I = J·(1 − s) + A·s`.
pub fn composite(clean: &ImageBuffer, smoke: &SmokeField) -> Result<ImageBuffer> {
    if clean.channels() != 3 {
        return Err(Error::Shape(format!("composite needs 3 channels, got {}", clean.channels())));
    }
    smoke.density.ensure_matches(&clean.shape(), "composite")?;
    let a = smoke.airlight;
    let mut out = Vec::with_capacity(clean.data().len());
    for (p, &s) in clean.pixels().zip(smoke.density.data()) {
        for c in 0..3 {
            out.push(p[c] * (1.0 - s) + a[c] * s);
        }
    }
    ImageBuffer::from_clamped(clean.shape(), out)
}

/// RMSE comparison of two predictors inside one density bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityBinGain {
    pub lo: f64,
    pub hi: f64,
    /// Pixels falling in the bin.
    pub count: usize,
    pub rmse_a: Option<f64>,
    pub rmse_b: Option<f64>,
    /// `(RMSE_a − RMSE_b) / RMSE_a`; zero when both are exact, absent when
    /// the bin is empty or only `a` is exact.
    pub gain: Option<f64>,
}

/// Relative RMSE reduction of `pred_b` over `pred_a`, stratified by density `d`.
pub fn density_stratified_gain(
    pred_a: &ImageBuffer,
    pred_b: &ImageBuffer,
    truth: &ImageBuffer,
    d: &ScalarField,
    bins: usize,
) -> Result<Vec<DensityBinGain>> {
    if bins < 2 {
        return Err(Error::Argument(format!("need at least 2 density bins, got {bins}")));
    }
    pred_a.shape().ensure_same(&truth.shape(), "stratified gain")?;
    pred_b.shape().ensure_same(&truth.shape(), "stratified gain")?;
    d.ensure_matches(&truth.shape(), "stratified gain")?;
    let mut acc = vec![(0usize, 0.0f64, 0.0f64); bins];
    let ch = truth.channels();
    for (i, &dv) in d.data().iter().enumerate() {
        let slot = &mut acc[crate::moestat::bin_index(dv, bins)];
        slot.0 += 1;
        for c in 0..ch {
            let k = i * ch + c;
            slot.1 += (pred_a.data()[k] - truth.data()[k]).powi(2);
            slot.2 += (pred_b.data()[k] - truth.data()[k]).powi(2);
        }
    }
    Ok(acc
        .iter()
        .enumerate()
        .map(|(i, &(count, sa, sb))| {
            let n = (count * ch) as f64;
            let (rmse_a, rmse_b) = if count == 0 {
                (None, None)
            } else {
                (Some((sa / n).sqrt()), Some((sb / n).sqrt()))
            };
            let gain = match (rmse_a, rmse_b) {
                (Some(a), Some(b)) if a > 0.0 => Some((a - b) / a),
                (Some(_), Some(0.0)) => Some(0.0),
                _ => None,
            };
            DensityBinGain {
                lo: i as f64 / bins as f64,
                hi: (i + 1) as f64 / bins as f64,
                count,
                rmse_a,
                rmse_b,
                gain,
            }
        })
        .collect())
}

/// Mean after dropping one maximum and one minimum.
pub fn trimmed_mean(values: &[f64]) -> Result<f64> {
    if values.len() < 3 {
        return Err(Error::Argument(format!("trimmed mean needs at least 3 values, got {}", values.len())));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let inner = &v[1..v.len() - 1];
    Ok(inner.iter().sum::<f64>() / inner.len() as f64)
}

/// Dataset-generation settings for paired smoky/clean frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmokeSynthConfig {
    pub airlight: [f64; 3],
    /// Smoke gain is drawn uniformly from this range per frame.
    pub gain_range: (f64, f64),
    /// Fraction of the noise range clipped to zero density, leaving smoke-free patches.
    pub sparsity: f64,
    pub octaves: usize,
    pub base_frequency: f64,
    pub persistence: f64,
}

impl Default for SmokeSynthConfig {
    fn default() -> Self {
        Self {
            airlight: DEFAULT_SMOKE_AIRLIGHT,
            gain_range: (0.3, 0.9),
            sparsity: 0.3,
            octaves: 4,
            base_frequency: 3.0,
            persistence: 0.5,
        }
    }
}

/// Everything needed to regenerate one synthetic frame's smoke.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSmoke {
    pub spec: PerlinSpec,
    pub sparsity: f64,
    pub airlight: [f64; 3],
}

/// Draws the smoke parameters of one frame from its seed.
pub fn frame_smoke(cfg: &SmokeSynthConfig, frame_seed: u64) -> FrameSmoke {
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
    let (lo, hi) = cfg.gain_range;
    let gain = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    FrameSmoke {
        spec: PerlinSpec {
            seed: rng.gen(),
            octaves: cfg.octaves,
            base_frequency: cfg.base_frequency,
            persistence: cfg.persistence,
            gain,
        },
        sparsity: cfg.sparsity,
        airlight: cfg.airlight,
    }
}

/// Clamped fractal density: noise below the sparsity threshold is smoke-free.
pub fn smoke_density(width: usize, height: usize, smoke: &FrameSmoke) -> Result<ScalarField> {
    if !(0.0..1.0).contains(&smoke.sparsity) {
        return Err(Error::Argument(format!("sparsity must lie in [0, 1), got {}", smoke.sparsity)));
    }
    let unit = perlin_field(width, height, &PerlinSpec { gain: 1.0, ..smoke.spec })?;
    let t = smoke.sparsity;
    Ok(unit.map(|v| (((v - t) / (1.0 - t)).clamp(0.0, 1.0) * smoke.spec.gain).clamp(0.0, 1.0)))
}

/// Smoky version of `clean` and its density map.
pub fn synthesize(clean: &ImageBuffer, smoke: &FrameSmoke) -> Result<(ImageBuffer, ScalarField)> {
    let density = smoke_density(clean.width(), clean.height(), smoke)?;
    let field = SmokeField::new(density.clone(), smoke.airlight)?;
    Ok((composite(clean, &field)?, density))
}

/// Procedural tissue-like clean frame: warm reds with a dark blue channel under
/// an off-centre endoscope light that falls off towards the borders, with a
/// few dark specks.
pub fn synthetic_clean_frame(width: usize, height: usize, seed: u64) -> Result<ImageBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cx = rng.gen_range(0.3..0.7) * width as f64;
    let cy = rng.gen_range(0.3..0.7) * height as f64;
    let mut field = |freq: f64| {
        perlin_field(
            width,
            height,
            &PerlinSpec {
                seed: rng.gen(),
                octaves: 3,
                base_frequency: freq,
                persistence: 0.5,
                gain: 1.0,
            },
        )
    };
    let shade = field(1.5)?;
    let texture = field(6.0)?;
    let vessels = field(10.0)?;
    let shape = Shape::new(width, height, 3);
    let reach = (width as f64).hypot(height as f64) / 2.0;
    let mut data = Vec::with_capacity(shape.len());
    for i in 0..shape.pixels() {
        let (x, y) = ((i % width) as f64 + 0.5, (i / width) as f64 + 0.5);
        let r2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (reach * reach);
        let falloff = (1.0 - 0.85 * r2).clamp(0.1, 1.0);
        let light = falloff * (0.55 + 0.45 * shade.data()[i]);
        let tex = texture.data()[i];
        let vessel = if vessels.data()[i] < 0.12 { 0.35 } else { 1.0 };
        let r = (0.6 + 0.4 * tex) * light * vessel;
        let g = (0.12 + 0.3 * tex * tex) * light * vessel;
        let b = (0.2 * (1.0 - tex) * tex).max(0.0) * light * vessel;
        data.extend_from_slice(&[r, g, b]);
    }
    ImageBuffer::from_clamped(shape, data)
}

/// One generated training or evaluation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub clean_seed: u64,
    pub smoke: FrameSmoke,
    pub clean: ImageBuffer,
    pub smoky: ImageBuffer,
    pub density: ScalarField,
}

/// Per-frame `(clean_seed, smoke_seed)` pairs drawn from a set seed.
pub fn frame_seeds(count: usize, seed: u64) -> Vec<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (rng.gen(), rng.gen())).collect()
}

/// Generates one frame from its seeds.
pub fn synthetic_frame(
    width: usize,
    height: usize,
    seeds: (u64, u64),
    cfg: &SmokeSynthConfig,
) -> Result<SyntheticFrame> {
    let clean = synthetic_clean_frame(width, height, seeds.0)?;
    let smoke = frame_smoke(cfg, seeds.1);
    let (smoky, density) = synthesize(&clean, &smoke)?;
    Ok(SyntheticFrame { clean_seed: seeds.0, smoke, clean, smoky, density })
}

/// A seeded set of `count` synthetic frames.
pub fn synthetic_set(
    count: usize,
    width: usize,
    height: usize,
    seed: u64,
    cfg: &SmokeSynthConfig,
) -> Result<Vec<SyntheticFrame>> {
    frame_seeds(count, seed)
        .into_iter()
        .map(|s| synthetic_frame(width, height, s, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag1_correlation(f: &ScalarField) -> f64 {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for y in 0..f.height() {
            for x in 0..f.width() - 1 {
                xs.push(f.get(x, y));
                ys.push(f.get(x + 1, y));
            }
        }
        crate::moestat::pearson(&xs, &ys).unwrap()
    }

    #[test]
    fn zero_gain_is_zero_field() {
        let f = perlin_field(32, 16, &PerlinSpec { gain: 0.0, ..Default::default() }).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perlin_is_deterministic_and_in_range() {
        let spec = PerlinSpec { seed: 42, gain: 0.7, ..Default::default() };
        let a = perlin_field(40, 30, &spec).unwrap();
        let b = perlin_field(40, 30, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=0.7).contains(&v)));
        let hi = a.data().iter().copied().fold(0.0, f64::max);
        assert!((hi - 0.7).abs() < 1e-12);
    }

    #[test]
    fn seeds_give_different_fields() {
        let a = perlin_field(64, 64, &PerlinSpec { seed: 1, ..Default::default() }).unwrap();
        let b = perlin_field(64, 64, &PerlinSpec { seed: 2, ..Default::default() }).unwrap();
        let differing = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
        assert!(differing as f64 >= 0.99 * a.data().len() as f64);
    }

    #[test]
    fn zero_octaves_rejected() {
        let spec = PerlinSpec { octaves: 0, ..Default::default() };
        assert!(matches!(perlin_field(4, 4, &spec), Err(Error::Argument(_))));
    }

    #[test]
    fn correlation_length_grows_with_lower_frequency() {
        let corr: Vec<f64> = [8.0, 4.0, 2.0]
            .iter()
            .map(|&f| {
                let spec = PerlinSpec { seed: 5, octaves: 1, base_frequency: f, gain: 1.0, ..Default::default() };
                lag1_correlation(&perlin_field(96, 96, &spec).unwrap())
            })
            .collect();
        assert!(corr[0] < corr[1] && corr[1] < corr[2], "{corr:?}");
    }

    #[test]
    fn composite_limits() {
        let clean = ImageBuffer::from_fn(5, 4, 3, |x, y, c| ((x * 3 + y + c) % 7) as f64 / 7.0);
        let none = SmokeField::new(ScalarField::filled(5, 4, 0.0), DEFAULT_SMOKE_AIRLIGHT).unwrap();
        assert_eq!(composite(&clean, &none).unwrap(), clean);
        let full = SmokeField::new(ScalarField::filled(5, 4, 1.0), [0.9, 0.8, 0.7]).unwrap();
        let out = composite(&clean, &full).unwrap();
        assert!(out.pixels().all(|p| p == [0.9, 0.8, 0.7]));
        let half = SmokeField::new(ScalarField::filled(5, 4, 0.5), [1.0; 3]).unwrap();
        let out = composite(&clean, &half).unwrap();
        for (o, j) in out.data().iter().zip(clean.data()) {
            assert!((o - (j + 1.0) / 2.0).abs() < 1e-15);
        }
        let wrong = SmokeField::new(ScalarField::filled(4, 4, 0.5), [1.0; 3]).unwrap();
        assert!(matches!(composite(&clean, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn composite_approaches_airlight_monotonically() {
        let clean = ImageBuffer::from_fn(6, 6, 3, |x, y, c| ((x + 2 * y + c) % 5) as f64 / 4.0);
        let a = [0.92, 0.9, 0.88];
        let mut prev: Option<ImageBuffer> = None;
        for k in 0..=10 {
            let s = k as f64 / 10.0;
            let out = composite(&clean, &SmokeField::new(ScalarField::filled(6, 6, s), a).unwrap()).unwrap();
            if let Some(p) = &prev {
                for (i, (o, q)) in out.data().iter().zip(p.data()).enumerate() {
                    assert!((o - a[i % 3]).abs() <= (q - a[i % 3]).abs() + 1e-15);
                }
            }
            prev = Some(out);
        }
    }

    #[test]
    fn stratified_gain_cases() {
        let truth = ImageBuffer::from_fn(8, 8, 3, |x, y, c| ((x + y + c) % 4) as f64 / 4.0);
        let noisy = ImageBuffer::from_fn(8, 8, 3, |x, y, c| truth.get(x, y, c) * 0.5 + 0.1);
        let d = ScalarField::from_fn(8, 8, |x, _| x as f64 / 7.0);
        let g = density_stratified_gain(&noisy, &truth, &truth, &d, 4).unwrap();
        assert!(g.iter().all(|b| b.gain == Some(1.0)));
        let g = density_stratified_gain(&noisy, &noisy, &truth, &d, 4).unwrap();
        assert!(g.iter().all(|b| b.gain == Some(0.0)));
        assert!(density_stratified_gain(&noisy, &noisy, &truth, &d, 1).is_err());
    }

    #[test]
    fn stratified_gain_localizes_errors() {
        let truth = ImageBuffer::from_fn(10, 10, 3, |x, y, c| ((x * y + c) % 5) as f64 / 5.0);
        let d = ScalarField::from_fn(10, 10, |x, _| x as f64 / 9.0);
        // errors only where d > 0.5; b halves them
        let a = ImageBuffer::from_fn(10, 10, 3, |x, y, c| {
            truth.get(x, y, c) + if d.get(x, y) > 0.5 { 0.1 } else { 0.0 }
        });
        let b = ImageBuffer::from_fn(10, 10, 3, |x, y, c| {
            truth.get(x, y, c) + if d.get(x, y) > 0.5 { 0.05 } else { 0.0 }
        });
        let g = density_stratified_gain(&a, &b, &truth, &d, 4).unwrap();
        for bin in &g {
            if bin.hi <= 0.5 {
                assert_eq!(bin.gain, Some(0.0));
            } else if bin.lo >= 0.5 {
                assert!(bin.gain.unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn empty_bins_are_absent() {
        let truth = ImageBuffer::filled(4, 4, 3, 0.5);
        let d = ScalarField::filled(4, 4, 0.1);
        let g = density_stratified_gain(&truth, &truth, &truth, &d, 5).unwrap();
        assert_eq!(g[0].count, 16);
        assert!(g[1..].iter().all(|b| b.count == 0 && b.gain.is_none()));
    }

    #[test]
    fn trimmed_mean_drops_extremes() {
        assert_eq!(trimmed_mean(&[10.0, 1.0, 2.0, 3.0, -50.0]).unwrap(), 2.0);
        assert!(trimmed_mean(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn synthesized_frames_have_smoke_free_patches() {
        let clean = synthetic_clean_frame(64, 64, 3).unwrap();
        let smoke = frame_smoke(&SmokeSynthConfig::default(), 99);
        let (smoky, density) = synthesize(&clean, &smoke).unwrap();
        assert_eq!(smoky.shape(), clean.shape());
        let zero = density.data().iter().filter(|&&v| v == 0.0).count();
        assert!(zero > 0);
        assert!(density.data().iter().all(|&v| v <= smoke.spec.gain + 1e-12));
        let (again, _) = synthesize(&clean, &smoke).unwrap();
        assert_eq!(again, smoky);
    }

    #[test]
    fn synthetic_sets_are_seeded() {
        let cfg = SmokeSynthConfig::default();
        let a = synthetic_set(3, 16, 16, 11, &cfg).unwrap();
        assert_eq!(a, synthetic_set(3, 16, 16, 11, &cfg).unwrap());
        assert_ne!(a[0].smoky, synthetic_set(3, 16, 16, 12, &cfg).unwrap()[0].smoky);
        let one = synthetic_frame(16, 16, frame_seeds(3, 11)[2], &cfg).unwrap();
        assert_eq!(one, a[2]);
        for f in &a {
            let gain = f.smoke.spec.gain;
            assert!((0.3..=0.9).contains(&gain));
        }
    }
}
