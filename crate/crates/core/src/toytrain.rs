//! A small affine predictor trained through the layer.
//!
//! Each pixel is described by eight features: its RGB value, the
//! airlight-free dark channel, the 3×3 mean of each channel and a constant.
//! Each output channel is a linear combination of those features. In direct
//! mode that combination is the restored value; in layer mode it is the logit
//! of `ρ`, and the restored value is the layer's reconstruction.
//!
//! Training is full-batch gradient descent on the mean per-element loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::atmlayer::{self, sign, smooth_dark_channel, LossKind, SurgiAtmConfig};
use crate::darkprior::denorm_dark_channel;
use crate::image::{ImageBuffer, Raster, ScalarField};
use crate::metrics::{evaluate_pair, MetricReport};
use crate::{Error, Result};

pub const FEATURES: usize = 8;
/// Bias logit of [`ToyPredictor::identity`] in layer mode; `σ(8) ≈ 0.99966`.
pub const IDENTITY_LOGIT: f64 = 8.0;
const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Predicts the restored frame directly.
    Direct,
    /// Predicts `ρ` logits and restores through the layer.
    Surgiatm,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(TrainMode::Direct),
            "surgiatm" | "atm" => Ok(TrainMode::Surgiatm),
            other => Err(Error::Argument(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss: LossKind,
    pub mode: TrainMode,
    pub seed: u64,
}

/// Step size per mode and loss, picked from one shared grid of powers of four
/// on 64×64 synthetic frames. The layer scales gradients by `D̂ · σ′`, so it
/// tolerates far larger steps than direct prediction.
pub fn default_learning_rate(mode: TrainMode, loss: LossKind) -> f64 {
    match (mode, loss) {
        (TrainMode::Direct, LossKind::L1) => 0.0625,
        (TrainMode::Direct, LossKind::L2) => 2.0,
        (TrainMode::Surgiatm, LossKind::L1) => 16.0,
        (TrainMode::Surgiatm, LossKind::L2) => 512.0,
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_mode(TrainMode::Surgiatm, LossKind::L1)
    }
}

impl TrainConfig {
    /// 300 epochs at [`default_learning_rate`] with seed 0.
    pub fn for_mode(mode: TrainMode, loss: LossKind) -> Self {
        Self {
            learning_rate: default_learning_rate(mode, loss),
            epochs: 300,
            loss,
            mode,
            seed: 0,
        }
    }

    /// A zero rate is accepted and leaves the weights untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Three rows of [`FEATURES`] affine coefficients, one per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPredictor {
    pub mode: TrainMode,
    pub weights: [[f64; FEATURES]; 3],
}

impl ToyPredictor {
    pub fn zeros(mode: TrainMode) -> Self {
        Self { mode, weights: [[0.0; FEATURES]; 3] }
    }

    /// Reproduces the input: RGB passthrough in direct mode, `ρ ≈ 1` in layer mode.
    pub fn identity(mode: TrainMode) -> Self {
        let mut model = Self::zeros(mode);
        for c in 0..3 {
            match mode {
                TrainMode::Direct => model.weights[c][c] = 1.0,
                TrainMode::Surgiatm => model.weights[c][FEATURES - 1] = IDENTITY_LOGIT,
            }
        }
        model
    }

    /// Small Gaussian weights drawn from `seed`.
    pub fn random(mode: TrainMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut model = Self::zeros(mode);
        for row in model.weights.iter_mut() {
            for w in row.iter_mut() {
                *w = normal.sample(&mut rng);
            }
        }
        model
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().all(|w| w.is_finite())
    }

    fn raw_output(&self, features: &[[f64; FEATURES]]) -> Vec<f64> {
        let mut out = Vec::with_capacity(features.len() * 3);
        for f in features {
            for row in &self.weights {
                out.push(row.iter().zip(f).map(|(w, x)| w * x).sum());
            }
        }
        out
    }

    /// Restored frame, clamped to `[0, 1]`.
    pub fn predict(&self, smoky: &ImageBuffer, atm: &SurgiAtmConfig) -> Result<ImageBuffer> {
        let frame = FrameCache::new(smoky, None, self.mode, atm)?;
        let recon = frame.reconstruct(self, &self.raw_output(&frame.features))?;
        ImageBuffer::from_clamped(smoky.shape(), recon)
    }
}

/// Per-pixel feature vectors of an RGB frame.
pub fn features(img: &ImageBuffer, z: usize) -> Result<Vec<[f64; FEATURES]>> {
    let d = denorm_dark_channel(img, z)?;
    Ok(features_with_dark(img, &d))
}

fn features_with_dark(img: &ImageBuffer, d: &ScalarField) -> Vec<[f64; FEATURES]> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let p = img.pixel(x, y);
            let mut mean = [0.0; 3];
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    let q = img.pixel(xx, yy);
                    for c in 0..3 {
                        mean[c] += q[c] / 9.0;
                    }
                }
            }
            out.push([p[0], p[1], p[2], d.get(x, y), mean[0], mean[1], mean[2], 1.0]);
        }
    }
    out
}

/// Inputs that stay fixed across epochs.
struct FrameCache {
    input: ImageBuffer,
    target: Option<ImageBuffer>,
    features: Vec<[f64; FEATURES]>,
    d_hat: Option<ScalarField>,
}

impl FrameCache {
    fn new(input: &ImageBuffer, target: Option<&ImageBuffer>, mode: TrainMode, atm: &SurgiAtmConfig) -> Result<Self> {
        atm.validate()?;
        if let Some(t) = target {
            input.shape().ensure_same(&t.shape(), "training pair")?;
        }
        let d = denorm_dark_channel(input, atm.z)?;
        let d_hat = match mode {
            TrainMode::Direct => None,
            TrainMode::Surgiatm => Some(smooth_dark_channel(&d, atm.eta)?),
        };
        Ok(Self {
            features: features_with_dark(input, &d),
            input: input.clone(),
            target: target.cloned(),
            d_hat,
        })
    }

    fn layer_state(&self, raw: Vec<f64>) -> Result<atmlayer::AtmForwardState> {
        let d_hat = self.d_hat.clone().expect("layer mode caches the dark channel");
        let raw = Raster::new(self.input.shape(), raw)?;
        atmlayer::forward_with_prior(&self.input, d_hat, &raw, true)
    }

    fn reconstruct(&self, model: &ToyPredictor, raw: &[f64]) -> Result<Vec<f64>> {
        match model.mode {
            TrainMode::Direct => Ok(raw.to_vec()),
            TrainMode::Surgiatm => Ok(self.layer_state(raw.to_vec())?.reconstruction().to_vec()),
        }
    }

    /// Summed loss and its gradient with respect to the raw outputs.
    fn loss_and_raw_grad(&self, model: &ToyPredictor, raw: Vec<f64>, kind: LossKind) -> Result<(f64, Vec<f64>)> {
        let target = self.target.as_ref().expect("training frames carry a target");
        match model.mode {
            TrainMode::Direct => {
                let mut loss = 0.0;
                let grad = raw
                    .iter()
                    .zip(target.data())
                    .map(|(o, j)| {
                        let r = j - o;
                        match kind {
                            LossKind::L2 => {
                                loss += 0.5 * r * r;
                                -r
                            }
                            LossKind::L1 => {
                                loss += r.abs();
                                -sign(r)
                            }
                        }
                    })
                    .collect();
                Ok((loss, grad))
            }
            TrainMode::Surgiatm => {
                let state = self.layer_state(raw)?;
                let loss = atmlayer::loss(&state, target, kind)?;
                let grad = atmlayer::backward_loss(&state, target, kind)?;
                Ok((loss, grad.into_data()))
            }
        }
    }
}

/// Mean loss over every element of every pair and its weight gradient.
fn batch_gradient(
    model: &ToyPredictor,
    frames: &[FrameCache],
    kind: LossKind,
) -> Result<(f64, [[f64; FEATURES]; 3])> {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut grad = [[0.0; FEATURES]; 3];
    for frame in frames {
        let raw = model.raw_output(&frame.features);
        let (loss, g_raw) = frame.loss_and_raw_grad(model, raw, kind)?;
        total += loss;
        count += g_raw.len();
        for (f, g) in frame.features.iter().zip(g_raw.chunks_exact(3)) {
            for c in 0..3 {
                for k in 0..FEATURES {
                    grad[c][k] += g[c] * f[k];
                }
            }
        }
    }
    let n = count as f64;
    grad.iter_mut().flatten().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

fn build_cache(pairs: &[(ImageBuffer, ImageBuffer)], mode: TrainMode, atm: &SurgiAtmConfig) -> Result<Vec<FrameCache>> {
    if pairs.is_empty() {
        return Err(Error::Argument("training needs at least one (smoky, clean) pair".into()));
    }
    pairs
        .iter()
        .map(|(smoky, clean)| FrameCache::new(smoky, Some(clean), mode, atm))
        .collect()
}

/// Mean training loss of `model` and its gradient with respect to every weight.
pub fn loss_and_gradient(
    model: &ToyPredictor,
    pairs: &[(ImageBuffer, ImageBuffer)],
    kind: LossKind,
    atm: &SurgiAtmConfig,
) -> Result<(f64, [[f64; FEATURES]; 3])> {
    batch_gradient(model, &build_cache(pairs, model.mode, atm)?, kind)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ToyPredictor,
    /// Mean loss before each update, then once more after the last.
    pub loss_trace: Vec<f64>,
}

/// Trains from [`ToyPredictor::random`] seeded by `cfg.seed`.
pub fn train(pairs: &[(ImageBuffer, ImageBuffer)], cfg: &TrainConfig, atm: &SurgiAtmConfig) -> Result<TrainOutcome> {
    train_from(ToyPredictor::random(cfg.mode, cfg.seed), pairs, cfg, atm)
}

/// Trains starting from `model`, whose mode must match `cfg.mode`.
pub fn train_from(
    mut model: ToyPredictor,
    pairs: &[(ImageBuffer, ImageBuffer)],
    cfg: &TrainConfig,
    atm: &SurgiAtmConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.mode != cfg.mode {
        return Err(Error::Argument(format!(
            "model mode {:?} does not match training mode {:?}",
            model.mode, cfg.mode
        )));
    }
    let frames = build_cache(pairs, cfg.mode, atm)?;
    let mut loss_trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let (loss, grad) = batch_gradient(&model, &frames, cfg.loss)?;
        if !loss.is_finite() {
            return Err(Error::Training { epoch, message: format!("loss became {loss}") });
        }
        loss_trace.push(loss);
        if epoch == cfg.epochs {
            break;
        }
        for (row, g) in model.weights.iter_mut().zip(&grad) {
            for (w, gk) in row.iter_mut().zip(g) {
                *w -= cfg.learning_rate * gk;
            }
        }
        if !model.is_finite() {
            return Err(Error::Training { epoch, message: "weights became non-finite".into() });
        }
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Mean of per-frame metrics of clamped predictions against the clean frames.
pub fn evaluate(model: &ToyPredictor, pairs: &[(ImageBuffer, ImageBuffer)], atm: &SurgiAtmConfig) -> Result<MetricReport> {
    let reports = pairs
        .iter()
        .map(|(smoky, clean)| evaluate_pair(&model.predict(smoky, atm)?, clean))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::mean(&reports)
}

/// Trailing moving average over `window` entries.
pub fn smooth_trace(trace: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    trace
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smokesim::{synthetic_set, SmokeSynthConfig};

    fn synthetic_pairs(n: usize, size: usize, seed: u64) -> Vec<(ImageBuffer, ImageBuffer)> {
        synthetic_set(n, size, size, seed, &SmokeSynthConfig::default())
            .unwrap()
            .into_iter()
            .map(|f| (f.smoky, f.clean))
            .collect()
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn weight_gradient_matches_finite_differences() {
        let pairs = synthetic_pairs(2, 16, 7);
        for mode in [TrainMode::Surgiatm, TrainMode::Direct] {
            for kind in [LossKind::L2, LossKind::L1] {
                let atm = SurgiAtmConfig { eta: 0.1, z: 3, apply_sigmoid: true };
                let model = ToyPredictor::random(mode, 3);
                let (_, grad) = loss_and_gradient(&model, &pairs, kind, &atm).unwrap();
                let h = 1e-6;
                for c in 0..3 {
                    for k in 0..FEATURES {
                        let mut plus = model.clone();
                        plus.weights[c][k] += h;
                        let mut minus = model.clone();
                        minus.weights[c][k] -= h;
                        let lp = loss_and_gradient(&plus, &pairs, kind, &atm).unwrap().0;
                        let lm = loss_and_gradient(&minus, &pairs, kind, &atm).unwrap().0;
                        let numeric = (lp - lm) / (2.0 * h);
                        let rel = crate::gradcheck::relative_error(grad[c][k], numeric);
                        assert!(rel < 1e-4, "{mode:?} {kind:?} w[{c}][{k}]: {} vs {numeric}", grad[c][k]);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let pairs = synthetic_pairs(2, 16, 1);
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 5, ..Default::default() };
        let out = train(&pairs, &cfg, &SurgiAtmConfig::default()).unwrap();
        assert_eq!(out.model, ToyPredictor::random(cfg.mode, cfg.seed));
        assert!(out.loss_trace.windows(2).all(|w| w[0] == w[1]));
        assert!(TrainConfig { learning_rate: -1.0, ..cfg }.validate().is_err());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn zero_model_halves_rho() {
        let (smoky, _) = synthetic_pairs(1, 16, 2).remove(0);
        let atm = SurgiAtmConfig::default();
        let out = ToyPredictor::zeros(TrainMode::Surgiatm).predict(&smoky, &atm).unwrap();
        let d_hat = smooth_dark_channel(&denorm_dark_channel(&smoky, atm.z).unwrap(), atm.eta).unwrap();
        for (i, p) in smoky.pixels().enumerate() {
            for c in 0..3 {
                let want = (p[c] - d_hat.data()[i] / 2.0).clamp(0.0, 1.0);
                assert!((out.data()[i * 3 + c] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_model_on_smoke_free_frames_is_bounded_by_eta() {
        // each pixel has a zero channel, so the dark channel vanishes
        let clean = ImageBuffer::from_fn(16, 16, 3, |x, y, c| if c == 2 { 0.0 } else { ((x + y + c) % 5) as f64 / 5.0 });
        let pairs = vec![(clean.clone(), clean)];
        for eta in [0.0, 0.1, 1.0] {
            let atm = SurgiAtmConfig { eta, z: 15, apply_sigmoid: true };
            let report = evaluate(&ToyPredictor::identity(TrainMode::Surgiatm), &pairs, &atm).unwrap();
            assert!(report.rmse <= eta / (1.0 + eta) + 1e-15);
        }
    }

    #[test]
    fn gradient_floor_keeps_weights_moving() {
        let clean = ImageBuffer::from_fn(16, 16, 3, |x, y, c| if c == 2 { 0.0 } else { ((x * 3 + y + c) % 7) as f64 / 7.0 });
        let truth = ImageBuffer::from_fn(16, 16, 3, |x, y, c| (clean.get(x, y, c) * 0.8).min(1.0));
        let pairs = vec![(clean, truth)];
        let model = ToyPredictor::random(TrainMode::Surgiatm, 4);
        let at = |eta| {
            let atm = SurgiAtmConfig { eta, z: 3, apply_sigmoid: true };
            loss_and_gradient(&model, &pairs, LossKind::L2, &atm).unwrap().1
        };
        let live: Vec<usize> = {
            let f = features(&pairs[0].0, 3).unwrap();
            (0..FEATURES).filter(|&k| f.iter().any(|p| p[k] != 0.0)).collect()
        };
        assert_eq!(live, [0, 1, 4, 5, 7]);
        assert!(at(0.0).iter().flatten().all(|&g| g == 0.0));
        let floored = at(0.1);
        assert!(floored.iter().all(|row| live.iter().all(|&k| row[k] != 0.0)));
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let pairs = synthetic_pairs(3, 24, 5);
        let cfg = TrainConfig { epochs: 40, ..Default::default() };
        let atm = SurgiAtmConfig::default();
        let a = train(&pairs, &cfg, &atm).unwrap();
        let b = train(&pairs, &cfg, &atm).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        let smooth = smooth_trace(&a.loss_trace, 5);
        assert!(smooth.windows(2).all(|w| w[1] <= w[0]), "{smooth:?}");
    }

    #[test]
    fn divergence_names_epoch() {
        let pairs = synthetic_pairs(1, 16, 6);
        let cfg = TrainConfig {
            learning_rate: 1e200,
            epochs: 10,
            ..TrainConfig::for_mode(TrainMode::Direct, LossKind::L2)
        };
        match train(&pairs, &cfg, &SurgiAtmConfig::default()) {
            Err(Error::Training { epoch, .. }) => assert!(epoch < 10),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn mode_mismatch_rejected() {
        let pairs = synthetic_pairs(1, 16, 6);
        let cfg = TrainConfig { mode: TrainMode::Direct, ..Default::default() };
        let model = ToyPredictor::zeros(TrainMode::Surgiatm);
        assert!(train_from(model, &pairs, &cfg, &SurgiAtmConfig::default()).is_err());
        assert!(train(&[], &cfg, &SurgiAtmConfig::default()).is_err());
    }

    #[test]
    fn smoke_free_pairs_train_to_identity() {
        // the gradient scales with D² · σ′, so this case needs a very large step
        let pairs: Vec<_> = synthetic_pairs(2, 32, 9).into_iter().map(|(_, c)| (c.clone(), c)).collect();
        let atm = SurgiAtmConfig { eta: 0.0, z: 3, apply_sigmoid: true };
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e5,
            ..TrainConfig::for_mode(TrainMode::Surgiatm, LossKind::L2)
        };
        let out = train(&pairs, &cfg, &atm).unwrap();
        let last = *out.loss_trace.last().unwrap();
        assert!(last < 1e-6, "{last}");
        let report = evaluate(&out.model, &pairs[..1], &atm).unwrap();
        assert!(report.psnr >= 60.0, "{report:?}");

        let l1 = TrainConfig { loss: LossKind::L1, ..cfg };
        let trace = train(&pairs, &l1, &atm).unwrap().loss_trace;
        assert!(trace.last().unwrap() < &(trace[0] / 10.0));
    }

    #[test]
    fn layer_beats_direct_on_small_synthetic_set() {
        let pairs = synthetic_pairs(6, 48, 21);
        let atm = SurgiAtmConfig { eta: 0.1, z: 3, apply_sigmoid: true };
        let rmse = |mode| {
            let cfg = TrainConfig { epochs: 150, ..TrainConfig::for_mode(mode, LossKind::L1) };
            evaluate(&train(&pairs, &cfg, &atm).unwrap().model, &pairs, &atm).unwrap().rmse
        };
        let (direct, layer) = (rmse(TrainMode::Direct), rmse(TrainMode::Surgiatm));
        assert!(layer < direct, "layer {layer} direct {direct}");
    }
}
