//! The restoration output layer.
//!
//! A predictor emits a normalized-radiance map `ρ` (optionally as logits that
//! go through a sigmoid). The layer reconstructs
//!
//! ```text
//! Ĵ(x, c) = I(x, c) − D̂(x) · (1 − ρ(x, c)),   D̂ = (𝒟 + η) / (1 + η)
//! ```
//!
//! with `𝒟` the airlight-free dark channel of the input frame. Since
//! `∂Ĵ/∂ρ = D̂`, every gradient reduces to scaling the upstream gradient by
//! `D̂` (and by `σ′ = ρ(1 − ρ)` when the sigmoid is applied). With `η > 0`
//! the scale never drops below `η / (1 + η)`.
//!
//! The forward pass keeps the unclamped reconstruction for losses and
//! gradients; [`AtmForwardState::output`] clamps for display only.

use serde::{Deserialize, Serialize};

use crate::darkprior::{check_window, denorm_dark_channel};
use crate::image::{ImageBuffer, Raster, ScalarField, Shape};
use crate::{Error, Result};

/// Smoothing factor, window size and sigmoid toggle of the layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurgiAtmConfig {
    pub eta: f64,
    pub z: usize,
    pub apply_sigmoid: bool,
}

impl Default for SurgiAtmConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            z: 15,
            apply_sigmoid: true,
        }
    }
}

impl SurgiAtmConfig {
    pub fn validate(&self) -> Result<()> {
        check_eta(self.eta)?;
        check_window(self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "mae" => Ok(LossKind::L1),
            "l2" | "mse" => Ok(LossKind::L2),
            other => Err(Error::Argument(format!("unknown loss {other:?}"))),
        }
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Argument(format!("eta must be finite and >= 0, got {eta}")));
    }
    Ok(())
}

/// Logistic function; exact limits 0 and 1 for large |x|, never NaN for finite x.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Operands cached by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct AtmForwardState {
    d_hat: ScalarField,
    rho: Vec<f64>,
    input: ImageBuffer,
    reconstruction: Vec<f64>,
    apply_sigmoid: bool,
}

impl AtmForwardState {
    pub fn shape(&self) -> Shape {
        self.input.shape()
    }

    pub fn d_hat(&self) -> &ScalarField {
        &self.d_hat
    }

    /// Normalized radiance after the optional sigmoid.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn input(&self) -> &ImageBuffer {
        &self.input
    }

    /// Unclamped reconstruction used for losses and gradients.
    pub fn reconstruction(&self) -> &[f64] {
        &self.reconstruction
    }

    pub fn apply_sigmoid(&self) -> bool {
        self.apply_sigmoid
    }

    /// Reconstruction clamped to `[0, 1]` for display.
    pub fn output(&self) -> ImageBuffer {
        ImageBuffer::from_clamped(self.shape(), self.reconstruction.clone())
            .expect("reconstruction is finite")
    }
}

/// `D̂ = (𝒟 + η) / (1 + η)`.
pub fn smooth_dark_channel(d: &ScalarField, eta: f64) -> Result<ScalarField> {
    check_eta(eta)?;
    if eta == 0.0 {
        return Ok(d.clone());
    }
    Ok(d.map(|v| (v + eta) / (1.0 + eta)))
}

/// Runs the layer on a frame and the predictor's raw output.
pub fn forward(input: &ImageBuffer, rho_raw: &Raster, cfg: &SurgiAtmConfig) -> Result<AtmForwardState> {
    cfg.validate()?;
    input.shape().ensure_same(&rho_raw.shape(), "forward rho")?;
    let d = denorm_dark_channel(input, cfg.z)?;
    let d_hat = smooth_dark_channel(&d, cfg.eta)?;
    forward_with_prior(input, d_hat, rho_raw, cfg.apply_sigmoid)
}

/// Runs the layer with a precomputed smoothed dark channel.
///
/// Useful when the same frame is pushed through the layer many times, as in
/// training, since `D̂` depends on the input only.
pub fn forward_with_prior(
    input: &ImageBuffer,
    d_hat: ScalarField,
    rho_raw: &Raster,
    apply_sigmoid: bool,
) -> Result<AtmForwardState> {
    let shape = input.shape();
    if shape.channels != 3 {
        return Err(Error::Shape(format!("layer input needs 3 channels, got {}", shape.channels)));
    }
    shape.ensure_same(&rho_raw.shape(), "forward rho")?;
    d_hat.ensure_matches(&shape, "forward dark channel")?;
    if !apply_sigmoid {
        if let Some(v) = rho_raw.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!(
                "rho {v} outside [0, 1] with the sigmoid disabled"
            )));
        }
    }
    let mut rho = rho_raw.data().to_vec();
    if apply_sigmoid {
        for r in &mut rho {
            *r = sigmoid(*r);
        }
    }
    let mut reconstruction = vec![0.0; shape.len()];
    let samples = reconstruction.chunks_exact_mut(3).zip(input.pixels()).zip(rho.chunks_exact(3));
    for (((out, p), r), &dh) in samples.zip(d_hat.data()) {
        for c in 0..3 {
            out[c] = p[c] - dh * (1.0 - r[c]);
        }
    }
    Ok(AtmForwardState {
        d_hat,
        rho,
        input: input.clone(),
        reconstruction,
        apply_sigmoid,
    })
}

/// Chains an upstream gradient `∂L/∂Ĵ` back to the predictor output.
///
/// The result is the gradient with respect to `ρ`, or with respect to the raw
/// logits when the sigmoid is applied.
pub fn backward(state: &AtmForwardState, grad_output: &[f64]) -> Result<Raster> {
    let shape = state.shape();
    if grad_output.len() != shape.len() {
        return Err(Error::Shape(format!(
            "upstream gradient has {} samples, expected {}",
            grad_output.len(),
            shape.len()
        )));
    }
    Ok(chain(state, grad_output.iter().copied()))
}

/// `D̂ · upstream`, times `ρ(1−ρ)` behind the sigmoid, sample by sample.
fn chain(state: &AtmForwardState, upstream: impl Iterator<Item = f64>) -> Raster {
    let mut grad = vec![0.0; state.rho.len()];
    for (g, u) in grad.iter_mut().zip(upstream) {
        *g = u;
    }
    let samples = grad.chunks_exact_mut(3).zip(state.rho.chunks_exact(3));
    for ((g, r), &dh) in samples.zip(state.d_hat.data()) {
        for c in 0..3 {
            g[c] *= dh;
            if state.apply_sigmoid {
                g[c] *= r[c] * (1.0 - r[c]);
            }
        }
    }
    Raster::from_finite(state.shape(), grad)
}

/// `J − Ĵ` sample by sample.
fn residuals<'a>(state: &'a AtmForwardState, target: &'a ImageBuffer) -> Result<impl Iterator<Item = f64> + 'a> {
    state.shape().ensure_same(&target.shape(), "backward target")?;
    Ok(target.data().iter().zip(&state.reconstruction).map(|(j, jh)| j - jh))
}

/// Gradient of `Σ ½ (J − Ĵ)²`: `−D̂ · (J − Ĵ)`.
pub fn backward_l2(state: &AtmForwardState, target: &ImageBuffer) -> Result<Raster> {
    Ok(chain(state, residuals(state, target)?.map(|r| -r)))
}

/// Gradient of `Σ |J − Ĵ|`: `−D̂ · sign(J − Ĵ)`, with `sign(0) = 0`.
pub fn backward_l1(state: &AtmForwardState, target: &ImageBuffer) -> Result<Raster> {
    Ok(chain(state, residuals(state, target)?.map(|r| -sign(r))))
}

pub fn backward_loss(state: &AtmForwardState, target: &ImageBuffer, kind: LossKind) -> Result<Raster> {
    match kind {
        LossKind::L1 => backward_l1(state, target),
        LossKind::L2 => backward_l2(state, target),
    }
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Summed per-sample loss of the unclamped reconstruction against `target`.
pub fn loss(state: &AtmForwardState, target: &ImageBuffer, kind: LossKind) -> Result<f64> {
    let it = residuals(state, target)?;
    Ok(match kind {
        LossKind::L1 => it.map(f64::abs).sum(),
        LossKind::L2 => it.map(|r| 0.5 * r * r).sum(),
    })
}

/// Flat 32-bit entry points for foreign-language bindings.
///
/// Buffers are contiguous `(H, W, C)` arrays, the layout of
/// [`ImageBuffer`]. Inputs are widened to `f64`, results narrowed back.
/// Caller buffers are never mutated.
pub mod flat {
    use super::*;

    pub fn shape_hwc(height: usize, width: usize, channels: usize) -> Shape {
        Shape::new(width, height, channels)
    }

    fn widen(buf: &[f32]) -> Vec<f64> {
        buf.iter().map(|&v| v as f64).collect()
    }

    fn narrow(buf: &[f64]) -> Vec<f32> {
        buf.iter().map(|&v| v as f32).collect()
    }

    fn image(buf: &[f32], shape: Shape) -> Result<ImageBuffer> {
        ImageBuffer::new(shape.width, shape.height, shape.channels, widen(buf))
    }

    /// Returns the unclamped reconstruction and the state needed by [`backward`].
    pub fn forward(
        input: &[f32],
        rho_raw: &[f32],
        shape: Shape,
        cfg: &SurgiAtmConfig,
    ) -> Result<(Vec<f32>, AtmForwardState)> {
        let input = image(input, shape)?;
        let rho_raw = Raster::new(shape, widen(rho_raw))?;
        let state = super::forward(&input, &rho_raw, cfg)?;
        Ok((narrow(state.reconstruction()), state))
    }

    /// Gradient with respect to the raw predictor output given an upstream gradient.
    pub fn backward(state: &AtmForwardState, grad_output: &[f32]) -> Result<Vec<f32>> {
        Ok(narrow(super::backward(state, &widen(grad_output))?.data()))
    }

    /// Gradient with respect to the raw predictor output for a built-in loss.
    pub fn backward_to_target(state: &AtmForwardState, target: &[f32], kind: LossKind) -> Result<Vec<f32>> {
        let target = image(target, state.shape())?;
        Ok(narrow(super::backward_loss(state, &target, kind)?.data()))
    }

    /// `(H, W)` airlight-free dark channel of an `(H, W, 3)` frame.
    pub fn denorm_dark_channel(input: &[f32], shape: Shape, z: usize) -> Result<Vec<f32>> {
        let input = image(input, shape)?;
        Ok(narrow(super::denorm_dark_channel(&input, z)?.data()))
    }
}
