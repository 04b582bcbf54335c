//! Physics-guided smoke removal for laparoscopic frames.
//!
//! The crate is organised around a single output layer that turns a learned
//! predictor's normalized-radiance estimate into a restored frame:
//!
//! ```text
//! J = I - D̂ · (1 - ρ),    D̂ = (𝒟 + η) / (1 + η)
//! ```
//!
//! where `𝒟` is the airlight-free dark channel of the smoky input `I`. Around
//! that layer live the pieces needed to build, train, justify and evaluate it:
//!
//! * [`image`]: rasters, colour conversion and 8-bit frame I/O.
//! * [`darkprior`]: sliding-window minimum, dark channels and the classic
//!   dark-channel-prior restorer.
//! * [`atmlayer`]: the output layer itself with analytic L1/L2 gradients.
//! * [`moestat`]: error-distribution fitting, JS divergence and the
//!   closed-form optimal mixture gate.
//! * [`smokesim`]: Perlin smoke synthesis and density-stratified analysis.
//! * [`metrics`]: CIEDE2000, PSNR, RMSE and SSIM.
//! * [`toytrain`]: a small affine predictor trained through the layer.
//! * [`gradcheck`]: finite-difference verification of the layer gradients.
//! * [`dataset`]: paired frame-directory ingestion.

pub mod atmlayer;
pub mod darkprior;
pub mod dataset;
mod error;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod moestat;
pub mod smokesim;
pub mod toytrain;

pub use crate::atmlayer::{AtmForwardState, LossKind, SurgiAtmConfig};
pub use crate::darkprior::{Airlight, DcpConfig};
pub use crate::error::{Error, Result};
pub use crate::image::{ImageBuffer, LabPixel, Raster, ScalarField, Shape};
pub use crate::metrics::MetricReport;
pub use crate::moestat::{BinnedErrorStats, GateProfile, GaussParams, LaplaceParams};
pub use crate::smokesim::{PerlinSpec, SmokeField};
pub use crate::toytrain::{ToyPredictor, TrainConfig, TrainMode};
