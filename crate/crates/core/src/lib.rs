//! Self-supervised monocular depth and ego-motion learning from image
//! snippets fused with synchronized vibration signals.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffnum`]: dense `f64` arrays with a reverse-mode tape (convolution,
//!   2-D FFT, bilinear sampling) and a finite-difference gradient checker.
//! - [`geometry`]: pinhole camera, 6-DoF pose algebra and differentiable
//!   inverse warping.
//! - [`vibration`]: window normalisation, the LSTM + squeeze-excite encoder
//!   and the per-level SNR head.
//! - [`fusion`]: Fourier-domain Wiener modulation of feature maps driven by
//!   the vibration SNR, plus concat/sum baselines.
//! - [`networks`]: compact depth encoder-decoder and pose regressor,
//!   parameter store and checkpoint archive.
//! - [`losses`]: brightness-aware photometric, edge-aware smoothness and
//!   geometric consistency losses.
//! - [`simdata`]: procedural tube scenes, trajectories, vibration synthesis,
//!   corruptions and the on-disk dataset format.
//! - [`metrics`]: depth and ego-motion metrics and report aggregation.
//! - [`harness`]: Adam, training, evaluation, sweeps and SVG plots.

pub mod diffnum;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod simdata;
pub mod vibration;

pub(crate) mod seed;

pub use error::{Error, Result};
