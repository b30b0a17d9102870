//! Scene recovery for hazy, rainy and mixed degradations.
//!
//! The crate is organized as a pipeline:
//!
//! * [`physics`] synthesizes degraded images from clean ones with the
//!   atmospheric scattering model and additive rain streaks.
//! * [`freq`] converts images to grayscale and splits them into multi-scale
//!   high/low-frequency layers with a guided filter.
//! * [`tensor`] is a minimal dense N-d array with reverse-mode automatic
//!   differentiation covering exactly the operations the network needs.
//! * [`net`] is the restoration network: mixed residual blocks, an
//!   en-decoder coarse extractor and a fine fusion head stage.
//! * [`losses`] holds the cross-supervision, MS-SSIM and contrastive
//!   regularization objectives.
//! * [`metrics`], [`dataset`], [`train`] and [`ckpt`] provide evaluation,
//!   corpus synthesis, the training loop and checkpoint persistence.

pub mod ckpt;
pub mod dataset;
pub mod error;
pub mod freq;
pub mod gradsuite;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod physics;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
