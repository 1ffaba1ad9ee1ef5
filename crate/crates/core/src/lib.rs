//! Diffusion-for-perception at desk scale.
//!
//! Three ways of turning a v-prediction denoiser into a dense predictor are
//! implemented over a patchwise linear codec:
//!
//! * stochastic multi-step generation from a Gaussian carrier, conditioned on
//!   the image latent, with optional ensembling;
//! * deterministic multi-step generation where the image latent itself is the
//!   carrier;
//! * deterministic one-step prediction, the limit where every `beta_t = 1`.
//!
//! Around them sit a procedural scene renderer with analytic ground truth and
//! the usual depth, surface-normal and mask metrics.

pub mod codec;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod metrics;
pub mod paradigm;
pub mod raster;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
