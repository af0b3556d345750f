//! Self-supervised spectral autoencoder whose decoder renders a signed
//! mixture of skew-normal basis functions, plus the downstream tooling to
//! use its latent for classification and regression.
//!
//! Pipeline:
//!
//! 1. [`data_io`] loads a cube and zero-centres it with training-set band means.
//! 2. [`encoder`] maps each centred spectrum to `4k` bounded parameters.
//! 3. [`renderer`] turns those parameters back into a spectrum.
//! 4. [`trainer`] fits the encoder by minimising the Huber reconstruction loss.
//! 5. [`predictor`] fits random forests on the latent; [`metrics`] scores them.

pub mod commands;
pub mod data_io;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod predictor;
pub mod renderer;
pub mod special;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{SpectralModel, Variant};
