//! Data-poisoning attacks on implicit-feedback recommenders, with exact
//! gradients through the surrogate's training loop.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`interactions`] loads or synthesizes a binary feedback matrix and
//!    splits it for evaluation.
//! 2. [`surrogates`] trains differentiable surrogate recommenders (WRMF by
//!    gradient descent or ALS, an item autoencoder) while [`diffkit`]
//!    records the optimization trajectory.
//! 3. [`attack`] runs projected gradient descent over a block of fake user
//!    rows, using exact unrolled gradients, a truncated window, or a
//!    closed-form partial derivative as the adversarial signal.
//! 4. [`victims`] retrains a zoo of recommenders on the poisoned data and
//!    [`eval`] measures how far the target items climbed.
//! 5. [`diagnostics`] looks at the fake block the way a defender would.

pub mod diffkit;
pub mod error;
pub mod interactions;
pub mod linalg;
pub mod seeds;
pub mod surrogates;

pub use error::{Error, Result};
pub use interactions::{DatasetSplit, InteractionMatrix, PopularityBuckets, SyntheticSpec};
