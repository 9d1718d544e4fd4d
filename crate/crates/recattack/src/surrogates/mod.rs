//! Surrogate recommenders the attacker trains locally and differentiates.
//!
//! Every surrogate implements [`TransitionModel`] (so the inner training
//! loop can be recorded and unrolled) plus the [`Surrogate`] extension for
//! producing normal-user predictions and pulling an adversarial gradient on
//! those predictions back to parameters and, where the model supports it,
//! directly to the fake block.

pub mod als;
pub mod itemae;
pub mod wrmf;

use ndarray::Array2;

pub use als::{als_adv_partial, wrmf_train_als, AlsConfig};
pub use itemae::{itemae_train, ItemAeConfig, ItemAeModel, ItemAeParams};
pub use wrmf::{wrmf_loss, wrmf_train_sgd, WrmfConfig, WrmfModel, WrmfParams};

use crate::diffkit::{Theta, TransitionModel};
use crate::error::Result;

/// A trainable surrogate with a ranking head.
pub trait Surrogate: TransitionModel {
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    fn n_fake(&self) -> usize;

    /// Seeded Gaussian (mean 0, std 0.1) parameter initialization.
    fn init_theta(&self, seed: u64) -> Theta;

    /// Prediction scores for normal users only, `n_users x n_items`.
    fn predictions(&self, theta: &Theta, xhat: &Array2<f64>) -> Result<Array2<f64>>;

    /// Pull `dL_adv/dR` back to `(dL_adv/dtheta, direct dL_adv/dxhat)`.
    ///
    /// The second component is `None` for models whose predictions never
    /// read the fake block at inference time (factorization models score
    /// normal users from their own factors), and `Some` for models that
    /// condition predictions on the interaction data itself.
    fn adv_pullback(
        &self,
        theta: &Theta,
        xhat: &Array2<f64>,
        g_r: &Array2<f64>,
    ) -> Result<(Theta, Option<Array2<f64>>)>;
}

/// Seeded standard-practice initializer shared by the surrogate models.
pub(crate) fn gaussian_init(len: usize, seed: u64) -> Theta {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, 0.1).expect("valid normal");
    Theta::from_iter((0..len).map(|_| dist.sample(&mut rng)))
}
