pub mod adam;
pub mod checkpoint;
pub mod dense;
pub mod gaussian;
pub mod gradcheck;
pub mod loss;
pub mod matrix;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use dense::{sigmoid, Activation, DenseLayer, Mlp, MlpTrace};
pub use gaussian::{gaussian_kl, reparameterize, GaussianHead};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{binary_cross_entropy, gaussian_recon_loss};
pub use matrix::Matrix;
