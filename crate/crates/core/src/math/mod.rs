//! Numerical substrate: dense matrices, feed-forward networks with analytic
//! gradients, Adam, and the squashed-Gaussian policy head.

pub mod adam;
pub mod matrix;
pub mod mlp;
pub mod squash;

pub use adam::AdamState;
pub use matrix::{Cholesky, Matrix};
pub use mlp::{Layer, MlpCache, MlpParams};
pub use squash::{tanh_gaussian_sample, SquashedSample};
