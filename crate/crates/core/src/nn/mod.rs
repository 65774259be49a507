//! Feedforward networks, Adam, Gaussian policy heads and gradient checking.

mod adam;
pub mod fit;
pub mod checkpoint;
mod gaussian;
pub mod gradcheck;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use gaussian::{GaussianHead, SquashedSample, ACTION_LIMIT, LOG_STD_MAX, LOG_STD_MIN};
pub use gradcheck::{gradient_check, GradCheck, GradCheckOptions};
pub use mlp::{Activation, Layer, LayerGrad, Mlp, MlpGrads, Tape};

/// Uniform access to the flat parameter (or gradient) tensors of a model.
///
/// Implementations must return tensors in a fixed order so that parameters,
/// gradients and optimizer state line up index by index.
pub trait Parameters {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}
