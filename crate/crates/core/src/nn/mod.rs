//! Dense networks with analytic backward passes.
//!
//! Tensors are plain `ndarray` arrays in standard (row-major) layout, 64-bit
//! throughout. Every trainable piece of the model is built from [`Mlp`] and
//! differentiated by hand; [`gradcheck`] verifies those derivatives against
//! central finite differences.

pub mod adam;
pub mod gradcheck;
pub mod loss;
pub mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{central_difference, fd_gradcheck, max_relative_error};
pub use loss::{focal_loss, l1_offset_loss, total_loss, LossWeights};
pub use mlp::{Activation, Mlp, MlpCache, MlpGrads};

/// Flat access to the trainable parameters of a model, in a fixed order.
pub trait Parameters {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }
}
