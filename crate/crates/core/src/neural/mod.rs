//! Minimal from-scratch neural toolkit: dense nets, a stacked LSTM,
//! sigmoid/BCE and MSE losses, an adaptive-moment optimizer, parameter
//! copying for target networks, and versioned checkpoint files.
//!
//! Everything trains in 64-bit floats; checkpoints store 32-bit.

pub mod checkpoint;
pub mod dense;
pub mod fdcheck;
pub mod loss;
pub mod lstm;
pub mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, FORMAT_VERSION};
pub use dense::{Activation, DenseLayer, DenseNet};
pub use loss::{bce_loss, bce_terms, mse_grad, mse_loss};
pub use lstm::{LstmCell, RecurrentNet, RecurrentState};
pub use optim::Adam;

use crate::error::{Result, SimError};

/// Anything with a flat parameter vector. The flat ordering is the contract
/// shared by the optimizer, target-network copies, checkpoints, and the
/// finite-difference checks.
pub trait Parameterized {
    fn param_count(&self) -> usize;

    /// Parameters in their canonical flat order.
    fn params(&self) -> Vec<f64>;

    /// Writes a flat parameter vector back. Errors on length mismatch.
    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    /// A short structural tag used to reject copies between incompatible
    /// architectures.
    fn arch_signature(&self) -> String;
}

/// Copies all parameters from `src` into `dst`. The destination keeps its own
/// storage, so later updates to `src` leave it untouched.
pub fn copy_params<N: Parameterized>(src: &N, dst: &mut N) -> Result<()> {
    if src.arch_signature() != dst.arch_signature() {
        return Err(SimError::ArchMismatch(format!(
            "cannot copy `{}` into `{}`",
            src.arch_signature(),
            dst.arch_signature()
        )));
    }
    dst.set_params(&src.params())
}
