//! Minimal dense tensor engine with tape-based reverse-mode autodiff.
//!
//! Values are row-major [`Tensor`]s. A forward pass records every op on a
//! [`Tape`]; [`Tape::backward`] sweeps it in reverse and returns
//! [`Gradients`] for leaves and parameters. Sequence data uses a
//! `channels × time` layout for convolutions and `time × channels` for
//! attention.

pub mod checkpoint;
mod error;
mod gemm;
pub mod gradcheck;
mod ops;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gemm::gemm;
pub use ops::{conv1d_output_len, conv_transpose1d_output_len, LinearMap};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
