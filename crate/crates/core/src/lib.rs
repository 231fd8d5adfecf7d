//! AdaptoVision: a small CNN framework built around enhanced residual units,
//! depthwise Block-2 sub-blocks, hierarchical skip fusion and an analytic
//! cost model.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: NCHW `f64` tensors and a define-by-run tape.
//! * [`nn`]: convolution (im2col), batch norm, ELU, pooling, dropout, loss.
//! * [`gradcheck`]: finite-difference verification of tape gradients.
//! * [`arch`]: blocks, configuration, presets and the model builder.
//! * [`cost`]: parameter/FLOP accounting and constraint checks.
//! * [`train`]: schedules, SGD, the training loop, metrics and checkpoints.
//! * [`data`]: CIFAR-10 binaries, synthetic data, augmentation, tiling.
//! * [`cli`]: the `adaptovision` command.

pub mod arch;
pub mod autodiff;
pub mod cli;
pub mod cost;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod tensor;
pub mod train;

pub use autodiff::{GradientMap, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
