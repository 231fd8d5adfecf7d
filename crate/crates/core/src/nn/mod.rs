//! Layer primitives. Each operation is a method on [`Var`](crate::autodiff::Var)
//! that records itself on the tape; tensor-level wrappers run one op on a
//! throwaway tape.

pub mod activation;
pub mod conv;
pub mod loss;
pub mod norm;
pub mod pool;

use serde::{Deserialize, Serialize};

pub use activation::{dropout, elu};
pub use conv::{conv2d, depthwise_conv2d, pointwise_conv2d, ConvParams};
pub use loss::softmax_cross_entropy;
pub use norm::{batch_norm, BatchNormParams};
pub use pool::{avg_pool, global_avg_pool, max_pool};

/// Whether layers use batch statistics and active dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}
