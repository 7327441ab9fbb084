//! Convolution over tensors of arbitrary order expressed as a sparse
//! `r`-order inner product, and a batch-mode CNN regression trainer built
//! on top of it.
//!
//! - [`tensor`]: dense and sparse tensors, tensor product, `⊙_r`, identity tensors.
//! - [`convolution`]: compounded filters, strides, zero padding, filter gradients.
//! - [`network`]: activations, layers, pooling, feature maps, losses.
//! - [`training`]: forward traces, the δ recursion, gradients, gradient descent, batch training.
//! - [`gradcheck`]: central finite differences against the analytic gradients.

pub mod convolution;
pub mod error;
pub mod gradcheck;
pub mod network;
pub mod tensor;
pub mod training;

pub use convolution::{
    compounded_filter, convolve, filter_gradient, output_dims, zero_pad, CompoundedPattern,
    ConvGeometry, FilterSpec, Padding,
};
pub use error::{Error, Result};
pub use network::{Activation, LayerConfig, LossKind, Network, PoolKind, PoolSpec};
pub use tensor::{identity_tensor, inner_product_r, tensor_product, DenseTensor, IndexRange, SparseTensor};
pub use training::{train, EpochRecord, ForwardTrace, Initializer, StopReason, TrainConfig, TrainOutcome};
