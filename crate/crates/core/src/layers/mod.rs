//! Forward and backward kernels for every layer type the network uses.
//!
//! Each `*_forward` returns its output together with a cache holding exactly what the
//! matching `*_backward` needs. All kernels are pure functions of their arguments;
//! dropout takes its random source explicitly.

mod activation;
mod conv;
mod dense;
mod dropout;
mod flatten;
mod pool;

pub use activation::{relu_backward, relu_forward, softmax, ReluCache};
pub use conv::{
    conv2d_backward, conv2d_forward, conv_output_extent, Conv2dParams, ConvCache, ConvGeometry,
};
pub use dense::{dense_backward, dense_forward, DenseCache, DenseParams};
pub use dropout::{dropout_backward, dropout_forward, DropoutMask, DropoutParams};
pub use flatten::{flatten_backward, flatten_forward, FlattenCache};
pub use pool::{maxpool_backward, maxpool_forward, pool_output_extent, MaxPoolCache, MaxPoolParams};

use crate::tensor::{Scalar, Tensor};

/// Border handling for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Zero-pad so the output extent is `ceil(in / stride)`.
    Same,
    /// Only windows that fit entirely inside the input.
    Valid,
}

impl Padding {
    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        }
    }
}

impl std::str::FromStr for Padding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "same" => Ok(Padding::Same),
            "valid" => Ok(Padding::Valid),
            other => Err(format!("unknown padding '{other}' (expected same or valid)")),
        }
    }
}

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

/// Gradients produced by a layer's backward pass.
#[derive(Debug, Clone)]
pub struct LayerGrad<S: Scalar = f32> {
    /// Gradient with respect to the layer input.
    pub d_input: Tensor<S>,
    /// Gradients for each trainable tensor, in the layer's parameter order.
    pub d_params: Vec<Tensor<S>>,
}
