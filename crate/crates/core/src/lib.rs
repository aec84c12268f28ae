//! Shallow convolutional classifier for histopathology tiles, written from the tensor
//! level up: NHWC tensors, im2col convolution, max pooling, dense and dropout layers,
//! softmax cross-entropy, RMSprop, a deterministic image pipeline, checkpointing, and
//! run reporting.

pub mod cli;
pub mod data;
pub mod error;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod report;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Checkpoint, Model, ModelSpec, TrainConfig, Trainer};
pub use tensor::{Scalar, Tensor};
