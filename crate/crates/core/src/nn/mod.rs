//! Network layers, the residual backbone, the plain first-stage CNN and
//! checkpointing. All passes are hand-differentiated in 64-bit floats.

pub mod backbone;
pub mod block;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod plain;
pub mod tensor;

pub use backbone::{BackboneConfig, ResNet};
pub use block::ResidualBlock;
pub use checkpoint::{Checkpoint, NamedTensor};
pub use gradcheck::{check_layer, gradient_check, relative_error, GradCheckReport};
pub use layers::{BatchNorm1d, Conv1d, Dense, Dropout, GlobalAvgPool, Layer, MaxPool1d, Mode, Relu};
pub use model::{model_forward, Model, ModelConfig};
pub use plain::{PlainCnn, PlainCnnConfig};
pub use tensor::{NumericBatch, Param};
