//! Model construction and training: layer planning, the seven regression
//! architectures, mixing-unit initialization, the two-phase training
//! loop, and checkpoint serialization.

pub mod alpha;
pub mod checkpoint;
pub mod model;
pub mod plan;
pub mod train;

pub use alpha::{alpha_dim, chunk_width, init_alpha, init_beta, AlphaKind};
pub use checkpoint::{load_model, save_model};
pub use model::{make_batch, merge_batches, BnState, Mode, Model, ModelConfig, ModelKind, TaskBatch};
pub use plan::{build_layer_plan, embedding_dim};
pub use train::{train, validation_loss, LossTrace, TrainSettings};
