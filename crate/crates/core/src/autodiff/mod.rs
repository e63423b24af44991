//! Minimal reverse-mode automatic differentiation over dense 64-bit tensors,
//! plus the initializer, optimizer, and learning-rate schedule the training
//! recipe needs.

mod init;
mod optim;
mod schedule;
mod tape;
mod tensor;

pub use init::xavier_init;
pub use optim::{Adam, OptimizerState};
pub use schedule::LrSchedule;
pub use tape::{BatchStats, NodeId, ParamId, ParamStore, Tape};
pub use tensor::Tensor;
