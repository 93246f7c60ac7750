//! Dense tensors with reverse-mode gradients, parameters, checkpoints and SGD.

mod graph;
mod optim;
mod param;
mod scalar;

pub mod gradcheck;

pub use graph::{Gradients, Graph, Var, NORM_EPSILON};
pub use optim::{sgd_step, ParamGrads, Sgd, DEFAULT_MOMENTUM};
pub use param::{read_checkpoint, CheckpointEntry, ParamStore, Parameter, CHECKPOINT_MAGIC};
pub use scalar::Scalar;
