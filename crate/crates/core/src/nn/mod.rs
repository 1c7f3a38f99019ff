//! Minimal differentiable-network engine in double precision.

pub mod blob;
mod graph;
mod init;
mod layers;
mod optim;
mod policy;
mod tensor;

pub use graph::{masked_log_softmax_row, Graph, Var, MASKED_LOG_PROB};
pub use init::orthogonal_init;
pub use layers::{Embedding, LayerNorm, Linear, LstmCell, Mlp};
pub use optim::{adam_step, AdamState};
pub use policy::{MaskedCategorical, NetworkSpec, PolicyNet, PolicyStep, RecurrentState, ValueNet, ValueStep};
pub use tensor::{Gradients, ParamId, ParamSet, Tensor};
