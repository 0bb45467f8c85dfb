//! Reverse-mode autodiff, the layers built on it, optimization and
//! checkpointing.

mod checkpoint;
mod layers;
mod linalg;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointEntry, NNCK_VERSION};
pub use layers::{
    cross_entropy, layer_norm, linear_embed, mlp_block, msa_block, softmax_head, EncoderLayer,
    HeadParams, LayerNormParams, LN_EPS,
};
pub use optim::{Adam, LrSchedule, ScheduleDecision, TrainConfig};
pub use params::{truncated_normal, ParamId, ParamStore};
pub use tape::{attention_weights, gelu, Gradients, Tape, Var, PROB_FLOOR};
pub use tensor::Tensor;

pub mod gradcheck;
#[cfg(test)]
mod tests;
