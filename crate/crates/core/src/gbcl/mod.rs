//! Gradient-based continual learners: a small embedding MLP trained online
//! with SGD, experience replay, or elastic weight consolidation.

mod mlp;
mod trainer;

pub use mlp::{
    grad_cross_entropy, init_params, Checkpoint, MlpParams, MlpShape, NamedTensor, ParamGroup,
    Sample, HIDDEN1, HIDDEN2, MODEL_DIM,
};
pub use trainer::{
    empirical_fisher, train_on_sequence, EwcState, Eviction, PenaltyStep, ReplayBuffer, Trainer, TrainerConfig,
    TrainerKind, DEFAULT_EWC_LAMBDA, DEFAULT_LR, DEFAULT_REPLAY_BATCH, DEFAULT_REPLAY_CAPACITY,
    DEFAULT_REPLAY_RATIO,
};
