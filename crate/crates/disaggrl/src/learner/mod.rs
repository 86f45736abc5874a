//! The trainer: experience buffers, GAE, PPO updates, the ADR controller,
//! rollout collection over replica links, and the data-parallel baseline.

mod buffer;
mod dp;
mod gae;
mod ppo;
mod rollout;
mod train;

use thiserror::Error;

pub use buffer::ExperienceBuffer;
pub use dp::{dp_hub, dp_peer};
pub use gae::{compute_gae, compute_gae_arrays, normalize_advantages};
pub use ppo::{
    clip_grad_norm, ppo_minibatch_grad, ppo_minibatch_loss, ppo_update, FlatBatch, PpoConfig,
    PpoStats,
};
pub use rollout::{
    accept_replicas, collect_rollout, local_links, validate_links, LocalLink, ReplicaLink,
    RolloutStats, TcpLink,
};
pub use train::{
    bind_with_retry, learner_main, train, train_local, NetSpec, TrainConfig, TrainMode,
    TrainSummary,
};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Proto(#[from] crate::proto::ProtoError),
    #[error(transparent)]
    Session(#[from] crate::proto::SessionError),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error("configuration error: {0}")]
    Config(String),
}
