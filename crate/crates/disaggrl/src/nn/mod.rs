//! Minimal dense network core with exact analytic gradients.
//!
//! The policy is a 4-layer CNN (3x3 kernels, stride 2, zero padding 1), each
//! conv followed by layer normalization and ReLU, then a linear embedding,
//! concatenation with proprioception, a feedforward or recurrent trunk, and
//! Gaussian-policy / value / optional auxiliary heads. All parameters live
//! in one flat f32 vector in a documented fixed order; gradients come back
//! in the same layout. Compute is f32 end to end; f64 appears only in
//! weight initialization and in test oracles.

mod adam;
mod checkpoint;
mod gaussian;
pub mod layers;
pub mod linalg;
mod policy;
pub mod rnn;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState, NonFinitePolicy};
pub use checkpoint::{load_checkpoint, load_into, load_policy, save_checkpoint, CheckpointMeta};
pub use gaussian::{gaussian_logprob_entropy, logprob_entropy_single, ENTROPY_PER_UNIT_SIGMA};
pub use policy::{
    CellKind, FwdCache, FwdOut, HeadGrads, InputKind, NetConfig, ObsInput, ParamDesc, PolicyNet,
    TrunkConfig, LOG_STD_MAX, LOG_STD_MIN,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error in {layer}: expected {want}, got {got}")]
    Shape {
        layer: String,
        want: String,
        got: String,
    },
    #[error("invalid net config: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("optimizer error: {0}")]
    Opt(String),
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Proto(#[from] crate::proto::ProtoError),
}
