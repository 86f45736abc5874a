//! Disaggregated simulation + RL testbed.
//!
//! Simulator replicas own vectorized toy "lift" environments and stream
//! observations to a single learner process that owns the experience buffers
//! and PPO training; a data-parallel baseline, an ADR curriculum, a memory
//! capacity planner, and depth/state -> stereo distillation round out the
//! system. Everything is deterministic given explicit seeds: the per-env
//! random streams are counter-based, so sharding environments across
//! replicas never changes what is simulated.
//!
//! Start with the `examples/` directory (one runnable example per
//! capability) or the `disaggrl` CLI.

pub mod distill;
pub mod env;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod nn;
pub mod proto;
pub mod replica;
pub mod rng;
pub mod tensor;
