//! Binary wire protocol between simulator replicas (and DP workers) and the
//! learner.
//!
//! Frame layout, all integers little-endian:
//!
//! ```text
//! magic "DSRL" (4) | version u8 = 1 | msg_type u8 | payload_len u32 | payload
//! ```
//!
//! Frame overhead is exactly 10 bytes regardless of payload. Tensors travel
//! as `TensorWire`:
//!
//! ```text
//! dtype u8 (0=f32, 1=i32, 2=u8) | ndims u8 | ndims x u32 dims | row-major data
//! ```
//!
//! Strings are `u32 length | UTF-8 bytes`; named tensor sets are
//! `u32 count | count x (string | TensorWire)` in a fixed, order-preserving
//! encoding. Message payloads (`msg_type` in parentheses):
//!
//! * `Hello` (1): `replica_id u32 | num_envs u32 | u32 count | count x
//!   (name | dtype u8 | ndims u8 | dims)` — per-env observation spec.
//! * `InitialObs` (2): named tensor set.
//! * `Actions` (3): one f32 TensorWire `[num_envs, action_dim]`.
//! * `StepResult` (4): rewards f32 | dones u8 | named obs set | successes u8.
//! * `AdrUpdate` (5): one f32 TensorWire `[num_adr_params]`.
//! * `Grads` (6) / `AvgGrads` (7): `step_id u64` | one f32 TensorWire.
//! * `Shutdown` (8): empty payload.
//!
//! Framing resynchronization is not supported: any `ProtoError::Protocol`
//! is fatal for the session and the connection must be closed.

mod dump;
mod msg;
mod session;
mod wire;

pub use dump::dump_frames;
pub use msg::{
    decode_frame, encode_frame, read_frame, write_frame, Message, ObsSpecEntry, FRAME_OVERHEAD,
    MAGIC, VERSION,
};
pub use session::{session_step, SessionError, SessionState};
pub use wire::{decode_tensor, encode_tensor, Dtype, ProtoError, WireData, WireTensor};
