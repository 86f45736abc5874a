//! Typed messages and frame encode/decode.

use std::io::{Read, Write};

use super::wire::{
    decode_named_tensors, decode_string, decode_tensor_at, encode_named_tensors, encode_string,
    encode_tensor, put_u32, put_u64, Cursor, Dtype, ProtoError, WireTensor,
};

pub const MAGIC: [u8; 4] = *b"DSRL";
pub const VERSION: u8 = 1;
/// Header bytes preceding every payload: magic + version + type + length.
pub const FRAME_OVERHEAD: usize = 10;

/// Per-env observation entry announced in `Hello` (dims exclude the batch
/// dimension).
#[derive(Clone, Debug, PartialEq)]
pub struct ObsSpecEntry {
    pub name: String,
    pub dtype: Dtype,
    pub dims: Vec<u32>,
}

/// The replica<->learner message set.
#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Hello {
        replica_id: u32,
        num_envs: u32,
        obs_spec: Vec<ObsSpecEntry>,
    },
    InitialObs {
        obs: Vec<(String, WireTensor)>,
    },
    Actions {
        actions: WireTensor,
    },
    StepResult {
        rewards: WireTensor,
        dones: WireTensor,
        obs: Vec<(String, WireTensor)>,
        successes: WireTensor,
    },
    AdrUpdate {
        fractions: WireTensor,
    },
    Grads {
        step_id: u64,
        flat: WireTensor,
    },
    AvgGrads {
        step_id: u64,
        flat: WireTensor,
    },
    Shutdown,
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        match self {
            Message::Hello { .. } => 1,
            Message::InitialObs { .. } => 2,
            Message::Actions { .. } => 3,
            Message::StepResult { .. } => 4,
            Message::AdrUpdate { .. } => 5,
            Message::Grads { .. } => 6,
            Message::AvgGrads { .. } => 7,
            Message::Shutdown => 8,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "Hello",
            Message::InitialObs { .. } => "InitialObs",
            Message::Actions { .. } => "Actions",
            Message::StepResult { .. } => "StepResult",
            Message::AdrUpdate { .. } => "AdrUpdate",
            Message::Grads { .. } => "Grads",
            Message::AvgGrads { .. } => "AvgGrads",
            Message::Shutdown => "Shutdown",
        }
    }
}

fn encode_payload(msg: &Message, buf: &mut Vec<u8>) {
    match msg {
        Message::Hello {
            replica_id,
            num_envs,
            obs_spec,
        } => {
            put_u32(buf, *replica_id);
            put_u32(buf, *num_envs);
            put_u32(buf, obs_spec.len() as u32);
            for e in obs_spec {
                encode_string(buf, &e.name);
                buf.push(e.dtype.code());
                buf.push(e.dims.len() as u8);
                for &d in &e.dims {
                    put_u32(buf, d);
                }
            }
        }
        Message::InitialObs { obs } => encode_named_tensors(buf, obs),
        Message::Actions { actions } => encode_tensor(buf, actions),
        Message::StepResult {
            rewards,
            dones,
            obs,
            successes,
        } => {
            encode_tensor(buf, rewards);
            encode_tensor(buf, dones);
            encode_named_tensors(buf, obs);
            encode_tensor(buf, successes);
        }
        Message::AdrUpdate { fractions } => encode_tensor(buf, fractions),
        Message::Grads { step_id, flat } => {
            put_u64(buf, *step_id);
            encode_tensor(buf, flat);
        }
        Message::AvgGrads { step_id, flat } => {
            put_u64(buf, *step_id);
            encode_tensor(buf, flat);
        }
        Message::Shutdown => {}
    }
}

fn decode_payload(msg_type: u8, payload: &[u8]) -> Result<Message, ProtoError> {
    let mut c = Cursor::new(payload);
    let msg = match msg_type {
        1 => {
            let replica_id = c.u32()?;
            let num_envs = c.u32()?;
            let n = c.u32()? as usize;
            if n > 256 {
                return Err(ProtoError::Protocol(format!(
                    "obs spec count {n} is implausibly large"
                )));
            }
            let mut obs_spec = Vec::with_capacity(n);
            for _ in 0..n {
                let name = decode_string(&mut c)?;
                let dtype = Dtype::from_code(c.u8()?)?;
                let ndims = c.u8()? as usize;
                let mut dims = Vec::with_capacity(ndims);
                for _ in 0..ndims {
                    dims.push(c.u32()?);
                }
                obs_spec.push(ObsSpecEntry { name, dtype, dims });
            }
            Message::Hello {
                replica_id,
                num_envs,
                obs_spec,
            }
        }
        2 => Message::InitialObs {
            obs: decode_named_tensors(&mut c)?,
        },
        3 => Message::Actions {
            actions: decode_tensor_at(&mut c)?,
        },
        4 => {
            let rewards = decode_tensor_at(&mut c)?;
            let dones = decode_tensor_at(&mut c)?;
            let obs = decode_named_tensors(&mut c)?;
            let successes = decode_tensor_at(&mut c)?;
            Message::StepResult {
                rewards,
                dones,
                obs,
                successes,
            }
        }
        5 => Message::AdrUpdate {
            fractions: decode_tensor_at(&mut c)?,
        },
        6 => Message::Grads {
            step_id: c.u64()?,
            flat: decode_tensor_at(&mut c)?,
        },
        7 => Message::AvgGrads {
            step_id: c.u64()?,
            flat: decode_tensor_at(&mut c)?,
        },
        8 => Message::Shutdown,
        t => return Err(ProtoError::Protocol(format!("unknown msg_type {t}"))),
    };
    if !c.is_done() {
        return Err(ProtoError::Protocol(format!(
            "payload_len mismatch: {} trailing bytes after {} payload",
            c.remaining(),
            msg.type_name()
        )));
    }
    Ok(msg)
}

/// Encode a message into one complete frame.
pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, ProtoError> {
    validate(msg)?;
    let mut payload = Vec::new();
    encode_payload(msg, &mut payload);
    let mut frame = Vec::with_capacity(FRAME_OVERHEAD + payload.len());
    frame.extend_from_slice(&MAGIC);
    frame.push(VERSION);
    frame.push(msg.msg_type());
    put_u32(&mut frame, payload.len() as u32);
    frame.extend_from_slice(&payload);
    Ok(frame)
}

fn validate(msg: &Message) -> Result<(), ProtoError> {
    // WireTensor construction already enforces dims/data agreement; re-check
    // here so hand-built structs cannot slip through.
    let check = |t: &WireTensor| -> Result<(), ProtoError> {
        let want: u64 = t.dims.iter().map(|&d| d as u64).product();
        if want != t.numel() as u64 {
            return Err(ProtoError::Encode(format!(
                "tensor data length {} does not match dims {:?}",
                t.numel(),
                t.dims
            )));
        }
        Ok(())
    };
    match msg {
        Message::InitialObs { obs } => obs.iter().try_for_each(|(_, t)| check(t)),
        Message::Actions { actions } => check(actions),
        Message::StepResult {
            rewards,
            dones,
            obs,
            successes,
        } => {
            check(rewards)?;
            check(dones)?;
            check(successes)?;
            obs.iter().try_for_each(|(_, t)| check(t))
        }
        Message::AdrUpdate { fractions } => check(fractions),
        Message::Grads { flat, .. } | Message::AvgGrads { flat, .. } => check(flat),
        Message::Hello { .. } | Message::Shutdown => Ok(()),
    }
}

/// Decode one frame from the front of `buf`. Returns the message and the
/// total bytes consumed (header + payload). `Incomplete` means the buffer
/// ends before the frame does; any other error is fatal.
pub fn decode_frame(buf: &[u8]) -> Result<(Message, usize), ProtoError> {
    let magic_have = buf.len().min(4);
    if buf[..magic_have] != MAGIC[..magic_have] {
        return Err(ProtoError::Protocol(format!(
            "bad magic {:02x?}",
            &buf[..magic_have]
        )));
    }
    if buf.len() < FRAME_OVERHEAD {
        return Err(ProtoError::Incomplete {
            have: buf.len(),
            need: FRAME_OVERHEAD,
        });
    }
    let version = buf[4];
    if version != VERSION {
        return Err(ProtoError::Protocol(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let msg_type = buf[5];
    let payload_len = u32::from_le_bytes([buf[6], buf[7], buf[8], buf[9]]) as usize;
    let total = FRAME_OVERHEAD + payload_len;
    if buf.len() < total {
        return Err(ProtoError::Incomplete {
            have: buf.len(),
            need: total,
        });
    }
    let msg = decode_payload(msg_type, &buf[FRAME_OVERHEAD..total])?;
    Ok((msg, total))
}

/// Write one frame to a byte sink.
pub fn write_frame(w: &mut impl Write, msg: &Message) -> Result<(), ProtoError> {
    let frame = encode_frame(msg)?;
    w.write_all(&frame)?;
    Ok(())
}

/// Blocking read of exactly one frame from a byte source positioned at a
/// frame boundary. EOF mid-frame surfaces as `Incomplete`.
pub fn read_frame(r: &mut impl Read) -> Result<Message, ProtoError> {
    let mut header = [0u8; FRAME_OVERHEAD];
    read_exact_or_incomplete(r, &mut header, 0)?;
    if header[..4] != MAGIC {
        return Err(ProtoError::Protocol(format!(
            "bad magic {:02x?}",
            &header[..4]
        )));
    }
    if header[4] != VERSION {
        return Err(ProtoError::Protocol(format!(
            "unsupported version {} (expected {VERSION})",
            header[4]
        )));
    }
    let payload_len = u32::from_le_bytes([header[6], header[7], header[8], header[9]]) as usize;
    let mut payload = vec![0u8; payload_len];
    read_exact_or_incomplete(r, &mut payload, FRAME_OVERHEAD)?;
    decode_payload(header[5], &payload)
}

fn read_exact_or_incomplete(
    r: &mut impl Read,
    buf: &mut [u8],
    already: usize,
) -> Result<(), ProtoError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(ProtoError::Incomplete {
                    have: already + filled,
                    need: already + buf.len(),
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(ProtoError::Io(e)),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(msg: &Message) -> Message {
        let bytes = encode_frame(msg).unwrap();
        let (back, used) = decode_frame(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        back
    }

    #[test]
    fn shutdown_is_ten_bytes() {
        let bytes = encode_frame(&Message::Shutdown).unwrap();
        assert_eq!(bytes.len(), 10);
        assert_eq!(&bytes[..4], b"DSRL");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], Message::Shutdown.msg_type());
        assert_eq!(&bytes[6..10], &0u32.to_le_bytes());
        assert_eq!(roundtrip(&Message::Shutdown), Message::Shutdown);
    }

    #[test]
    fn actions_2x3_payload_is_34_bytes() {
        let msg = Message::Actions {
            actions: WireTensor::f32(vec![2, 3], vec![0.0; 6]).unwrap(),
        };
        let bytes = encode_frame(&msg).unwrap();
        assert_eq!(bytes.len(), FRAME_OVERHEAD + 34);
        assert_eq!(roundtrip(&msg), msg);
    }

    #[test]
    fn frame_overhead_is_constant() {
        for msg in [
            Message::Shutdown,
            Message::AdrUpdate {
                fractions: WireTensor::f32(vec![4], vec![0.0, 0.25, 0.5, 1.0]).unwrap(),
            },
            Message::Grads {
                step_id: 77,
                flat: WireTensor::f32(vec![3], vec![1.0, 2.0, 3.0]).unwrap(),
            },
        ] {
            let bytes = encode_frame(&msg).unwrap();
            let mut payload = Vec::new();
            encode_payload(&msg, &mut payload);
            assert_eq!(bytes.len(), FRAME_OVERHEAD + payload.len());
        }
    }

    #[test]
    fn hello_roundtrip() {
        let msg = Message::Hello {
            replica_id: 2,
            num_envs: 86,
            obs_spec: vec![
                ObsSpecEntry {
                    name: "depth".into(),
                    dtype: Dtype::F32,
                    dims: vec![1, 32, 32],
                },
                ObsSpecEntry {
                    name: "proprio".into(),
                    dtype: Dtype::F32,
                    dims: vec![7],
                },
            ],
        };
        assert_eq!(roundtrip(&msg), msg);
    }

    #[test]
    fn step_result_roundtrip_preserves_obs_order() {
        let msg = Message::StepResult {
            rewards: WireTensor::f32(vec![2], vec![-0.1, 0.4]).unwrap(),
            dones: WireTensor::u8(vec![2], vec![0, 1]).unwrap(),
            obs: vec![
                (
                    "depth".into(),
                    WireTensor::f32(vec![2, 1, 2, 2], vec![1.0; 8]).unwrap(),
                ),
                (
                    "proprio".into(),
                    WireTensor::f32(vec![2, 7], vec![0.5; 14]).unwrap(),
                ),
            ],
            successes: WireTensor::u8(vec![2], vec![0, 1]).unwrap(),
        };
        assert_eq!(roundtrip(&msg), msg);
    }

    #[test]
    fn truncated_header_is_incomplete() {
        let bytes = encode_frame(&Message::Shutdown).unwrap();
        for cut in 0..bytes.len() {
            let err = decode_frame(&bytes[..cut]).unwrap_err();
            assert!(err.is_incomplete(), "cut {cut}: {err}");
        }
    }

    #[test]
    fn truncated_payload_is_incomplete() {
        let msg = Message::Actions {
            actions: WireTensor::f32(vec![2, 3], vec![0.5; 6]).unwrap(),
        };
        let bytes = encode_frame(&msg).unwrap();
        let err = decode_frame(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.is_incomplete());
    }

    #[test]
    fn bad_magic_is_protocol_error_even_when_short() {
        let err = decode_frame(b"XXXX").unwrap_err();
        assert!(matches!(err, ProtoError::Protocol(_)));
        let err = decode_frame(b"XX").unwrap_err();
        assert!(matches!(err, ProtoError::Protocol(_)));
    }

    #[test]
    fn bad_version_and_type_are_protocol_errors() {
        let mut bytes = encode_frame(&Message::Shutdown).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_frame(&bytes).unwrap_err(),
            ProtoError::Protocol(_)
        ));
        let mut bytes = encode_frame(&Message::Shutdown).unwrap();
        bytes[5] = 99;
        assert!(matches!(
            decode_frame(&bytes).unwrap_err(),
            ProtoError::Protocol(_)
        ));
    }

    #[test]
    fn declared_length_longer_than_payload_is_protocol_error() {
        // Shutdown frame claiming 3 payload bytes that are actually present
        // but not part of a valid Shutdown payload.
        let mut bytes = encode_frame(&Message::Shutdown).unwrap();
        bytes[6] = 3;
        bytes.extend_from_slice(&[9, 9, 9]);
        let err = decode_frame(&bytes).unwrap_err();
        assert!(matches!(err, ProtoError::Protocol(_)), "{err}");
    }

    #[test]
    fn stream_read_frame_matches_buffer_decode() {
        let msg = Message::Grads {
            step_id: 123,
            flat: WireTensor::f32(vec![5], vec![1.0, -2.0, 3.0, -4.0, 5.0]).unwrap(),
        };
        let bytes = encode_frame(&msg).unwrap();
        let mut cursor = std::io::Cursor::new(bytes);
        assert_eq!(read_frame(&mut cursor).unwrap(), msg);
        let err = read_frame(&mut cursor).unwrap_err();
        assert!(err.is_incomplete()); // clean EOF at boundary
    }
}
