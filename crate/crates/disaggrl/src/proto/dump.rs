//! Pretty-printer for captured frame streams (the `proto-dump` subcommand).

use std::fmt::Write as _;

use super::msg::{decode_frame, Message};
use super::wire::{ProtoError, WireData, WireTensor};

fn tensor_summary(t: &WireTensor) -> String {
    let mut s = format!("{:?}{:?}", t.dtype(), t.dims);
    if t.numel() <= 8 {
        match &t.data {
            WireData::F32(v) => write!(s, " = {v:?}").unwrap(),
            WireData::I32(v) => write!(s, " = {v:?}").unwrap(),
            WireData::U8(v) => write!(s, " = {v:?}").unwrap(),
        }
    }
    s
}

fn describe(msg: &Message) -> String {
    match msg {
        Message::Hello {
            replica_id,
            num_envs,
            obs_spec,
        } => {
            let spec: Vec<String> = obs_spec
                .iter()
                .map(|e| format!("{} {:?}{:?}", e.name, e.dtype, e.dims))
                .collect();
            format!("replica_id={replica_id} num_envs={num_envs} obs_spec=[{}]", spec.join(", "))
        }
        Message::InitialObs { obs } => {
            let parts: Vec<String> = obs
                .iter()
                .map(|(n, t)| format!("{n}: {}", tensor_summary(t)))
                .collect();
            format!("obs{{{}}}", parts.join(", "))
        }
        Message::Actions { actions } => format!("actions {}", tensor_summary(actions)),
        Message::StepResult {
            rewards,
            dones,
            obs,
            successes,
        } => {
            let parts: Vec<String> = obs
                .iter()
                .map(|(n, t)| format!("{n}: {}", tensor_summary(t)))
                .collect();
            format!(
                "rewards {} dones {} obs{{{}}} successes {}",
                tensor_summary(rewards),
                tensor_summary(dones),
                parts.join(", "),
                tensor_summary(successes)
            )
        }
        Message::AdrUpdate { fractions } => format!("fractions {}", tensor_summary(fractions)),
        Message::Grads { step_id, flat } => {
            format!("step_id={step_id} flat {}", tensor_summary(flat))
        }
        Message::AvgGrads { step_id, flat } => {
            format!("step_id={step_id} flat {}", tensor_summary(flat))
        }
        Message::Shutdown => String::new(),
    }
}

/// Pretty-print every frame in `bytes`; returns the number of frames.
/// A trailing partial frame is reported, not an error; malformed bytes are.
pub fn dump_frames(bytes: &[u8], out: &mut impl std::io::Write) -> Result<usize, ProtoError> {
    let mut pos = 0;
    let mut count = 0;
    while pos < bytes.len() {
        match decode_frame(&bytes[pos..]) {
            Ok((msg, used)) => {
                writeln!(
                    out,
                    "frame {count}: {} ({} payload bytes) {}",
                    msg.type_name(),
                    used - super::msg::FRAME_OVERHEAD,
                    describe(&msg)
                )?;
                pos += used;
                count += 1;
            }
            Err(ProtoError::Incomplete { have, need }) => {
                writeln!(
                    out,
                    "trailing incomplete frame: {have} of {need} bytes present"
                )?;
                return Ok(count);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proto::{encode_frame, WireTensor};

    #[test]
    fn dumps_all_frames_and_reports_trailing_partial() {
        let mut bytes = Vec::new();
        bytes.extend(
            encode_frame(&Message::Actions {
                actions: WireTensor::f32(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap(),
            })
            .unwrap(),
        );
        bytes.extend(encode_frame(&Message::Shutdown).unwrap());
        let full = encode_frame(&Message::AdrUpdate {
            fractions: WireTensor::f32(vec![2], vec![0.0, 1.0]).unwrap(),
        })
        .unwrap();
        bytes.extend(&full[..full.len() - 2]);

        let mut out = Vec::new();
        let n = dump_frames(&bytes, &mut out).unwrap();
        assert_eq!(n, 2);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("frame 0: Actions"));
        assert!(text.contains("frame 1: Shutdown"));
        assert!(text.contains("trailing incomplete frame"));
    }

    #[test]
    fn corrupt_stream_is_an_error() {
        let mut bytes = encode_frame(&Message::Shutdown).unwrap();
        bytes[0] = b'X';
        assert!(dump_frames(&bytes, &mut Vec::new()).is_err());
    }
}
