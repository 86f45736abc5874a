//! Checkpoint file format:
//!
//! ```text
//! magic "DSNN" | version u8 = 1 | meta_len u32 LE | meta JSON |
//!   one TensorWire (f32) per parameter, in ParamDesc order
//! ```
//!
//! The meta JSON carries the `NetConfig` plus free-form string tags (e.g.
//! the observation mode). Loading into an existing net rejects any config
//! mismatch.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::proto::{decode_tensor, encode_tensor, WireData, WireTensor};

use super::policy::{NetConfig, PolicyNet};
use super::NnError;

pub const CKPT_MAGIC: [u8; 4] = *b"DSNN";
pub const CKPT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub net: NetConfig,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

/// Serialize `net` (with tags) to `path`.
pub fn save_checkpoint(
    path: &Path,
    net: &PolicyNet,
    tags: BTreeMap<String, String>,
) -> Result<(), NnError> {
    let meta = CheckpointMeta {
        net: net.cfg.clone(),
        tags,
    };
    let meta_json =
        serde_json::to_vec(&meta).map_err(|e| NnError::Checkpoint(format!("meta: {e}")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&CKPT_MAGIC);
    buf.push(CKPT_VERSION);
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    for d in net.descs() {
        let dims: Vec<u32> = d.shape.iter().map(|&s| s as u32).collect();
        let t = WireTensor::f32(
            dims,
            net.params()[d.offset..d.offset + d.len].to_vec(),
        )?;
        encode_tensor(&mut buf, &t);
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a checkpoint's meta and flat parameters.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, Vec<f32>), NnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 9 || bytes[..4] != CKPT_MAGIC {
        return Err(NnError::Checkpoint("bad magic (not a DSNN file)".into()));
    }
    if bytes[4] != CKPT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {} (expected {CKPT_VERSION})",
            bytes[4]
        )));
    }
    let meta_len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    if bytes.len() < 9 + meta_len {
        return Err(NnError::Checkpoint("truncated meta".into()));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[9..9 + meta_len])
        .map_err(|e| NnError::Checkpoint(format!("meta JSON: {e}")))?;

    // Walk the expected descriptors of the embedded config.
    let reference = PolicyNet::new(meta.net.clone(), 0)?;
    let mut params = vec![0.0f32; reference.num_params()];
    let mut pos = 9 + meta_len;
    for d in reference.descs() {
        let (t, used) = decode_tensor(&bytes[pos..])
            .map_err(|e| NnError::Checkpoint(format!("param {}: {e}", d.name)))?;
        pos += used;
        let want_dims: Vec<u32> = d.shape.iter().map(|&s| s as u32).collect();
        if t.dims != want_dims {
            return Err(NnError::Checkpoint(format!(
                "param {}: dims {:?}, expected {:?}",
                d.name, t.dims, want_dims
            )));
        }
        match t.data {
            WireData::F32(v) => params[d.offset..d.offset + d.len].copy_from_slice(&v),
            other => {
                return Err(NnError::Checkpoint(format!(
                    "param {}: dtype {:?}, expected f32",
                    d.name,
                    other.dtype()
                )))
            }
        }
    }
    if pos != bytes.len() {
        return Err(NnError::Checkpoint(format!(
            "{} trailing bytes after parameters",
            bytes.len() - pos
        )));
    }
    Ok((meta, params))
}

/// Build a policy from a checkpoint's embedded config.
pub fn load_policy(path: &Path) -> Result<(PolicyNet, CheckpointMeta), NnError> {
    let (meta, params) = load_checkpoint(path)?;
    let net = PolicyNet::from_flat(meta.net.clone(), params)?;
    Ok((net, meta))
}

/// Load parameters into an existing net; the stored config must match
/// exactly.
pub fn load_into(path: &Path, net: &mut PolicyNet) -> Result<CheckpointMeta, NnError> {
    let (meta, params) = load_checkpoint(path)?;
    if meta.net != net.cfg {
        return Err(NnError::ConfigMismatch(format!(
            "checkpoint config {:?} != net config {:?}",
            meta.net, net.cfg
        )));
    }
    net.params_mut().copy_from_slice(&params);
    Ok(meta)
}
