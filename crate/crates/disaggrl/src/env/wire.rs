//! Observation batches <-> named wire tensors.

use crate::proto::{Dtype, ObsSpecEntry, WireTensor};

use super::{EnvConfig, EnvError, ObsBatch, PROPRIO_DIM};

/// Per-env observation spec announced in `Hello`.
pub fn obs_spec(cfg: &EnvConfig) -> Vec<ObsSpecEntry> {
    vec![
        ObsSpecEntry {
            name: cfg.obs_mode.primary_name().to_string(),
            dtype: Dtype::F32,
            dims: cfg.primary_dims(),
        },
        ObsSpecEntry {
            name: "proprio".to_string(),
            dtype: Dtype::F32,
            dims: vec![PROPRIO_DIM as u32],
        },
    ]
}

/// Pack a batch into the named tensor set `{primary, proprio}` with a
/// leading batch dimension.
pub fn obs_to_named(cfg: &EnvConfig, batch: &ObsBatch) -> Vec<(String, WireTensor)> {
    let mut primary_dims = vec![batch.n as u32];
    primary_dims.extend(cfg.primary_dims());
    vec![
        (
            cfg.obs_mode.primary_name().to_string(),
            WireTensor::f32(primary_dims, batch.primary.clone()).expect("consistent obs dims"),
        ),
        (
            "proprio".to_string(),
            WireTensor::f32(
                vec![batch.n as u32, PROPRIO_DIM as u32],
                batch.proprio.clone(),
            )
            .expect("consistent proprio dims"),
        ),
    ]
}

/// Unpack a named tensor set produced by `obs_to_named`, validating names
/// and shapes against the config.
pub fn obs_from_named(
    cfg: &EnvConfig,
    named: &[(String, WireTensor)],
    expect_n: usize,
) -> Result<ObsBatch, EnvError> {
    let find = |name: &str| {
        named
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| EnvError::ObsShape(format!("missing obs tensor {name:?}")))
    };
    let primary = find(cfg.obs_mode.primary_name())?;
    let proprio = find("proprio")?;

    let mut want_dims = vec![expect_n as u32];
    want_dims.extend(cfg.primary_dims());
    if primary.dims != want_dims {
        return Err(EnvError::ObsShape(format!(
            "primary obs dims {:?}, expected {:?}",
            primary.dims, want_dims
        )));
    }
    if proprio.dims != vec![expect_n as u32, PROPRIO_DIM as u32] {
        return Err(EnvError::ObsShape(format!(
            "proprio dims {:?}, expected [{expect_n}, {PROPRIO_DIM}]",
            proprio.dims
        )));
    }
    let primary_data = primary
        .as_f32()
        .map_err(|e| EnvError::ObsShape(e.to_string()))?;
    let proprio_data = proprio
        .as_f32()
        .map_err(|e| EnvError::ObsShape(e.to_string()))?;
    Ok(ObsBatch {
        n: expect_n,
        primary_dim: cfg.primary_dim(),
        primary: primary_data.to_vec(),
        proprio: proprio_data.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::VecEnv;

    #[test]
    fn named_roundtrip_is_exact() {
        let cfg = EnvConfig::default();
        let v = VecEnv::new(cfg.clone(), 4, 0, 3).unwrap();
        let obs = v.observe();
        let named = obs_to_named(&cfg, &obs);
        assert_eq!(named[0].0, "depth");
        assert_eq!(named[1].0, "proprio");
        let back = obs_from_named(&cfg, &named, 3).unwrap();
        assert_eq!(back, obs);
    }

    #[test]
    fn wrong_batch_size_rejected() {
        let cfg = EnvConfig::default();
        let v = VecEnv::new(cfg.clone(), 4, 0, 3).unwrap();
        let named = obs_to_named(&cfg, &v.observe());
        assert!(obs_from_named(&cfg, &named, 4).is_err());
    }

    #[test]
    fn missing_tensor_rejected() {
        let cfg = EnvConfig::default();
        let v = VecEnv::new(cfg.clone(), 4, 0, 2).unwrap();
        let mut named = obs_to_named(&cfg, &v.observe());
        named.remove(0);
        assert!(obs_from_named(&cfg, &named, 2).is_err());
    }
}
