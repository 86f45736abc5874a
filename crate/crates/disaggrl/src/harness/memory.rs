//! Closed-form device-memory model and capacity planner.
//!
//! All capacity math is exact integer arithmetic (u128 intermediates, no
//! floats). The shipped calibration reproduces the reference capacity table
//! (DP 1024/device at 160x120 and 256/device at 320x240; disaggregated
//! 2800 and 700 per simulator device on a 4-device node) and the 44GB
//! vision-simulator anchor; `examples/memplan_calibration.rs` derives the
//! constants and reports every anchor's residual.

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Parametric account of where device memory goes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryModel {
    /// Device memory budget B.
    pub budget_bytes: u64,
    /// Per-simulator-process asset cache A (env-count independent).
    pub asset_cache_bytes: u64,
    /// Per-env simulation cost: s0 + s1 * W * H.
    pub sim_env_base_bytes: u64,
    pub sim_env_per_pixel_bytes: u64,
    /// Learner fixed overhead L (weights, optimizer, activations).
    pub learner_fixed_bytes: u64,
    /// Buffer model: per env, H_steps * (C*W*H + P + overhead) * 4 bytes.
    pub buffer_proprio_dim: u64,
    pub buffer_overhead_scalars: u64,
}

impl Default for MemoryModel {
    fn default() -> Self {
        Self::calibrated_default()
    }
}

impl MemoryModel {
    /// Frozen output of the calibration fit (see
    /// `examples/memplan_calibration.rs`).
    pub fn calibrated_default() -> Self {
        Self {
            budget_bytes: 48_000_000_000,
            asset_cache_bytes: 41_698_611_200,
            sim_env_base_bytes: 4_096,
            sim_env_per_pixel_bytes: 117,
            learner_fixed_bytes: 2_735_000_000,
            buffer_proprio_dim: 32,
            buffer_overhead_scalars: 8,
        }
    }

    pub fn per_env_sim_bytes(&self, w: u64, h: u64) -> u64 {
        self.sim_env_base_bytes + self.sim_env_per_pixel_bytes * w * h
    }

    pub fn buffer_per_env_bytes(&self, w: u64, h: u64, h_steps: u64, channels: u64) -> u64 {
        h_steps * (channels * w * h + self.buffer_proprio_dim + self.buffer_overhead_scalars) * 4
    }
}

/// Image-block bytes of an experience buffer:
/// `n_envs * h_steps * channels * w * h * 4` (f32), overflow-checked.
pub fn buffer_bytes(
    w: u64,
    h: u64,
    n_envs: u64,
    h_steps: u64,
    channels: u64,
) -> Result<u64, HarnessError> {
    (w as u128)
        .checked_mul(h as u128)
        .and_then(|x| x.checked_mul(channels as u128))
        .and_then(|x| x.checked_mul(n_envs as u128))
        .and_then(|x| x.checked_mul(h_steps as u128))
        .and_then(|x| x.checked_mul(4))
        .and_then(|x| u64::try_from(x).ok())
        .ok_or(HarnessError::Overflow {
            what: "buffer_bytes",
        })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Layout {
    DataParallel { devices: u64 },
    Disaggregated { devices: u64 },
}

impl Layout {
    pub fn devices(&self) -> u64 {
        match *self {
            Layout::DataParallel { devices } | Layout::Disaggregated { devices } => devices,
        }
    }
}

/// The planner's verdict for one layout at one resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub layout: Layout,
    pub per_device_envs: u64,
    pub total_envs: u64,
    /// Disaggregated only: the two per-sim-device caps before the min.
    pub sim_device_cap: Option<u64>,
    pub learner_cap: Option<u64>,
    /// Set when the answer is 0 envs.
    pub reason: Option<String>,
}

/// Largest env counts satisfying the budget inequalities.
///
/// Data parallel, per device: A + N*(sim + buffer) + L <= B, N per device,
/// total = devices * N. Disaggregated: simulator devices hold
/// A + N_s * sim <= B; the learner holds the buffers of all
/// (devices-1) * N_s envs plus L within B; N_s is the min of the two caps.
pub fn max_envs(
    layout: Layout,
    model: &MemoryModel,
    w: u64,
    h: u64,
    h_steps: u64,
    channels: u64,
) -> Result<CapacityReport, HarnessError> {
    let b = model.budget_bytes;
    let sim = model.per_env_sim_bytes(w, h);
    let buf = model.buffer_per_env_bytes(w, h, h_steps, channels);
    match layout {
        Layout::DataParallel { devices } => {
            if devices == 0 {
                return Err(HarnessError::Config("zero devices".into()));
            }
            let fixed = model.asset_cache_bytes + model.learner_fixed_bytes;
            if fixed > b {
                return Ok(CapacityReport {
                    layout,
                    per_device_envs: 0,
                    total_envs: 0,
                    sim_device_cap: None,
                    learner_cap: None,
                    reason: Some(format!(
                        "infeasible: asset cache + learner overhead ({fixed}) exceed budget ({b})"
                    )),
                });
            }
            let per_env = sim + buf;
            let n = if per_env == 0 {
                u64::MAX
            } else {
                (b - fixed) / per_env
            };
            Ok(CapacityReport {
                layout,
                per_device_envs: n,
                total_envs: n.saturating_mul(devices),
                sim_device_cap: None,
                learner_cap: None,
                reason: (n == 0).then(|| "per-env cost exceeds remaining budget".to_string()),
            })
        }
        Layout::Disaggregated { devices } => {
            if devices < 2 {
                return Err(HarnessError::Config(
                    "disaggregated layout needs at least 2 devices".into(),
                ));
            }
            let sim_devices = devices - 1;
            if model.asset_cache_bytes > b {
                return Ok(CapacityReport {
                    layout,
                    per_device_envs: 0,
                    total_envs: 0,
                    sim_device_cap: Some(0),
                    learner_cap: None,
                    reason: Some(format!(
                        "infeasible: asset cache ({}) exceeds budget ({b})",
                        model.asset_cache_bytes
                    )),
                });
            }
            let sim_cap = if sim == 0 {
                u64::MAX
            } else {
                (b - model.asset_cache_bytes) / sim
            };
            let learner_cap = if model.learner_fixed_bytes > b {
                0
            } else if buf == 0 {
                u64::MAX
            } else {
                (b - model.learner_fixed_bytes) / (sim_devices * buf)
            };
            let n = sim_cap.min(learner_cap);
            Ok(CapacityReport {
                layout,
                per_device_envs: n,
                total_envs: n.saturating_mul(sim_devices),
                sim_device_cap: Some(sim_cap),
                learner_cap: Some(learner_cap),
                reason: (n == 0).then(|| {
                    if learner_cap == 0 {
                        "infeasible: learner overhead exceeds budget".to_string()
                    } else {
                        "per-env simulation cost exceeds remaining budget".to_string()
                    }
                }),
            })
        }
    }
}

/// Capacity table rows at the two reference resolutions.
pub fn reference_table(model: &MemoryModel, devices: u64) -> Result<Vec<TableRow>, HarnessError> {
    let mut rows = Vec::new();
    for (w, h) in [(160u64, 120u64), (320, 240)] {
        let dp = max_envs(Layout::DataParallel { devices }, model, w, h, 16, 1)?;
        let dis = max_envs(Layout::Disaggregated { devices }, model, w, h, 16, 1)?;
        rows.push(TableRow {
            width: w,
            height: h,
            dp_per_device: dp.per_device_envs,
            dp_total: dp.total_envs,
            disagg_per_device: dis.per_device_envs,
            disagg_total: dis.total_envs,
            ratio: if dp.total_envs == 0 {
                f64::INFINITY
            } else {
                dis.total_envs as f64 / dp.total_envs as f64
            },
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableRow {
    pub width: u64,
    pub height: u64,
    pub dp_per_device: u64,
    pub dp_total: u64,
    pub disagg_per_device: u64,
    pub disagg_total: u64,
    pub ratio: f64,
}

pub fn render_table(rows: &[TableRow]) -> String {
    let mut s = String::new();
    s.push_str("resolution   DP/device   DP total   Disagg/device   Disagg total   ratio\n");
    for r in rows {
        s.push_str(&format!(
            "{:>4}x{:<6} {:>9} {:>10} {:>15} {:>14} {:>7.2}\n",
            r.width, r.height, r.dp_per_device, r.dp_total, r.disagg_per_device, r.disagg_total,
            r.ratio
        ));
    }
    s
}
