//! Deterministic vectorized toy "lift" environment.
//!
//! A 2D gripper in the unit square must reach an object, grasp it, and lift
//! it above a height threshold. Observations are a synthetic depth image, a
//! stereo RGB pair, or the raw state vector, always accompanied by
//! proprioception. An ADR curriculum widens named randomization ranges from
//! an initial toward a terminal range as measured success crosses a
//! threshold.

mod adr;
pub mod dump;
pub mod render;
mod vec_env;
pub mod wire;
mod world;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adr::{AdrController, AdrParam, AdrSampler};
pub use render::{observe_primary, proprio, render_depth, render_stereo, state_vector};
pub use vec_env::{ObsBatch, StepBatch, VecEnv};
pub use world::{reset, step, EpisodeParams, StepOutcome, WorldState};

/// World-space disc radii and depths used by the renderers.
pub const GRIPPER_RADIUS: f32 = 0.03;
pub const OBJECT_RADIUS: f32 = 0.04;
pub const GRIPPER_DEPTH: f32 = 0.3;
pub const OBJECT_DEPTH: f32 = 0.5;
pub const BACKGROUND_DEPTH: f32 = 1.0;
/// Object height at and above which a grasped object counts as lifted.
pub const LIFT_HEIGHT: f32 = 0.8;
/// Grip-channel threshold for closing the gripper.
pub const GRIP_THRESHOLD: f32 = 0.5;
pub const SPAWN_GRIPPER: [f32; 2] = [0.5, 0.9];
pub const SPAWN_OBJECT_Y: f32 = 0.1;
pub const ACTION_DIM: usize = 3;
pub const PROPRIO_DIM: usize = 7;
pub const STATE_DIM: usize = 5;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action batch has {got} values, expected {want} ({envs} envs x {dim})")]
    ActionShape {
        got: usize,
        want: usize,
        envs: usize,
        dim: usize,
    },
    #[error("invalid env config: {0}")]
    Config(String),
    #[error("observation batch mismatch: {0}")]
    ObsShape(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsMode {
    Depth,
    Stereo,
    State,
}

impl ObsMode {
    /// Image channel count; `None` for the imageless state mode.
    pub fn channels(self) -> Option<usize> {
        match self {
            ObsMode::Depth => Some(1),
            ObsMode::Stereo => Some(6),
            ObsMode::State => None,
        }
    }

    /// Wire/obs-set name of the primary observation tensor.
    pub fn primary_name(self) -> &'static str {
        match self {
            ObsMode::Depth => "depth",
            ObsMode::Stereo => "stereo",
            ObsMode::State => "state",
        }
    }
}

impl std::fmt::Display for ObsMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.primary_name())
    }
}

impl std::str::FromStr for ObsMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "depth" => Ok(ObsMode::Depth),
            "stereo" => Ok(ObsMode::Stereo),
            "state" => Ok(ObsMode::State),
            other => Err(format!("unknown obs mode {other:?} (depth|stereo|state)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub dist_coef: f32,
    pub grasp_bonus: f32,
    pub height_coef: f32,
    pub success_bonus: f32,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            dist_coef: -0.1,
            grasp_bonus: 0.25,
            height_coef: 0.5,
            success_bonus: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdrParamConfig {
    pub name: String,
    pub initial: [f32; 2],
    pub terminal: [f32; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdrConfig {
    pub window: usize,
    pub threshold: f32,
    pub step: f32,
    pub params: Vec<AdrParamConfig>,
}

impl Default for AdrConfig {
    fn default() -> Self {
        Self {
            window: 512,
            threshold: 0.4,
            step: 0.05,
            params: default_adr_params(),
        }
    }
}

/// The four named randomization parameters and their recorded default ranges.
pub fn default_adr_params() -> Vec<AdrParamConfig> {
    vec![
        AdrParamConfig {
            name: "object_spawn_halfwidth".into(),
            initial: [0.05, 0.05],
            terminal: [0.05, 0.45],
        },
        AdrParamConfig {
            name: "action_noise_sigma".into(),
            initial: [0.0, 0.0],
            terminal: [0.0, 0.05],
        },
        AdrParamConfig {
            name: "grasp_radius".into(),
            initial: [0.08, 0.08],
            terminal: [0.04, 0.10],
        },
        AdrParamConfig {
            name: "step_scale".into(),
            initial: [0.05, 0.05],
            terminal: [0.03, 0.07],
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub obs_mode: ObsMode,
    pub image_w: usize,
    pub image_h: usize,
    pub t_max: u32,
    pub stereo_baseline: f32,
    pub reward: RewardConfig,
    pub adr: AdrConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            obs_mode: ObsMode::Depth,
            image_w: 32,
            image_h: 32,
            t_max: 100,
            stereo_baseline: 0.05,
            reward: RewardConfig::default(),
            adr: AdrConfig::default(),
        }
    }
}

impl EnvConfig {
    /// Flat length of the primary observation for one env.
    pub fn primary_dim(&self) -> usize {
        match self.obs_mode.channels() {
            Some(c) => c * self.image_h * self.image_w,
            None => STATE_DIM,
        }
    }

    pub fn primary_dims(&self) -> Vec<u32> {
        match self.obs_mode.channels() {
            Some(c) => vec![c as u32, self.image_h as u32, self.image_w as u32],
            None => vec![STATE_DIM as u32],
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.obs_mode != ObsMode::State && (self.image_w < 8 || self.image_h < 8) {
            return Err(EnvError::Config(format!(
                "image dims {}x{} below minimum 8x8",
                self.image_w, self.image_h
            )));
        }
        if self.t_max == 0 {
            return Err(EnvError::Config("t_max must be positive".into()));
        }
        AdrSampler::from_config(&self.adr).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = EnvConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: EnvConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg: EnvConfig = serde_json::from_str(r#"{"obs_mode":"stereo","image_w":16}"#).unwrap();
        assert_eq!(cfg.obs_mode, ObsMode::Stereo);
        assert_eq!(cfg.image_w, 16);
        assert_eq!(cfg.image_h, 32);
        assert_eq!(cfg.primary_dim(), 6 * 32 * 16);
    }

    #[test]
    fn tiny_images_rejected() {
        let cfg = EnvConfig {
            image_w: 4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
