//! Occlusion diagnostic: states whose depth renders are pixel-identical
//! (object hidden behind the gripper disc) but whose ground-truth object
//! positions differ. A policy reading depth must emit identical actions on
//! them; a policy reading privileged state generally does not.

use crate::env::{
    proprio, render::observe_primary, AdrSampler, EnvConfig, ObsMode, WorldState, ACTION_DIM,
    PROPRIO_DIM,
};
use crate::nn::{ObsInput, PolicyNet};

use super::DistillError;

/// `k` states with the gripper parked at the image center and the object
/// tucked inside the gripper disc at distinct sub-pixel offsets. At 32x32
/// and coarser, no pixel center lands inside the visible object ring, so
/// every depth render is identical while the state vector varies.
pub fn occluded_probe_states(cfg: &EnvConfig, k: usize) -> Vec<WorldState> {
    let sampler = AdrSampler::from_config(&cfg.adr).expect("valid adr config");
    (0..k)
        .map(|i| {
            let mut s = crate::env::reset(cfg, &sampler, 0, 0, 0);
            s.gripper = [0.5, 0.5];
            let t = i as f32 / k.max(1) as f32;
            s.object = [0.5 + 0.004 * (t - 0.5), 0.5 - 0.003 * (t - 0.5)];
            s.grasped = false;
            s.t = 10;
            s.prev_action = [0.0; 3];
            s
        })
        .collect()
}

/// Mean per-dimension variance of the policy's action means across `states`,
/// observing through `mode`.
pub fn action_variance_across(
    net: &PolicyNet,
    env_cfg: &EnvConfig,
    mode: ObsMode,
    states: &[WorldState],
) -> Result<f32, DistillError> {
    let cfg = EnvConfig {
        obs_mode: mode,
        ..env_cfg.clone()
    };
    let d = cfg.primary_dim();
    let n = states.len();
    let mut primary = vec![0.0f32; n * d];
    let mut prop = vec![0.0f32; n * PROPRIO_DIM];
    for (i, s) in states.iter().enumerate() {
        observe_primary(s, &cfg, &mut primary[i * d..(i + 1) * d]);
        prop[i * PROPRIO_DIM..(i + 1) * PROPRIO_DIM].copy_from_slice(&proprio(s, cfg.t_max));
    }
    let out = net.forward(
        &ObsInput {
            n,
            primary: &primary,
            proprio: &prop,
        },
        None,
        None,
    )?;
    // statistics in f64: equal f32 inputs must yield exactly zero variance
    let mut var_sum = 0.0f64;
    for dim in 0..ACTION_DIM {
        let mean: f64 = (0..n)
            .map(|i| out.mean[i * ACTION_DIM + dim] as f64)
            .sum::<f64>()
            / n as f64;
        let var: f64 = (0..n)
            .map(|i| {
                let v = out.mean[i * ACTION_DIM + dim] as f64 - mean;
                v * v
            })
            .sum::<f64>()
            / n as f64;
        var_sum += var;
    }
    Ok((var_sum / ACTION_DIM as f64) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::NetSpec;
    use crate::nn::TrunkConfig;

    fn env32() -> EnvConfig {
        EnvConfig {
            obs_mode: ObsMode::Depth,
            image_w: 32,
            image_h: 32,
            ..Default::default()
        }
    }

    #[test]
    fn probe_states_render_identically_in_depth() {
        let cfg = env32();
        let states = occluded_probe_states(&cfg, 8);
        let d = cfg.primary_dim();
        let mut first = vec![0.0f32; d];
        observe_primary(&states[0], &cfg, &mut first);
        for s in &states[1..] {
            let mut img = vec![0.0f32; d];
            observe_primary(s, &cfg, &mut img);
            assert_eq!(img, first, "depth render must not reveal the object");
        }
        // the states nevertheless differ in ground truth
        assert_ne!(states[0].object, states[7].object);
    }

    /// The depth policy's labels are constant across the probe set (variance
    /// exactly 0); a state policy's labels leak the hidden object position.
    #[test]
    fn state_policy_leaks_depth_policy_does_not() {
        let cfg = env32();
        let states = occluded_probe_states(&cfg, 8);
        let depth_net = PolicyNet::new(
            NetSpec {
                conv_filters: vec![4, 8, 8, 8],
                embed_dim: 8,
                trunk: TrunkConfig::Feedforward { hidden: vec![16] },
                ..Default::default()
            }
            .to_net_config(&cfg),
            11,
        )
        .unwrap();
        let state_cfg = EnvConfig {
            obs_mode: ObsMode::State,
            ..cfg.clone()
        };
        let state_net = PolicyNet::new(
            NetSpec {
                trunk: TrunkConfig::Feedforward { hidden: vec![16] },
                embed_dim: 8,
                ..Default::default()
            }
            .to_net_config(&state_cfg),
            11,
        )
        .unwrap();
        let vd = action_variance_across(&depth_net, &cfg, ObsMode::Depth, &states).unwrap();
        let vs = action_variance_across(&state_net, &cfg, ObsMode::State, &states).unwrap();
        assert_eq!(vd, 0.0, "identical inputs must give identical actions");
        assert!(vs > 1e-12, "state labels should vary, got {vs}");
        assert!(vs > vd);
    }
}
