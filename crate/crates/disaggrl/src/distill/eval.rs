//! Greedy policy evaluation and a hand-built scripted controller.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, VecEnv, WorldState, ACTION_DIM, GRIP_THRESHOLD};
use crate::nn::{load_policy, ObsInput, PolicyNet};

use super::DistillError;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: u32,
    pub successes: u32,
    pub success_rate: f64,
    /// 95% Wilson score interval.
    pub wilson_low: f64,
    pub wilson_high: f64,
}

fn wilson(successes: u32, n: u32) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_985f64;
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Run `episodes` greedy episodes (action = mean) at fixed ADR fraction `f`.
/// Deterministic in (net, cfg, f, episodes, seed): episodes are counted in
/// (step, env) completion order.
pub fn evaluate_net(
    net: &PolicyNet,
    env_cfg: &EnvConfig,
    f: f32,
    episodes: u32,
    seed: u64,
) -> Result<EvalReport, DistillError> {
    if episodes == 0 {
        return Err(DistillError::Config("need at least one episode".into()));
    }
    if net.is_recurrent() {
        return Err(DistillError::Config(
            "evaluation drives feedforward policies".into(),
        ));
    }
    let n = (episodes as usize).min(64);
    let mut envs = VecEnv::with_fraction(env_cfg.clone(), seed, 0, n, f)?;
    let mut done = 0u32;
    let mut succ = 0u32;
    let max_steps = (episodes as usize * env_cfg.t_max as usize) / n + env_cfg.t_max as usize + 1;
    'outer: for _ in 0..max_steps {
        let obs = envs.observe();
        let out = net.forward(
            &ObsInput {
                n,
                primary: &obs.primary,
                proprio: &obs.proprio,
            },
            None,
            None,
        )?;
        let step = envs.step(&out.mean)?;
        for e in 0..n {
            if step.dones[e] != 0 {
                done += 1;
                if step.successes[e] != 0 {
                    succ += 1;
                }
                if done == episodes {
                    break 'outer;
                }
            }
        }
    }
    let (lo, hi) = wilson(succ, done.max(1));
    Ok(EvalReport {
        episodes: done,
        successes: succ,
        success_rate: succ as f64 / done.max(1) as f64,
        wilson_low: lo,
        wilson_high: hi,
    })
}

/// Evaluate a checkpoint at fixed fraction `f` under the env config embedded
/// in its obs-mode tag.
pub fn evaluate(
    ckpt: &Path,
    env_template: &EnvConfig,
    f: f32,
    episodes: u32,
    seed: u64,
) -> Result<EvalReport, DistillError> {
    let (net, meta) = load_policy(ckpt)?;
    let mode = meta
        .tags
        .get("obs_mode")
        .ok_or_else(|| DistillError::Config("checkpoint carries no obs_mode tag".into()))?
        .parse()
        .map_err(DistillError::Config)?;
    let mut cfg = EnvConfig {
        obs_mode: mode,
        ..env_template.clone()
    };
    // the renderer must produce what the network was built for
    if let crate::nn::InputKind::Image { height, width, .. } = net.cfg.input {
        cfg.image_h = height;
        cfg.image_w = width;
    }
    evaluate_net(&net, &cfg, f, episodes, seed)
}

/// Hand-built optimal controller on privileged state: move onto the object,
/// close the gripper once the post-move distance is within the grasp radius,
/// then lift straight up.
pub fn scripted_action(state: &WorldState) -> [f32; ACTION_DIM] {
    if state.grasped {
        return [0.0, 1.0, 1.0];
    }
    let s = state.params.step_scale.max(1e-6);
    let dx = state.object[0] - state.gripper[0];
    let dy = state.object[1] - state.gripper[1];
    let ax = (dx / s).clamp(-1.0, 1.0);
    let ay = (dy / s).clamp(-1.0, 1.0);
    let post_dx = dx - s * ax;
    let post_dy = dy - s * ay;
    let post_dist = (post_dx * post_dx + post_dy * post_dy).sqrt();
    let grip = if post_dist <= state.params.grasp_radius * 0.95 {
        1.0
    } else {
        // stay decisively below the grip threshold while approaching
        GRIP_THRESHOLD - 0.5
    };
    [ax, ay, grip]
}

/// Success rate of the scripted controller (oracle for evaluation tests).
pub fn scripted_success_rate(
    env_cfg: &EnvConfig,
    f: f32,
    episodes: u32,
    seed: u64,
) -> Result<EvalReport, DistillError> {
    let n = (episodes as usize).min(64);
    let mut envs = VecEnv::with_fraction(env_cfg.clone(), seed, 0, n, f)?;
    let mut done = 0u32;
    let mut succ = 0u32;
    let max_steps = (episodes as usize * env_cfg.t_max as usize) / n + env_cfg.t_max as usize + 1;
    let mut actions = vec![0.0f32; n * ACTION_DIM];
    'outer: for _ in 0..max_steps {
        for (e, st) in envs.states().iter().enumerate() {
            let a = scripted_action(st);
            actions[e * ACTION_DIM..(e + 1) * ACTION_DIM].copy_from_slice(&a);
        }
        let step = envs.step(&actions)?;
        for e in 0..n {
            if step.dones[e] != 0 {
                done += 1;
                succ += (step.successes[e] != 0) as u32;
                if done == episodes {
                    break 'outer;
                }
            }
        }
    }
    let (lo, hi) = wilson(succ, done.max(1));
    Ok(EvalReport {
        episodes: done,
        successes: succ,
        success_rate: succ as f64 / done.max(1) as f64,
        wilson_low: lo,
        wilson_high: hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ObsMode;

    fn state_env() -> EnvConfig {
        EnvConfig {
            obs_mode: ObsMode::State,
            ..Default::default()
        }
    }

    /// The scripted controller lifts every episode at f = 0.
    #[test]
    fn scripted_controller_is_perfect_at_f0() {
        let report = scripted_success_rate(&state_env(), 0.0, 200, 4).unwrap();
        assert_eq!(report.episodes, 200);
        assert_eq!(report.success_rate, 1.0);
        assert!(report.wilson_low > 0.98);
    }

    /// A random-weight policy almost never lifts: SR < 0.1 over 200 episodes.
    #[test]
    fn random_policy_rarely_succeeds() {
        let cfg = state_env();
        let spec = crate::learner::NetSpec {
            trunk: crate::nn::TrunkConfig::Feedforward { hidden: vec![16] },
            embed_dim: 8,
            ..Default::default()
        };
        let net = PolicyNet::new(spec.to_net_config(&cfg), 123).unwrap();
        let report = evaluate_net(&net, &cfg, 0.0, 200, 5).unwrap();
        assert!(report.success_rate < 0.1, "sr {}", report.success_rate);
    }

    /// Same seeds, same checkpoint -> identical SR.
    #[test]
    fn evaluation_is_deterministic() {
        let cfg = state_env();
        let spec = crate::learner::NetSpec::default();
        let net = PolicyNet::new(spec.to_net_config(&cfg), 7).unwrap();
        let a = evaluate_net(&net, &cfg, 0.25, 64, 9).unwrap();
        let b = evaluate_net(&net, &cfg, 0.25, 64, 9).unwrap();
        assert_eq!(a.successes, b.successes);
        assert_eq!(a.episodes, b.episodes);
    }

    #[test]
    fn wilson_interval_sanity() {
        let (lo, hi) = wilson(50, 100);
        assert!(lo > 0.4 && hi < 0.6);
        let (lo, hi) = wilson(0, 100);
        assert_eq!(lo, 0.0);
        assert!(hi < 0.05);
        let (lo, hi) = wilson(100, 100);
        assert!(lo > 0.95);
        assert!(hi > 0.999);
    }
}
