//! Single-env state and dynamics.

use crate::rng::EnvRng;

use super::adr::AdrSampler;
use super::{EnvConfig, GRIP_THRESHOLD, LIFT_HEIGHT, SPAWN_GRIPPER, SPAWN_OBJECT_Y};

/// Per-episode values of every ADR parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeParams {
    pub spawn_halfwidth: f32,
    pub action_noise_sigma: f32,
    pub grasp_radius: f32,
    pub step_scale: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub gripper: [f32; 2],
    pub object: [f32; 2],
    pub grasped: bool,
    pub t: u32,
    pub prev_action: [f32; 3],
    pub params: EpisodeParams,
    pub rng: EnvRng,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f32,
    pub done: bool,
    pub success: bool,
}

fn dist(a: [f32; 2], b: [f32; 2]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Start a fresh episode. Draw order is fixed: one uniform per ADR table
/// entry (episode parameter values), then the spawn offset.
pub fn reset(cfg: &EnvConfig, adr: &AdrSampler, seed: u64, env_id: u32, episode: u64) -> WorldState {
    let mut rng = EnvRng::new(seed, env_id, episode);
    let table = adr.params();
    let mut values = vec![0.0f32; table.len()];
    for (v, p) in values.iter_mut().zip(table) {
        let [lo, hi] = p.current_range();
        *v = rng.uniform_in(lo, hi);
    }
    let params = EpisodeParams {
        spawn_halfwidth: values[adr.idx_spawn],
        action_noise_sigma: values[adr.idx_noise],
        grasp_radius: values[adr.idx_grasp],
        step_scale: values[adr.idx_step],
    };
    let w = params.spawn_halfwidth;
    let u = rng.uniform_in(-w, w);
    let _ = cfg;
    WorldState {
        gripper: SPAWN_GRIPPER,
        object: [(0.5 + u).clamp(0.0, 1.0), SPAWN_OBJECT_Y],
        grasped: false,
        t: 0,
        prev_action: [0.0; 3],
        params,
        rng,
    }
}

/// Advance one step. When the episode finishes, the state is replaced by the
/// next episode's initial state (auto-reset); the returned outcome refers to
/// the finished episode.
pub fn step(
    state: &mut WorldState,
    cfg: &EnvConfig,
    adr: &AdrSampler,
    action: [f32; 3],
) -> StepOutcome {
    let a = [
        action[0].clamp(-1.0, 1.0),
        action[1].clamp(-1.0, 1.0),
        action[2].clamp(-1.0, 1.0),
    ];
    // Both noise draws always happen so the stream layout per step is fixed.
    let sigma = state.params.action_noise_sigma;
    let nx = state.rng.normal() * sigma;
    let ny = state.rng.normal() * sigma;
    let executed = [a[0] + nx, a[1] + ny];

    let s = state.params.step_scale;
    state.gripper[0] = (state.gripper[0] + s * executed[0]).clamp(0.0, 1.0);
    state.gripper[1] = (state.gripper[1] + s * executed[1]).clamp(0.0, 1.0);

    let mut grasp_event = false;
    if !state.grasped
        && a[2] > GRIP_THRESHOLD
        && dist(state.gripper, state.object) <= state.params.grasp_radius
    {
        state.grasped = true;
        grasp_event = true;
    } else if state.grasped && a[2] <= GRIP_THRESHOLD {
        // released: the object drops straight down, keeping x
        state.grasped = false;
        state.object[1] = SPAWN_OBJECT_Y;
    }
    if state.grasped {
        state.object = state.gripper;
    }

    let success = state.grasped && state.object[1] >= LIFT_HEIGHT;
    let d = dist(state.gripper, state.object);
    let r = &cfg.reward;
    let mut reward = r.dist_coef * d;
    if grasp_event {
        reward += r.grasp_bonus;
    }
    if state.grasped {
        reward += r.height_coef * state.object[1];
    }
    if success {
        reward += r.success_bonus;
    }

    state.prev_action = a;
    state.t += 1;
    let done = success || state.t >= cfg.t_max;
    if done {
        let (seed, env_id, episode) = (state.rng.seed(), state.rng.env_id(), state.rng.episode());
        *state = reset(cfg, adr, seed, env_id, episode + 1);
    }
    StepOutcome {
        reward,
        done,
        success,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::AdrSampler;

    fn setup() -> (EnvConfig, AdrSampler) {
        let cfg = EnvConfig::default();
        let adr = AdrSampler::from_config(&cfg.adr).unwrap();
        (cfg, adr)
    }

    #[test]
    fn reset_is_deterministic_and_within_initial_range() {
        let (cfg, adr) = setup();
        let a = reset(&cfg, &adr, 7, 3, 0);
        let b = reset(&cfg, &adr, 7, 3, 0);
        assert_eq!(a, b);
        assert_eq!(a.gripper, SPAWN_GRIPPER);
        assert_eq!(a.object[1], SPAWN_OBJECT_Y);
        // f = 0: halfwidth range is degenerate at 0.05, noise exactly 0
        assert!((a.object[0] - 0.5).abs() <= 0.05 + 1e-6);
        assert_eq!(a.params.action_noise_sigma, 0.0);
        assert_eq!(a.params.step_scale, 0.05);
        assert_eq!(a.params.grasp_radius, 0.08);
        assert!(!a.grasped);
        assert_eq!(a.t, 0);
    }

    #[test]
    fn zero_action_leaves_positions_and_pays_distance_penalty() {
        let (cfg, adr) = setup();
        let mut s = reset(&cfg, &adr, 1, 0, 0);
        let before = s.clone();
        let out = step(&mut s, &cfg, &adr, [0.0, 0.0, 0.0]);
        assert_eq!(s.gripper, before.gripper);
        assert_eq!(s.object, before.object);
        let d = {
            let dx = s.gripper[0] - s.object[0];
            let dy = s.gripper[1] - s.object[1];
            (dx * dx + dy * dy).sqrt()
        };
        assert_eq!(out.reward, -0.1 * d);
        assert!(!out.done);
        assert!(!out.success);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn grasp_on_contact_pays_bonus_and_object_tracks_gripper() {
        let (cfg, adr) = setup();
        let mut s = reset(&cfg, &adr, 1, 0, 0);
        s.gripper = s.object;
        let out = step(&mut s, &cfg, &adr, [0.0, 0.0, 1.0]);
        assert!(s.grasped);
        assert_eq!(s.object, s.gripper);
        // reward = -0.1*0 + 0.25 grasp + 0.5*y while grasped
        let want = 0.25 + 0.5 * s.object[1];
        assert!((out.reward - want).abs() < 1e-6, "{} vs {}", out.reward, want);
    }

    /// Hand-simulated clamped kinematics: from y=0.1 grasped with
    /// step_scale 0.05 and no noise, lifting at full speed succeeds after
    /// ceil((0.8-0.1)/0.05) = 14 steps.
    #[test]
    fn lift_succeeds_after_fourteen_steps() {
        let (cfg, adr) = setup();
        let mut s = reset(&cfg, &adr, 1, 0, 0);
        // place gripper on the object and grasp
        s.gripper = s.object;
        let out = step(&mut s, &cfg, &adr, [0.0, 0.0, 1.0]);
        assert!(s.grasped && !out.done);
        // hand simulation of the same f32 arithmetic
        let mut y = s.gripper[1];
        let mut hand_steps = 0;
        while y < LIFT_HEIGHT {
            y = (y + 0.05f32 * 1.0).clamp(0.0, 1.0);
            hand_steps += 1;
        }
        assert_eq!(s.gripper[1], SPAWN_OBJECT_Y);
        assert_eq!(hand_steps, 14);
        let mut steps = 0;
        loop {
            let out = step(&mut s, &cfg, &adr, [0.0, 1.0, 1.0]);
            steps += 1;
            if out.success {
                assert!(out.done);
                assert!(out.reward > 5.0, "success bonus expected, got {}", out.reward);
                break;
            }
            assert!(steps < 50, "lift did not succeed");
        }
        assert_eq!(steps, hand_steps);
        // auto-reset: state now belongs to the next episode
        assert_eq!(s.t, 0);
        assert_eq!(s.rng.episode(), 1);
        assert!(!s.grasped);
    }

    #[test]
    fn release_drops_object_keeping_x() {
        let (cfg, adr) = setup();
        let mut s = reset(&cfg, &adr, 1, 0, 0);
        s.gripper = s.object;
        step(&mut s, &cfg, &adr, [0.0, 0.0, 1.0]);
        for _ in 0..5 {
            step(&mut s, &cfg, &adr, [0.0, 1.0, 1.0]);
        }
        assert!(s.grasped);
        let x_before = s.object[0];
        let out = step(&mut s, &cfg, &adr, [0.0, 0.0, 0.0]);
        assert!(!s.grasped);
        assert_eq!(s.object[0], x_before);
        assert_eq!(s.object[1], SPAWN_OBJECT_Y);
        assert!(!out.success);
    }

    #[test]
    fn out_of_range_actions_are_clamped() {
        let (cfg, adr) = setup();
        let mut s = reset(&cfg, &adr, 1, 0, 0);
        let g0 = s.gripper;
        step(&mut s, &cfg, &adr, [100.0, -100.0, 0.0]);
        assert!((s.gripper[0] - (g0[0] + 0.05)).abs() < 1e-6);
        assert!((s.gripper[1] - (g0[1] - 0.05)).abs() < 1e-6);
        assert_eq!(s.prev_action, [1.0, -1.0, 0.0]);
    }

    #[test]
    fn positions_stay_in_unit_square() {
        let (cfg, adr) = setup();
        let mut s = reset(&cfg, &adr, 1, 0, 0);
        for _ in 0..300 {
            step(&mut s, &cfg, &adr, [1.0, 1.0, 0.0]);
            assert!(s.gripper[0] <= 1.0 && s.gripper[1] <= 1.0);
            assert!(s.object[0] >= 0.0 && s.object[1] >= 0.0);
        }
    }

    #[test]
    fn timeout_autoresets_without_success() {
        let (cfg, adr) = setup();
        let mut s = reset(&cfg, &adr, 9, 2, 0);
        let mut dones = 0;
        for i in 0..(2 * cfg.t_max) {
            let out = step(&mut s, &cfg, &adr, [0.0, 0.0, 0.0]);
            if out.done {
                dones += 1;
                assert!(!out.success);
                assert_eq!((i + 1) % cfg.t_max, 0);
                assert_eq!(s.t, 0);
            }
        }
        assert_eq!(dones, 2);
        assert_eq!(s.rng.episode(), 2);
    }

    /// Reward lower bound: no single step pays less than -0.1*sqrt(2).
    #[test]
    fn reward_lower_bound_holds() {
        let (cfg, adr) = setup();
        let mut s = reset(&cfg, &adr, 3, 1, 0);
        let mut stream = crate::rng::Stream::new(55);
        let bound = -0.1 * 2.0f32.sqrt() - 1e-6;
        for _ in 0..2000 {
            let a = [
                stream.uniform() * 2.0 - 1.0,
                stream.uniform() * 2.0 - 1.0,
                stream.uniform() * 2.0 - 1.0,
            ];
            let out = step(&mut s, &cfg, &adr, a);
            assert!(out.reward >= bound, "reward {} below bound", out.reward);
        }
    }

    /// Monte-Carlo at terminal ranges: object x spans at least [0.1, 0.9]
    /// over many resets and never leaves [0.05, 0.95].
    #[test]
    fn terminal_spawn_coverage() {
        let (cfg, mut adr) = setup();
        adr.set_uniform_fraction(1.0);
        let mut min_x = f32::MAX;
        let mut max_x = f32::MIN;
        for i in 0..10_000 {
            let s = reset(&cfg, &adr, 1234, i as u32, 0);
            min_x = min_x.min(s.object[0]);
            max_x = max_x.max(s.object[0]);
            assert!((0.05 - 1e-6..=0.95 + 1e-6).contains(&s.object[0]));
        }
        assert!(min_x <= 0.1, "min object x {min_x}");
        assert!(max_x >= 0.9, "max object x {max_x}");
    }

    /// Success pays exactly once per episode: the success step ends the
    /// episode, so scanning a long run never sees two successes without an
    /// intervening reset.
    #[test]
    fn success_ends_episode() {
        let (cfg, adr) = setup();
        let mut s = reset(&cfg, &adr, 1, 0, 0);
        s.gripper = s.object;
        step(&mut s, &cfg, &adr, [0.0, 0.0, 1.0]);
        let mut successes_this_episode = 0;
        for _ in 0..40 {
            let out = step(&mut s, &cfg, &adr, [0.0, 1.0, 1.0]);
            if out.success {
                successes_this_episode += 1;
                assert!(out.done);
                break;
            }
        }
        assert_eq!(successes_this_episode, 1);
    }
}
