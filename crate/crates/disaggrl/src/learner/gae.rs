//! Generalized advantage estimation.

use super::buffer::ExperienceBuffer;

/// Backward GAE recursion over a time-major `[h][n]` rollout:
/// delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t,
/// A_t = delta_t + gamma*lambda*(1-done_t)*A_{t+1}, returns = A + V.
/// `bootstrap` supplies V_{t+1} at the horizon boundary.
pub fn compute_gae_arrays(
    rewards: &[f32],
    values: &[f32],
    dones: &[u8],
    bootstrap: &[f32],
    horizon: usize,
    n: usize,
    gamma: f32,
    lam: f32,
) -> (Vec<f32>, Vec<f32>) {
    assert_eq!(rewards.len(), horizon * n);
    assert_eq!(bootstrap.len(), n);
    let mut adv = vec![0.0f32; horizon * n];
    let mut ret = vec![0.0f32; horizon * n];
    for e in 0..n {
        let mut a_next = 0.0f32;
        for t in (0..horizon).rev() {
            let i = t * n + e;
            let mask = 1.0 - dones[i] as f32;
            let v_next = if t + 1 == horizon {
                bootstrap[e]
            } else {
                values[(t + 1) * n + e]
            };
            let delta = rewards[i] + gamma * v_next * mask - values[i];
            a_next = delta + gamma * lam * mask * a_next;
            adv[i] = a_next;
            ret[i] = a_next + values[i];
        }
    }
    (adv, ret)
}

pub fn compute_gae(buf: &ExperienceBuffer, gamma: f32, lam: f32) -> (Vec<f32>, Vec<f32>) {
    compute_gae_arrays(
        &buf.rewards,
        &buf.values,
        &buf.dones,
        &buf.bootstrap_values,
        buf.horizon,
        buf.n_envs,
        gamma,
        lam,
    )
}

/// Normalize advantages in place to mean 0, std 1 (eps 1e-8).
pub fn normalize_advantages(adv: &mut [f32]) {
    let n = adv.len() as f32;
    let mean = crate::nn::linalg::sum(adv) / n;
    let mut var = 0.0f32;
    for v in adv.iter() {
        let d = v - mean;
        var += d * d;
    }
    let std = (var / n).sqrt();
    let inv = 1.0 / (std + 1e-8);
    for v in adv.iter_mut() {
        *v = (*v - mean) * inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    /// Brute-force O(H^2) oracle in f64: A_t = sum_k (gamma*lam)^(k-t) *
    /// delta_k * prod of (1-done) masks strictly between t and k.
    fn gae_oracle(
        rewards: &[f32],
        values: &[f32],
        dones: &[u8],
        bootstrap: f32,
        gamma: f64,
        lam: f64,
    ) -> Vec<f64> {
        let h = rewards.len();
        let delta: Vec<f64> = (0..h)
            .map(|t| {
                let mask = 1.0 - dones[t] as f64;
                let v_next = if t + 1 == h {
                    bootstrap as f64
                } else {
                    values[t + 1] as f64
                };
                rewards[t] as f64 + gamma * v_next * mask - values[t] as f64
            })
            .collect();
        (0..h)
            .map(|t| {
                let mut acc = 0.0;
                for k in t..h {
                    let mut w = 1.0;
                    for j in t..k {
                        w *= gamma * lam * (1.0 - dones[j] as f64);
                    }
                    if w == 0.0 {
                        break;
                    }
                    acc += w * delta[k];
                }
                acc
            })
            .collect()
    }

    #[test]
    fn single_step_reward_one() {
        let (adv, ret) =
            compute_gae_arrays(&[1.0], &[0.0], &[0], &[0.0], 1, 1, 0.99, 0.95);
        assert_eq!(adv, vec![1.0]);
        assert_eq!(ret, vec![1.0]);
    }

    #[test]
    fn done_cuts_the_future() {
        // two steps, done at t=0: A_0 = r_0 - V_0 regardless of t=1
        let rewards = [2.0, 100.0];
        let values = [0.5, 50.0];
        let dones = [1, 0];
        let (adv, _) =
            compute_gae_arrays(&rewards, &values, &dones, &[7.0], 2, 1, 0.99, 0.95);
        assert!((adv[0] - 1.5).abs() < 1e-6, "{}", adv[0]);
    }

    #[test]
    fn bootstrap_is_used_only_at_horizon() {
        let rewards = [0.0, 0.0];
        let values = [0.0, 0.0];
        let dones = [0, 0];
        let (adv, _) =
            compute_gae_arrays(&rewards, &values, &dones, &[1.0], 2, 1, 0.5, 1.0);
        // delta_1 = 0.5*1, delta_0 = 0; A_0 = 0.5*(0.5) = 0.25
        assert!((adv[1] - 0.5).abs() < 1e-6);
        assert!((adv[0] - 0.25).abs() < 1e-6);
    }

    /// 100 random sequences vs the brute-force oracle, within 1e-6.
    #[test]
    fn matches_brute_force_oracle() {
        let mut r = Stream::new(41);
        for case in 0..100 {
            let h = 1 + (r.next_u64() % 16) as usize;
            let rewards: Vec<f32> = (0..h).map(|_| r.normal()).collect();
            let values: Vec<f32> = (0..h).map(|_| r.normal()).collect();
            let dones: Vec<u8> = (0..h).map(|_| (r.uniform() < 0.2) as u8).collect();
            let bootstrap = r.normal();
            let gamma = 0.9 + 0.1 * r.uniform();
            let lam = 0.9 + 0.1 * r.uniform();
            let (adv, ret) = compute_gae_arrays(
                &rewards, &values, &dones, &[bootstrap], h, 1, gamma, lam,
            );
            let oracle = gae_oracle(
                &rewards,
                &values,
                &dones,
                bootstrap,
                gamma as f64,
                lam as f64,
            );
            for t in 0..h {
                assert!(
                    (adv[t] as f64 - oracle[t]).abs() < 1e-6 * oracle[t].abs().max(1.0),
                    "case {case} t {t}: {} vs {}",
                    adv[t],
                    oracle[t]
                );
                assert!((ret[t] - (adv[t] + values[t])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normalization_zero_mean_unit_std() {
        let mut r = Stream::new(9);
        let mut adv: Vec<f32> = (0..257).map(|_| r.normal() * 3.0 + 2.0).collect();
        normalize_advantages(&mut adv);
        let mean: f32 = adv.iter().sum::<f32>() / adv.len() as f32;
        let var: f32 =
            adv.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / adv.len() as f32;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-4);
    }
}
