//! Diagonal-Gaussian policy head math.

pub const LOG_2PI: f32 = 1.837_877_1;
/// Entropy of a unit-sigma 1-D Gaussian: 0.5 * (1 + log 2pi).
pub const ENTROPY_PER_UNIT_SIGMA: f32 = 1.418_938_5;

/// Per-sample log-probability and entropy for one action row.
///
/// logp = sum_d [ -0.5*((a - mu)/sigma)^2 - log sigma - 0.5*log 2pi ]
/// entropy = sum_d [ log sigma + 0.5*(1 + log 2pi) ]
pub fn logprob_entropy_single(mean: &[f32], log_std: &[f32], action: &[f32]) -> (f32, f32) {
    debug_assert_eq!(mean.len(), action.len());
    debug_assert_eq!(mean.len(), log_std.len());
    let mut logp = 0.0f32;
    let mut ent = 0.0f32;
    for d in 0..mean.len() {
        let sigma = log_std[d].exp();
        let z = (action[d] - mean[d]) / sigma;
        logp += -0.5 * z * z - log_std[d] - 0.5 * LOG_2PI;
        ent += log_std[d] + 0.5 * (1.0 + LOG_2PI);
    }
    (logp, ent)
}

/// Batched version: `mean`/`action` are `[n x a]`, `log_std` is `[a]`
/// (state-independent). Returns per-sample (logp, entropy).
pub fn gaussian_logprob_entropy(
    mean: &[f32],
    log_std: &[f32],
    action: &[f32],
) -> (Vec<f32>, Vec<f32>) {
    let a = log_std.len();
    assert_eq!(mean.len(), action.len());
    assert_eq!(mean.len() % a, 0);
    let n = mean.len() / a;
    let mut logp = Vec::with_capacity(n);
    let mut ent = Vec::with_capacity(n);
    for s in 0..n {
        let (l, e) = logprob_entropy_single(
            &mean[s * a..(s + 1) * a],
            log_std,
            &action[s * a..(s + 1) * a],
        );
        logp.push(l);
        ent.push(e);
    }
    (logp, ent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn standard_normal_at_mean() {
        let (logp, _) = logprob_entropy_single(&[0.3], &[0.0], &[0.3]);
        assert!((logp - (-0.918_938_5)).abs() < 1e-6, "{logp}");
    }

    #[test]
    fn unit_sigma_entropy_closed_form() {
        let (_, ent) = logprob_entropy_single(&[0.0], &[0.0], &[1.0]);
        assert!((ent - 1.418_938_5).abs() < 1e-6, "{ent}");
        // entropy is action-independent
        let (_, ent2) = logprob_entropy_single(&[5.0], &[0.0], &[-3.0]);
        assert_eq!(ent, ent2);
    }

    /// f64 oracle: recompute the same closed form in double precision.
    #[test]
    fn matches_f64_reevaluation() {
        let mut r = Stream::new(3);
        for _ in 0..200 {
            let a_dim = 1 + (r.next_u64() % 4) as usize;
            let mean: Vec<f32> = (0..a_dim).map(|_| r.normal() * 2.0).collect();
            let log_std: Vec<f32> = (0..a_dim).map(|_| r.normal() * 0.7).collect();
            let action: Vec<f32> = (0..a_dim).map(|_| r.normal() * 2.0).collect();
            let (logp, ent) = logprob_entropy_single(&mean, &log_std, &action);
            let mut logp64 = 0.0f64;
            let mut ent64 = 0.0f64;
            for d in 0..a_dim {
                let sigma = (log_std[d] as f64).exp();
                let z = (action[d] as f64 - mean[d] as f64) / sigma;
                logp64 += -0.5 * z * z
                    - log_std[d] as f64
                    - 0.5 * (2.0 * std::f64::consts::PI).ln();
                ent64 += log_std[d] as f64
                    + 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
            }
            assert!(
                (logp as f64 - logp64).abs() < 1e-4 * logp64.abs().max(1.0),
                "{logp} vs {logp64}"
            );
            assert!((ent as f64 - ent64).abs() < 1e-4 * ent64.abs().max(1.0));
        }
    }

    #[test]
    fn batched_matches_single() {
        let mean = [0.1f32, -0.2, 0.3, 0.4, 0.5, -0.6];
        let log_std = [0.2f32, -0.3, 0.1];
        let action = [0.0f32, 0.0, 0.0, 1.0, -1.0, 0.5];
        let (logp, ent) = gaussian_logprob_entropy(&mean, &log_std, &action);
        assert_eq!(logp.len(), 2);
        let (l0, e0) = logprob_entropy_single(&mean[..3], &log_std, &action[..3]);
        assert_eq!(logp[0], l0);
        assert_eq!(ent[0], e0);
    }
}
