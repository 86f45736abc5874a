//! H x N rollout storage, owned exclusively by the learner process.

/// Time-major rollout buffer: every per-step array is `[horizon][n_envs]`
/// row-major, with trailing feature dims flattened.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperienceBuffer {
    pub horizon: usize,
    pub n_envs: usize,
    pub primary_dim: usize,
    pub proprio_dim: usize,
    pub action_dim: usize,
    /// Image channel count (1 depth, 6 stereo, 0 for state vectors).
    pub channels: usize,
    pub obs_primary: Vec<f32>,
    pub obs_proprio: Vec<f32>,
    pub actions: Vec<f32>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<u8>,
    pub successes: Vec<u8>,
    pub bootstrap_values: Vec<f32>,
    /// Recurrent initial hidden state per rollout, `[n_envs x hidden_dim]`.
    pub initial_hidden: Option<Vec<f32>>,
}

impl ExperienceBuffer {
    pub fn new(
        horizon: usize,
        n_envs: usize,
        primary_dim: usize,
        proprio_dim: usize,
        action_dim: usize,
        channels: usize,
    ) -> Self {
        let hn = horizon * n_envs;
        Self {
            horizon,
            n_envs,
            primary_dim,
            proprio_dim,
            action_dim,
            channels,
            obs_primary: vec![0.0; hn * primary_dim],
            obs_proprio: vec![0.0; hn * proprio_dim],
            actions: vec![0.0; hn * action_dim],
            log_probs: vec![0.0; hn],
            values: vec![0.0; hn],
            rewards: vec![0.0; hn],
            dones: vec![0; hn],
            successes: vec![0; hn],
            bootstrap_values: vec![0.0; n_envs],
            initial_hidden: None,
        }
    }

    #[inline]
    pub fn idx(&self, t: usize, env: usize) -> usize {
        t * self.n_envs + env
    }

    /// Byte size of the image block, `H*N*C*Hi*Wi*4`; zero for state obs.
    /// Matches the capacity planner's `buffer_bytes` exactly.
    pub fn image_block_bytes(&self) -> u64 {
        if self.channels == 0 {
            0
        } else {
            (self.horizon as u64)
                * (self.n_envs as u64)
                * (self.primary_dim as u64)
                * 4
        }
    }

    pub fn total_samples(&self) -> usize {
        self.horizon * self.n_envs
    }

    /// Episode stats recorded in this rollout: (finished, successes).
    pub fn episode_counts(&self) -> (u64, u64) {
        let finished = self.dones.iter().filter(|&&d| d != 0).count() as u64;
        let succ = self.successes.iter().filter(|&&s| s != 0).count() as u64;
        (finished, succ)
    }

    /// Per-episode success booleans in (t, env) order, for the ADR window.
    pub fn episode_results(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for t in 0..self.horizon {
            for e in 0..self.n_envs {
                let i = self.idx(t, e);
                if self.dones[i] != 0 {
                    out.push(self.successes[i] != 0);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_block_bytes_matches_closed_form() {
        let b = ExperienceBuffer::new(16, 512, 320 * 240, 7, 3, 1);
        assert_eq!(b.image_block_bytes(), 2_516_582_400u64 / 512 * 512);
        assert_eq!(
            b.image_block_bytes(),
            crate::harness::buffer_bytes(320, 240, 512, 16, 1).unwrap()
        );
        let state = ExperienceBuffer::new(16, 8, 5, 7, 3, 0);
        assert_eq!(state.image_block_bytes(), 0);
    }

    #[test]
    fn episode_results_follow_time_env_order() {
        let mut b = ExperienceBuffer::new(2, 2, 1, 7, 3, 0);
        b.dones = vec![0, 1, 1, 0];
        b.successes = vec![0, 1, 0, 0];
        assert_eq!(b.episode_results(), vec![true, false]);
        assert_eq!(b.episode_counts(), (2, 1));
    }
}
