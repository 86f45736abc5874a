//! Vectorized env shard with auto-reset.

use super::render::{observe_primary, proprio};
use super::world::{reset, step, WorldState};
use super::{AdrSampler, EnvConfig, EnvError, ACTION_DIM, PROPRIO_DIM};

/// Batched observations: `primary` is `n x primary_dim`, `proprio` is
/// `n x PROPRIO_DIM`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsBatch {
    pub n: usize,
    pub primary_dim: usize,
    pub primary: Vec<f32>,
    pub proprio: Vec<f32>,
}

impl ObsBatch {
    pub fn zeros(n: usize, primary_dim: usize) -> Self {
        Self {
            n,
            primary_dim,
            primary: vec![0.0; n * primary_dim],
            proprio: vec![0.0; n * PROPRIO_DIM],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepBatch {
    pub rewards: Vec<f32>,
    pub dones: Vec<u8>,
    pub successes: Vec<u8>,
}

/// A contiguous shard of environments with global ids
/// `id_offset .. id_offset + n`.
#[derive(Clone, Debug)]
pub struct VecEnv {
    cfg: EnvConfig,
    sampler: AdrSampler,
    states: Vec<WorldState>,
    seed: u64,
    id_offset: u32,
}

impl VecEnv {
    pub fn new(cfg: EnvConfig, seed: u64, id_offset: u32, n: usize) -> Result<Self, EnvError> {
        Self::with_fraction(cfg, seed, id_offset, n, 0.0)
    }

    /// Build with the curriculum already at fraction `f`, so even the first
    /// episodes sample from the widened ranges.
    pub fn with_fraction(
        cfg: EnvConfig,
        seed: u64,
        id_offset: u32,
        n: usize,
        f: f32,
    ) -> Result<Self, EnvError> {
        cfg.validate()?;
        let mut sampler = AdrSampler::from_config(&cfg.adr)?;
        if f > 0.0 {
            sampler.set_uniform_fraction(f);
        }
        let states = (0..n)
            .map(|i| reset(&cfg, &sampler, seed, id_offset + i as u32, 0))
            .collect();
        Ok(Self {
            cfg,
            sampler,
            states,
            seed,
            id_offset,
        })
    }

    pub fn cfg(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn num_envs(&self) -> usize {
        self.states.len()
    }

    pub fn id_offset(&self) -> u32 {
        self.id_offset
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn states(&self) -> &[WorldState] {
        &self.states
    }

    pub fn sampler(&self) -> &AdrSampler {
        &self.sampler
    }

    /// Apply curriculum fractions; affects every reset sampled afterwards.
    pub fn set_fractions(&mut self, fractions: &[f32]) {
        self.sampler.set_fractions(fractions);
    }

    pub fn set_uniform_fraction(&mut self, f: f32) {
        self.sampler.set_uniform_fraction(f);
    }

    /// Render the current observation of every env.
    pub fn observe(&self) -> ObsBatch {
        let d = self.cfg.primary_dim();
        let mut batch = ObsBatch::zeros(self.states.len(), d);
        for (i, s) in self.states.iter().enumerate() {
            observe_primary(s, &self.cfg, &mut batch.primary[i * d..(i + 1) * d]);
            batch.proprio[i * PROPRIO_DIM..(i + 1) * PROPRIO_DIM]
                .copy_from_slice(&proprio(s, self.cfg.t_max));
        }
        batch
    }

    /// Step every env with its `[n x 3]` action row; finished episodes
    /// auto-reset, so a subsequent `observe` returns next-episode initials.
    pub fn step(&mut self, actions: &[f32]) -> Result<StepBatch, EnvError> {
        let n = self.states.len();
        if actions.len() != n * ACTION_DIM {
            return Err(EnvError::ActionShape {
                got: actions.len(),
                want: n * ACTION_DIM,
                envs: n,
                dim: ACTION_DIM,
            });
        }
        let mut out = StepBatch {
            rewards: vec![0.0; n],
            dones: vec![0; n],
            successes: vec![0; n],
        };
        for (i, s) in self.states.iter_mut().enumerate() {
            let a = [
                actions[i * ACTION_DIM],
                actions[i * ACTION_DIM + 1],
                actions[i * ACTION_DIM + 2],
            ];
            let r = step(s, &self.cfg, &self.sampler, a);
            out.rewards[i] = r.reward;
            out.dones[i] = r.done as u8;
            out.successes[i] = r.success as u8;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ObsMode;
    use crate::rng::Stream;

    fn random_actions(stream: &mut Stream, n: usize) -> Vec<f32> {
        (0..n * ACTION_DIM)
            .map(|_| stream.uniform() * 2.0 - 1.0)
            .collect()
    }

    #[test]
    fn n_equals_one_reduces_to_scalar_step() {
        let cfg = EnvConfig::default();
        let mut v = VecEnv::new(cfg.clone(), 11, 5, 1).unwrap();
        let sampler = AdrSampler::from_config(&cfg.adr).unwrap();
        let mut s = reset(&cfg, &sampler, 11, 5, 0);
        assert_eq!(&v.states()[0], &s);
        let a = [0.3, -0.7, 0.0];
        let batch = v.step(&a).unwrap();
        let scalar = step(&mut s, &cfg, &sampler, a);
        assert_eq!(batch.rewards[0], scalar.reward);
        assert_eq!(batch.dones[0] != 0, scalar.done);
        assert_eq!(&v.states()[0], &s);
    }

    #[test]
    fn wrong_action_length_is_shape_error() {
        let mut v = VecEnv::new(EnvConfig::default(), 1, 0, 4).unwrap();
        let err = v.step(&[0.0; 11]).unwrap_err();
        assert!(matches!(err, EnvError::ActionShape { got: 11, want: 12, .. }));
    }

    /// Per-env independence: permuting envs and actions identically permutes
    /// the outputs.
    #[test]
    fn permutation_equivariance() {
        let cfg = EnvConfig::default();
        let mut stream = Stream::new(77);
        // envs with ids {0,1,2,3} hosted in one shard...
        let mut v = VecEnv::new(cfg.clone(), 5, 0, 4).unwrap();
        let actions = random_actions(&mut stream, 4);
        let out = v.step(&actions).unwrap();
        // ...and the same ids stepped individually in reverse order
        let sampler = AdrSampler::from_config(&cfg.adr).unwrap();
        for id in (0..4u32).rev() {
            let mut s = reset(&cfg, &sampler, 5, id, 0);
            let i = id as usize;
            let a = [
                actions[i * ACTION_DIM],
                actions[i * ACTION_DIM + 1],
                actions[i * ACTION_DIM + 2],
            ];
            let r = step(&mut s, &cfg, &sampler, a);
            assert_eq!(r.reward, out.rewards[i]);
        }
    }

    /// Two shards with disjoint offsets reproduce the matching slices of one
    /// combined shard, bit-exactly, over many random steps.
    #[test]
    fn shard_equals_slice_of_union() {
        let cfg = EnvConfig {
            obs_mode: ObsMode::State,
            ..Default::default()
        };
        let seed = 99;
        let mut union = VecEnv::new(cfg.clone(), seed, 0, 6).unwrap();
        let mut left = VecEnv::new(cfg.clone(), seed, 0, 3).unwrap();
        let mut right = VecEnv::new(cfg.clone(), seed, 3, 3).unwrap();
        let mut stream = Stream::new(3);
        for _ in 0..250 {
            let actions = random_actions(&mut stream, 6);
            let u = union.step(&actions).unwrap();
            let l = left.step(&actions[..9]).unwrap();
            let r = right.step(&actions[9..]).unwrap();
            assert_eq!(&u.rewards[..3], &l.rewards[..]);
            assert_eq!(&u.rewards[3..], &r.rewards[..]);
            assert_eq!(&u.dones[..3], &l.dones[..]);
            assert_eq!(&u.dones[3..], &r.dones[..]);
            let uo = union.observe();
            let lo = left.observe();
            let ro = right.observe();
            assert_eq!(&uo.primary[..lo.primary.len()], &lo.primary[..]);
            assert_eq!(&uo.primary[lo.primary.len()..], &ro.primary[..]);
            assert_eq!(&uo.proprio[..lo.proprio.len()], &lo.proprio[..]);
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let cfg = EnvConfig::default();
        let mut a = VecEnv::new(cfg.clone(), 42, 0, 3).unwrap();
        let mut b = VecEnv::new(cfg, 42, 0, 3).unwrap();
        let mut stream_a = Stream::new(8);
        let mut stream_b = Stream::new(8);
        for _ in 0..120 {
            let aa = random_actions(&mut stream_a, 3);
            let ab = random_actions(&mut stream_b, 3);
            assert_eq!(aa, ab);
            let ra = a.step(&aa).unwrap();
            let rb = b.step(&ab).unwrap();
            assert_eq!(ra, rb);
        }
        assert_eq!(a.observe(), b.observe());
    }

    /// ADR fractions apply to resets sampled after the update.
    #[test]
    fn fraction_update_changes_future_resets() {
        let cfg = EnvConfig::default();
        let mut v = VecEnv::new(cfg.clone(), 7, 0, 16).unwrap();
        v.set_uniform_fraction(1.0);
        // run until every env has reset at least once
        let zero = vec![0.0; 16 * ACTION_DIM];
        for _ in 0..cfg.t_max {
            v.step(&zero).unwrap();
        }
        // terminal ranges: noise sigma in [0, 0.05], step scale in [0.03, 0.07]
        let mut saw_wide = false;
        for s in v.states() {
            assert!(s.rng.episode() >= 1);
            assert!((0.0..=0.05).contains(&s.params.action_noise_sigma));
            assert!((0.03..=0.07 + 1e-6).contains(&s.params.step_scale));
            if s.params.spawn_halfwidth > 0.06 {
                saw_wide = true;
            }
        }
        assert!(saw_wide, "terminal spawn range should produce halfwidths > 0.06");
    }
}
