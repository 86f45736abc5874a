//! Counter-based deterministic random streams.
//!
//! Every draw in the system is a pure function of explicit integer keys
//! (global seed, env id, episode index, draw index, ...). Partitioning
//! environments across replicas therefore leaves each env's stream
//! unchanged, which is what makes sharded runs bit-identical to
//! single-process runs. The mixer is the splitmix64 finalizer; it is not
//! cryptographic and must never be used for secrets.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const KEY_INIT: u64 = 0x243F_6A88_85A3_08D3;

/// splitmix64 finalizer: bijective 64-bit mix.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapse key components into one 64-bit stream key.
pub fn key(parts: &[u64]) -> u64 {
    let mut acc = KEY_INIT;
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

/// The `draw`-th raw value of the stream identified by `k`.
#[inline]
pub fn bits_at(k: u64, draw: u64) -> u64 {
    splitmix64(k.wrapping_add(draw.wrapping_mul(GOLDEN)))
}

/// Map raw bits to `[0, 1)` with 24-bit resolution.
#[inline]
pub fn uniform_f32(bits: u64) -> f32 {
    ((bits >> 40) as f32) * (1.0 / 16_777_216.0)
}

/// Map raw bits to `(0, 1]` (safe as a log argument).
#[inline]
fn uniform_open_f32(bits: u64) -> f32 {
    (((bits >> 40) + 1) as f32) * (1.0 / 16_777_216.0)
}

/// Standard normal from two raw draws (Box-Muller, cosine branch).
#[inline]
pub fn normal_f32(bits_a: u64, bits_b: u64) -> f32 {
    let u1 = uniform_open_f32(bits_a);
    let u2 = uniform_f32(bits_b);
    (-2.0 * u1.ln()).sqrt() * (core::f32::consts::TAU * u2).cos()
}

/// One-off keyed draws for stateless sampling (e.g. per-step action noise).
pub fn keyed_uniform(parts: &[u64]) -> f32 {
    uniform_f32(bits_at(key(parts), 0))
}

/// One-off keyed standard normal.
pub fn keyed_normal(parts: &[u64]) -> f32 {
    let k = key(parts);
    normal_f32(bits_at(k, 0), bits_at(k, 1))
}

/// Per-environment stream keyed by (seed, env id, episode index, draw index).
///
/// `draw` restarts at zero on every episode so a trajectory's randomness is
/// fully determined by (seed, env_id, episode) regardless of which process
/// hosts the env.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvRng {
    seed: u64,
    env_id: u32,
    episode: u64,
    draw: u64,
    stream_key: u64,
}

impl EnvRng {
    pub fn new(seed: u64, env_id: u32, episode: u64) -> Self {
        Self {
            seed,
            env_id,
            episode,
            draw: 0,
            stream_key: key(&[seed, env_id as u64, episode]),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn env_id(&self) -> u32 {
        self.env_id
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    #[inline]
    pub fn next_bits(&mut self) -> u64 {
        let b = bits_at(self.stream_key, self.draw);
        self.draw += 1;
        b
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f32 {
        uniform_f32(self.next_bits())
    }

    /// Uniform in `[lo, hi]`; degenerate ranges return `lo` exactly.
    #[inline]
    pub fn uniform_in(&mut self, lo: f32, hi: f32) -> f32 {
        lo + self.uniform() * (hi - lo)
    }

    /// Standard normal (consumes two draws).
    #[inline]
    pub fn normal(&mut self) -> f32 {
        let a = self.next_bits();
        let b = self.next_bits();
        normal_f32(a, b)
    }
}

/// Stateful stream for shuffles and weight init, seeded by an explicit key.
#[derive(Clone, Debug)]
pub struct Stream {
    k: u64,
    i: u64,
}

impl Stream {
    pub fn new(k: u64) -> Self {
        Self { k, i: 0 }
    }

    pub fn from_parts(parts: &[u64]) -> Self {
        Self::new(key(parts))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let b = bits_at(self.k, self.i);
        self.i += 1;
        b
    }

    pub fn uniform(&mut self) -> f32 {
        uniform_f32(self.next_u64())
    }

    pub fn normal(&mut self) -> f32 {
        let a = self.next_u64();
        let b = self.next_u64();
        normal_f32(a, b)
    }

    /// Normal in f64 for init-time math (orthogonalization).
    pub fn normal_f64(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) as f64 + 1.0) * (1.0 / 9_007_199_254_740_992.0);
        let u2 = ((self.next_u64() >> 11) as f64) * (1.0 / 9_007_199_254_740_992.0);
        (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        let n = xs.len();
        for i in (1..n).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}
