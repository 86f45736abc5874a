//! Automatic domain randomization: named range curriculum.

use serde::{Deserialize, Serialize};

use super::{AdrConfig, EnvError};

/// One randomization parameter: a range that widens from `initial` toward
/// `terminal` as `fraction` grows from 0 to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdrParam {
    pub name: String,
    pub initial: [f32; 2],
    pub terminal: [f32; 2],
    pub fraction: f32,
}

impl AdrParam {
    pub fn current_range(&self) -> [f32; 2] {
        let f = self.fraction;
        [
            self.initial[0] + f * (self.terminal[0] - self.initial[0]),
            self.initial[1] + f * (self.terminal[1] - self.initial[1]),
        ]
    }
}

/// The parameter table with its current fractions; owned by whatever samples
/// episode parameters (replica-local or learner-local envs).
#[derive(Clone, Debug, PartialEq)]
pub struct AdrSampler {
    params: Vec<AdrParam>,
    pub(super) idx_spawn: usize,
    pub(super) idx_noise: usize,
    pub(super) idx_grasp: usize,
    pub(super) idx_step: usize,
}

impl AdrSampler {
    pub fn from_config(cfg: &AdrConfig) -> Result<Self, EnvError> {
        let params: Vec<AdrParam> = cfg
            .params
            .iter()
            .map(|p| AdrParam {
                name: p.name.clone(),
                initial: p.initial,
                terminal: p.terminal,
                fraction: 0.0,
            })
            .collect();
        for p in &params {
            if p.initial[0] > p.initial[1] || p.terminal[0] > p.terminal[1] {
                return Err(EnvError::Config(format!("ADR param {}: inverted range", p.name)));
            }
            if p.initial[0] < p.terminal[0] || p.initial[1] > p.terminal[1] {
                return Err(EnvError::Config(format!(
                    "ADR param {}: initial range must be contained in terminal range",
                    p.name
                )));
            }
        }
        let find = |name: &str| {
            params
                .iter()
                .position(|p| p.name == name)
                .ok_or_else(|| EnvError::Config(format!("missing ADR param {name:?}")))
        };
        Ok(Self {
            idx_spawn: find("object_spawn_halfwidth")?,
            idx_noise: find("action_noise_sigma")?,
            idx_grasp: find("grasp_radius")?,
            idx_step: find("step_scale")?,
            params,
        })
    }

    pub fn params(&self) -> &[AdrParam] {
        &self.params
    }

    pub fn fractions(&self) -> Vec<f32> {
        self.params.iter().map(|p| p.fraction).collect()
    }

    /// Apply learner-sent fractions. Fractions are clamped to [0, 1] and
    /// never decrease over a run.
    pub fn set_fractions(&mut self, fractions: &[f32]) {
        for (p, &f) in self.params.iter_mut().zip(fractions) {
            p.fraction = p.fraction.max(f.clamp(0.0, 1.0));
        }
    }

    /// Set every parameter to the same fraction (evaluation at fixed f).
    pub fn set_uniform_fraction(&mut self, f: f32) {
        let fs = vec![f; self.params.len()];
        self.set_fractions(&fs);
    }
}

/// Learner-side curriculum controller: the success window plus the
/// authoritative fractions.
#[derive(Clone, Debug)]
pub struct AdrController {
    pub sampler: AdrSampler,
    window: Vec<bool>,
    window_size: usize,
    threshold: f32,
    step: f32,
}

impl AdrController {
    pub fn from_config(cfg: &AdrConfig) -> Result<Self, EnvError> {
        if cfg.window == 0 {
            return Err(EnvError::Config("ADR window must be positive".into()));
        }
        Ok(Self {
            sampler: AdrSampler::from_config(cfg)?,
            window: Vec::with_capacity(cfg.window),
            window_size: cfg.window,
            threshold: cfg.threshold,
            step: cfg.step,
        })
    }

    pub fn fractions(&self) -> Vec<f32> {
        self.sampler.fractions()
    }

    /// Mean fraction over params ("ADR Inc." in reports).
    pub fn mean_fraction(&self) -> f64 {
        let fs = self.sampler.fractions();
        fs.iter().map(|&f| f as f64).sum::<f64>() / fs.len().max(1) as f64
    }

    /// Fraction of params that reached their terminal range.
    pub fn pct_terminal(&self) -> f64 {
        let fs = self.sampler.fractions();
        let n = fs.len().max(1);
        fs.iter().filter(|&&f| f >= 1.0 - 1e-6).count() as f64 / n as f64
    }

    pub fn window_fill(&self) -> usize {
        self.window.len()
    }

    /// Push per-episode success results; when the window fills and its mean
    /// reaches the threshold, every fraction advances by one step and the
    /// window is cleared. Returns true if any expansion happened.
    pub fn record(&mut self, results: impl IntoIterator<Item = bool>) -> bool {
        let mut expanded = false;
        for r in results {
            if self.window.len() == self.window_size {
                // ring behaviour: a full window below threshold keeps sliding
                self.window.remove(0);
            }
            self.window.push(r);
            if self.window.len() == self.window_size {
                let mean =
                    self.window.iter().filter(|&&b| b).count() as f32 / self.window_size as f32;
                if mean >= self.threshold {
                    for p in &mut self.sampler.params {
                        p.fraction = (p.fraction + self.step).min(1.0);
                    }
                    self.window.clear();
                    expanded = true;
                }
            }
        }
        expanded
    }
}
