//! Frozen-policy throughput measurement (no learning, no claims beyond this
//! machine): steps/sec plus a per-phase wall-time breakdown.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::env::{ACTION_DIM, PROPRIO_DIM};
use crate::learner::{accept_replicas, bind_with_retry, local_links, ReplicaLink, TrainConfig};
use crate::nn::{ObsInput, PolicyNet};
use crate::rng;

use super::launch::{reap_children, spawn_replicas};
use super::HarnessError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BenchTopology {
    /// One process, one vectorized env shard.
    Single { envs: usize },
    /// Real replica processes over localhost sockets.
    Disagg { replicas: usize, envs_per_replica: usize },
}

impl BenchTopology {
    pub fn total_envs(&self) -> usize {
        match *self {
            BenchTopology::Single { envs } => envs,
            BenchTopology::Disagg {
                replicas,
                envs_per_replica,
            } => replicas * envs_per_replica,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub topology: BenchTopology,
    pub total_envs: usize,
    pub steps: u64,
    pub env_steps: u64,
    pub wall_s: f64,
    pub env_steps_per_sec: f64,
    /// Learner-side policy forward time.
    pub inference_s: f64,
    /// Scatter + env step + gather. For the single-process topology this is
    /// pure env compute; for the disagg topology it folds remote env compute
    /// into the wire roundtrip (replicas carry no timers).
    pub step_phase_s: f64,
    /// wall_s - inference_s - step_phase_s (obs stacking, sampling, misc).
    pub overhead_s: f64,
}

/// Drive frozen-policy rollouts for `duration`, measuring phases.
/// `exe` supplies the replica binary for the disagg topology.
pub fn bench_throughput(
    topology: &BenchTopology,
    duration: Duration,
    cfg: &TrainConfig,
    exe: Option<&Path>,
    scratch_dir: &Path,
) -> Result<BenchReport, HarnessError> {
    let n = topology.total_envs();
    if n == 0 {
        return Err(HarnessError::Config("benchmark needs at least one env".into()));
    }
    let net = PolicyNet::new(cfg.net.to_net_config(&cfg.env), cfg.seed)?;
    if net.is_recurrent() {
        return Err(HarnessError::Config(
            "throughput bench drives feedforward policies".into(),
        ));
    }

    let mut children = Vec::new();
    let mut links: Vec<Box<dyn ReplicaLink>> = match topology {
        BenchTopology::Single { envs } => local_links(&cfg.env, cfg.seed, &[(0, *envs)])?,
        BenchTopology::Disagg {
            replicas,
            envs_per_replica,
        } => {
            let exe = exe
                .map(|p| p.to_path_buf())
                .or_else(|| std::env::current_exe().ok())
                .ok_or_else(|| HarnessError::Config("no executable to spawn".into()))?;
            std::fs::create_dir_all(scratch_dir).map_err(HarnessError::Io)?;
            let env_cfg_path = scratch_dir.join("bench_env_config.json");
            std::fs::write(
                &env_cfg_path,
                serde_json::to_string_pretty(&cfg.env)
                    .map_err(|e| HarnessError::Config(e.to_string()))?,
            )
            .map_err(HarnessError::Io)?;
            let listener = bind_with_retry("127.0.0.1:0", 1)?;
            let addr = listener.local_addr().map_err(HarnessError::Io)?.to_string();
            children = spawn_replicas(
                &exe,
                &addr,
                &env_cfg_path,
                *replicas,
                *envs_per_replica,
                cfg.seed,
            )?;
            accept_replicas(&listener, *replicas, *envs_per_replica, &cfg.env)?
                .into_iter()
                .map(|l| Box::new(l) as Box<dyn ReplicaLink>)
                .collect()
        }
    };

    let d_primary = cfg.env.primary_dim();
    let mut primary = vec![0.0f32; n * d_primary];
    let mut proprio = vec![0.0f32; n * PROPRIO_DIM];
    let mut actions = vec![0.0f32; n * ACTION_DIM];
    let a_dim = ACTION_DIM;

    let mut inference_s = 0.0f64;
    let mut step_phase_s = 0.0f64;
    let mut steps = 0u64;
    let start = Instant::now();
    while start.elapsed() < duration {
        {
            let mut at = 0usize;
            for link in links.iter() {
                let o = link.current_obs();
                primary[at * d_primary..(at + o.n) * d_primary].copy_from_slice(&o.primary);
                proprio[at * PROPRIO_DIM..(at + o.n) * PROPRIO_DIM].copy_from_slice(&o.proprio);
                at += o.n;
            }
        }
        let t0 = Instant::now();
        let out = net.forward(
            &ObsInput {
                n,
                primary: &primary,
                proprio: &proprio,
            },
            None,
            None,
        )?;
        inference_s += t0.elapsed().as_secs_f64();

        for e in 0..n {
            for d in 0..a_dim {
                let eps = rng::keyed_normal(&[cfg.seed, 0xBE, steps, e as u64, d as u64]);
                actions[e * a_dim + d] = out.mean[e * a_dim + d] + 0.3 * eps;
            }
        }
        let t1 = Instant::now();
        {
            let mut at = 0usize;
            for link in links.iter_mut() {
                let k = link.num_envs();
                link.send_actions(&actions[at * a_dim..(at + k) * a_dim])
                    .map_err(HarnessError::Learner)?;
                at += k;
            }
            for link in links.iter_mut() {
                link.recv_step().map_err(HarnessError::Learner)?;
            }
        }
        step_phase_s += t1.elapsed().as_secs_f64();
        steps += 1;
    }
    let wall_s = start.elapsed().as_secs_f64();
    for link in links.iter_mut() {
        link.shutdown().map_err(HarnessError::Learner)?;
    }
    drop(links);
    if !children.is_empty() {
        reap_children(&mut children, Duration::from_secs(10));
    }

    let env_steps = steps * n as u64;
    Ok(BenchReport {
        topology: topology.clone(),
        total_envs: n,
        steps,
        env_steps,
        wall_s,
        env_steps_per_sec: env_steps as f64 / wall_s,
        inference_s,
        step_phase_s,
        overhead_s: (wall_s - inference_s - step_phase_s).max(0.0),
    })
}
