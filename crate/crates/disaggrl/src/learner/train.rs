//! The trainer process: rollout -> GAE -> PPO -> ADR, once per iteration.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{AdrController, EnvConfig, ACTION_DIM, PROPRIO_DIM, STATE_DIM};
use crate::metrics::{rss_bytes, MetricsRecord, MetricsWriter};
use crate::nn::{save_checkpoint, AdamState, InputKind, NetConfig, PolicyNet, TrunkConfig};

use super::buffer::ExperienceBuffer;
use super::ppo::{ppo_update, PpoConfig};
use super::rollout::{accept_replicas, collect_rollout, local_links, validate_links, ReplicaLink};
use super::LearnerError;

/// Network hyperparameters independent of the observation mode; the input
/// spec is derived from the env config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSpec {
    pub conv_filters: Vec<usize>,
    pub embed_dim: usize,
    pub trunk: TrunkConfig,
    pub aux_head: bool,
    pub init_log_std: f32,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            conv_filters: vec![8, 16, 16, 32],
            embed_dim: 32,
            trunk: TrunkConfig::Feedforward {
                hidden: vec![64, 64],
            },
            aux_head: false,
            init_log_std: -0.5,
        }
    }
}

impl NetSpec {
    /// Full-size preset mirroring the reference architecture.
    pub fn paper_preset() -> Self {
        Self {
            conv_filters: vec![16, 32, 64, 128],
            embed_dim: 32,
            trunk: TrunkConfig::Recurrent {
                cell: crate::nn::CellKind::Lstm,
                layers: 2,
                hidden: 1024,
                mlp: vec![512, 512, 256],
            },
            aux_head: false,
            init_log_std: -0.5,
        }
    }

    pub fn to_net_config(&self, env: &EnvConfig) -> NetConfig {
        let input = match env.obs_mode.channels() {
            Some(c) => InputKind::Image {
                channels: c,
                height: env.image_h,
                width: env.image_w,
            },
            None => InputKind::Vector { dim: STATE_DIM },
        };
        NetConfig {
            input,
            proprio_dim: PROPRIO_DIM,
            action_dim: ACTION_DIM,
            conv_filters: self.conv_filters.clone(),
            embed_dim: self.embed_dim,
            trunk: self.trunk.clone(),
            aux_head: self.aux_head,
            init_log_std: self.init_log_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub net: NetSpec,
    pub ppo: PpoConfig,
    pub total_envs: usize,
    pub iters: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Start the curriculum at this fraction (resume / fixed-f training).
    pub initial_adr_fraction: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            net: NetSpec::default(),
            ppo: PpoConfig::default(),
            total_envs: 24,
            iters: 10,
            seed: 0,
            checkpoint_every: 50,
            initial_adr_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self, LearnerError> {
        let text = std::fs::read_to_string(path).map_err(LearnerError::Io)?;
        let cfg: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| LearnerError::Config(format!("{}: {e}", path.display())))?;
        cfg.env.validate()?;
        cfg.ppo.validate()?;
        Ok(cfg)
    }

    pub fn checkpoint_tags(&self) -> BTreeMap<String, String> {
        let mut tags = BTreeMap::new();
        tags.insert(
            "obs_mode".to_string(),
            self.env.obs_mode.primary_name().to_string(),
        );
        tags
    }
}

pub struct TrainSummary {
    pub iters: u64,
    pub final_sr: f64,
    pub final_adr_fraction: f64,
    pub checkpoint: PathBuf,
}

/// The synchronous training loop over an arbitrary set of links.
pub fn train(
    net: &mut PolicyNet,
    links: &mut Vec<Box<dyn ReplicaLink>>,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainSummary, LearnerError> {
    validate_links(links, cfg.total_envs)?;
    std::fs::create_dir_all(out_dir).map_err(LearnerError::Io)?;
    let mut metrics = MetricsWriter::create(&out_dir.join("metrics.jsonl"))?;
    let mut adr = AdrController::from_config(&cfg.env.adr)?;
    if cfg.initial_adr_fraction > 0.0 {
        adr.sampler.set_uniform_fraction(cfg.initial_adr_fraction);
        let fr = adr.fractions();
        for link in links.iter_mut() {
            link.send_adr(&fr)?;
        }
    }
    let mut adam = AdamState::new(net.num_params());
    let mut hidden = net.zero_hidden(cfg.total_envs);
    let channels = cfg.env.obs_mode.channels().unwrap_or(0);
    let mut buf = ExperienceBuffer::new(
        cfg.ppo.horizon,
        cfg.total_envs,
        cfg.env.primary_dim(),
        PROPRIO_DIM,
        ACTION_DIM,
        channels,
    );

    let mut last_sr = 0.0f64;
    for iter in 0..cfg.iters {
        let t0 = Instant::now();
        let rollout = collect_rollout(net, links, &mut buf, &mut hidden, cfg.seed, iter, false)?;
        let stats = ppo_update(net, &buf, &cfg.ppo, &mut adam, cfg.seed, iter)?;

        // curriculum: per-episode successes feed the window; on expansion the
        // new fractions reach every shard before its next reset sampling
        let expanded = adr.record(buf.episode_results());
        if expanded {
            let fr = adr.fractions();
            for link in links.iter_mut() {
                link.send_adr(&fr)?;
            }
        }

        let dt = t0.elapsed().as_secs_f64().max(1e-9);
        last_sr = if rollout.episodes > 0 {
            rollout.successes as f64 / rollout.episodes as f64
        } else {
            0.0
        };
        metrics.append(&MetricsRecord {
            iter,
            env_steps: (iter + 1) * (cfg.total_envs as u64) * (cfg.ppo.horizon as u64),
            sr: last_sr,
            adr_fraction: adr.mean_fraction(),
            pct_terminal_params: adr.pct_terminal(),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_frac: stats.clip_frac,
            kl: stats.approx_kl,
            steps_per_sec: (cfg.total_envs * cfg.ppo.horizon) as f64 / dt,
            buffer_bytes: buf.image_block_bytes(),
            rss_bytes: rss_bytes(),
        })?;

        if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 {
            save_checkpoint(
                &out_dir.join(format!("ckpt_iter{:06}.dsnn", iter + 1)),
                net,
                cfg.checkpoint_tags(),
            )?;
        }
    }
    let final_path = out_dir.join("ckpt_final.dsnn");
    save_checkpoint(&final_path, net, cfg.checkpoint_tags())?;
    Ok(TrainSummary {
        iters: cfg.iters,
        final_sr: last_sr,
        final_adr_fraction: adr.mean_fraction(),
        checkpoint: final_path,
    })
}

/// Single-process layout: every env lives in one local link.
pub fn train_local(cfg: &TrainConfig, out_dir: &Path) -> Result<TrainSummary, LearnerError> {
    let mut net = PolicyNet::new(cfg.net.to_net_config(&cfg.env), cfg.seed)?;
    let mut links = local_links(&cfg.env, cfg.seed, &[(0, cfg.total_envs)])?;
    train(&mut net, &mut links, cfg, out_dir)
}

/// Disaggregated learner entry point: bind, announce, accept replicas, train,
/// shut the replicas down. Prints `LISTENING <addr>` once ready so a launcher
/// can wire replicas to it.
pub fn learner_main(
    listen: &str,
    replicas: usize,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainSummary, LearnerError> {
    if replicas == 0 {
        return Err(LearnerError::Config("need at least one replica".into()));
    }
    if cfg.total_envs % replicas != 0 {
        return Err(LearnerError::Config(format!(
            "total_envs {} not divisible by {replicas} replicas",
            cfg.total_envs
        )));
    }
    let envs_per = cfg.total_envs / replicas;
    let listener = bind_with_retry(listen, 16)?;
    let addr = listener.local_addr().map_err(LearnerError::Io)?;
    println!("LISTENING {addr}");
    let tcp_links = accept_replicas(&listener, replicas, envs_per, &cfg.env)?;
    let mut links: Vec<Box<dyn ReplicaLink>> = tcp_links
        .into_iter()
        .map(|l| Box::new(l) as Box<dyn ReplicaLink>)
        .collect();
    let mut net = PolicyNet::new(cfg.net.to_net_config(&cfg.env), cfg.seed)?;
    let summary = train(&mut net, &mut links, cfg, out_dir)?;
    for link in links.iter_mut() {
        link.shutdown()?;
    }
    Ok(summary)
}

/// Bind `addr`; on AddrInUse, retry the next ports (recorded on stderr).
pub fn bind_with_retry(addr: &str, attempts: u16) -> Result<TcpListener, LearnerError> {
    let (host, port) = match addr.rsplit_once(':') {
        Some((h, p)) => (
            h.to_string(),
            p.parse::<u16>()
                .map_err(|_| LearnerError::Config(format!("bad listen address {addr}")))?,
        ),
        None => return Err(LearnerError::Config(format!("bad listen address {addr}"))),
    };
    let mut last_err = None;
    for i in 0..attempts {
        let try_addr = format!("{host}:{}", if port == 0 { 0 } else { port + i });
        match TcpListener::bind(&try_addr) {
            Ok(l) => {
                if i > 0 {
                    eprintln!("port {port} busy; bound {try_addr} instead");
                }
                return Ok(l);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AddrInUse && port != 0 => {
                last_err = Some(e);
            }
            Err(e) => return Err(LearnerError::Io(e)),
        }
    }
    Err(LearnerError::Io(last_err.unwrap()))
}

/// Mode tag used by the CLI for the learner's role.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Disagg,
    Dp,
}

impl std::str::FromStr for TrainMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "disagg" => Ok(TrainMode::Disagg),
            "dp" => Ok(TrainMode::Dp),
            other => Err(format!("unknown mode {other:?} (disagg|dp)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ObsMode;

    fn smoke_cfg() -> TrainConfig {
        TrainConfig {
            env: EnvConfig {
                obs_mode: ObsMode::State,
                ..Default::default()
            },
            net: NetSpec {
                trunk: TrunkConfig::Feedforward { hidden: vec![16] },
                embed_dim: 8,
                ..Default::default()
            },
            ppo: PpoConfig {
                horizon: 8,
                minibatches: 2,
                epochs: 2,
                ..Default::default()
            },
            total_envs: 8,
            iters: 2,
            seed: 1,
            checkpoint_every: 0,
        }
    }

    /// Plumbing smoke: two iterations, metrics file has two records,
    /// checkpoint exists, ADR fraction nondecreasing.
    #[test]
    fn local_training_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_cfg();
        let summary = train_local(&cfg, dir.path()).unwrap();
        assert_eq!(summary.iters, 2);
        assert!(summary.checkpoint.exists());
        let records = crate::metrics::read_metrics(&dir.path().join("metrics.jsonl")).unwrap();
        assert_eq!(records.len(), 2);
        let mut last = 0.0;
        for r in &records {
            assert!(r.adr_fraction >= last);
            last = r.adr_fraction;
            assert!(r.steps_per_sec > 0.0);
            assert_eq!(r.buffer_bytes, 0); // state obs: no image block
            assert!(r.rss_bytes > 0);
        }
        assert_eq!(records[1].env_steps, 2 * 8 * 8);
    }

    /// Identical config + seed => identical metrics modulo timing fields.
    #[test]
    fn training_is_deterministic() {
        let cfg = smoke_cfg();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        train_local(&cfg, d1.path()).unwrap();
        train_local(&cfg, d2.path()).unwrap();
        let m1 = crate::metrics::read_metrics(&d1.path().join("metrics.jsonl")).unwrap();
        let m2 = crate::metrics::read_metrics(&d2.path().join("metrics.jsonl")).unwrap();
        for (a, b) in m1.iter().zip(&m2) {
            let mut a = a.clone();
            let mut b = b.clone();
            a.steps_per_sec = 0.0;
            b.steps_per_sec = 0.0;
            a.rss_bytes = 0;
            b.rss_bytes = 0;
            assert_eq!(a, b);
        }
        let c1 = std::fs::read(d1.path().join("ckpt_final.dsnn")).unwrap();
        let c2 = std::fs::read(d2.path().join("ckpt_final.dsnn")).unwrap();
        assert_eq!(c1, c2);
    }

    /// A recurrent trunk exercises the sequence-aligned minibatch path.
    #[test]
    fn recurrent_training_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke_cfg();
        cfg.net.trunk = TrunkConfig::Recurrent {
            cell: crate::nn::CellKind::Gru,
            layers: 1,
            hidden: 12,
            mlp: vec![16],
        };
        cfg.total_envs = 4;
        cfg.iters = 2;
        let summary = train_local(&cfg, dir.path()).unwrap();
        assert!(summary.checkpoint.exists());
    }
}
