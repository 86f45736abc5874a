//! Data-parallel baseline: every worker owns its own env shard, experience
//! buffer, and policy copy; per-minibatch gradients are averaged at worker 0
//! (the hub) and every worker applies the identical averaged step, keeping
//! parameters bit-identical across the fleet.
//!
//! The hub also owns the ADR window (fed by its own shard's episode results)
//! and broadcasts fractions to peers once per iteration via `AdrUpdate`.

use std::io::{BufReader, BufWriter, Write as _};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::time::Instant;

use crate::env::{AdrController, VecEnv, ACTION_DIM, PROPRIO_DIM};
use crate::metrics::{rss_bytes, MetricsRecord, MetricsWriter};
use crate::nn::{adam_step, save_checkpoint, AdamState, PolicyNet};
use crate::proto::{read_frame, write_frame, Message, WireTensor};

use super::buffer::ExperienceBuffer;
use super::gae::{compute_gae, normalize_advantages};
use super::ppo::{clip_grad_norm, ppo_minibatch_grad, FlatBatch, PpoStats};
use super::rollout::{collect_rollout, LocalLink, ReplicaLink};
use super::train::{bind_with_retry, TrainConfig, TrainSummary};
use super::LearnerError;

struct PeerConn {
    rank: u32,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// The gradient-exchange side of a worker.
enum DpLink {
    /// world == 1: averaging is the identity.
    Solo,
    /// rank 0: receives peer gradients, broadcasts the average.
    Hub { peers: Vec<PeerConn> },
    /// rank > 0: sends its gradient, applies the broadcast average.
    Peer {
        reader: BufReader<TcpStream>,
        writer: BufWriter<TcpStream>,
    },
}

impl DpLink {
    /// Average `local` with every other worker's gradient for `step_id`.
    /// The hub accumulates in rank order so every run reduces identically;
    /// peers apply the exact broadcast bytes.
    fn exchange(
        &mut self,
        step_id: u64,
        local: &[f32],
        world: u32,
    ) -> Result<Vec<f32>, LearnerError> {
        match self {
            DpLink::Solo => Ok(local.to_vec()),
            DpLink::Hub { peers } => {
                let mut sum = local.to_vec();
                for p in peers.iter_mut() {
                    let msg = read_frame(&mut p.reader)?;
                    match msg {
                        Message::Grads { step_id: sid, flat } => {
                            if sid != step_id {
                                return Err(LearnerError::Config(format!(
                                    "peer {}: grads for step {sid}, expected {step_id}",
                                    p.rank
                                )));
                            }
                            let g = flat.as_f32()?;
                            if g.len() != sum.len() {
                                return Err(LearnerError::Config(format!(
                                    "peer {}: gradient length {}, expected {}",
                                    p.rank,
                                    g.len(),
                                    sum.len()
                                )));
                            }
                            for (a, b) in sum.iter_mut().zip(g) {
                                *a += b;
                            }
                        }
                        other => {
                            return Err(LearnerError::Config(format!(
                                "peer {}: expected Grads, got {}",
                                p.rank,
                                other.type_name()
                            )))
                        }
                    }
                }
                let inv = 1.0 / world as f32;
                for a in sum.iter_mut() {
                    *a *= inv;
                }
                let msg = Message::AvgGrads {
                    step_id,
                    flat: WireTensor::f32(vec![sum.len() as u32], sum.clone())?,
                };
                for p in peers.iter_mut() {
                    write_frame(&mut p.writer, &msg)?;
                    p.writer.flush().map_err(LearnerError::Io)?;
                }
                Ok(sum)
            }
            DpLink::Peer { reader, writer } => {
                let msg = Message::Grads {
                    step_id,
                    flat: WireTensor::f32(vec![local.len() as u32], local.to_vec())?,
                };
                write_frame(writer, &msg)?;
                writer.flush().map_err(LearnerError::Io)?;
                match read_frame(reader)? {
                    Message::AvgGrads { step_id: sid, flat } => {
                        if sid != step_id {
                            return Err(LearnerError::Config(format!(
                                "hub sent avg for step {sid}, expected {step_id}"
                            )));
                        }
                        Ok(flat.as_f32()?.to_vec())
                    }
                    other => Err(LearnerError::Config(format!(
                        "expected AvgGrads, got {}",
                        other.type_name()
                    ))),
                }
            }
        }
    }

    /// Once per iteration: the hub pushes fractions, peers receive them.
    fn sync_adr(&mut self, adr: &mut AdrController) -> Result<(), LearnerError> {
        match self {
            DpLink::Solo => Ok(()),
            DpLink::Hub { peers } => {
                let fr = adr.fractions();
                let msg = Message::AdrUpdate {
                    fractions: WireTensor::f32(vec![fr.len() as u32], fr)?,
                };
                for p in peers.iter_mut() {
                    write_frame(&mut p.writer, &msg)?;
                    p.writer.flush().map_err(LearnerError::Io)?;
                }
                Ok(())
            }
            DpLink::Peer { reader, .. } => match read_frame(reader)? {
                Message::AdrUpdate { fractions } => {
                    adr.sampler.set_fractions(fractions.as_f32()?);
                    Ok(())
                }
                other => Err(LearnerError::Config(format!(
                    "expected AdrUpdate, got {}",
                    other.type_name()
                ))),
            },
        }
    }

    fn finish(&mut self) -> Result<(), LearnerError> {
        match self {
            DpLink::Solo => Ok(()),
            DpLink::Hub { peers } => {
                for p in peers.iter_mut() {
                    write_frame(&mut p.writer, &Message::Shutdown)?;
                    p.writer.flush().map_err(LearnerError::Io)?;
                }
                Ok(())
            }
            DpLink::Peer { reader, .. } => match read_frame(reader)? {
                Message::Shutdown => Ok(()),
                other => Err(LearnerError::Config(format!(
                    "expected Shutdown, got {}",
                    other.type_name()
                ))),
            },
        }
    }
}

/// Hub entry point (rank 0): bind, print `LISTENING <addr>`, collect peer
/// handshakes, run the DP loop.
pub fn dp_hub(
    listen: &str,
    cfg: &TrainConfig,
    world: u32,
    out_dir: &Path,
) -> Result<TrainSummary, LearnerError> {
    let link = if world <= 1 {
        let listener = bind_with_retry(listen, 16)?;
        println!("LISTENING {}", listener.local_addr().map_err(LearnerError::Io)?);
        DpLink::Solo
    } else {
        let listener = bind_with_retry(listen, 16)?;
        println!("LISTENING {}", listener.local_addr().map_err(LearnerError::Io)?);
        DpLink::Hub {
            peers: accept_peers(&listener, world)?,
        }
    };
    dp_run(cfg, 0, world, link, out_dir)
}

/// Peer entry point (rank > 0): connect to the hub and run the DP loop.
pub fn dp_peer(
    connect: &str,
    cfg: &TrainConfig,
    rank: u32,
    world: u32,
    out_dir: &Path,
) -> Result<TrainSummary, LearnerError> {
    if rank == 0 || rank >= world {
        return Err(LearnerError::Config(format!(
            "peer rank {rank} out of range for world {world}"
        )));
    }
    let stream = connect_with_retry(connect)?;
    stream.set_nodelay(true).ok();
    let reader = BufReader::new(stream.try_clone().map_err(LearnerError::Io)?);
    let mut writer = BufWriter::new(stream);
    let shard = cfg.total_envs / world as usize;
    write_frame(
        &mut writer,
        &Message::Hello {
            replica_id: rank,
            num_envs: shard as u32,
            obs_spec: vec![],
        },
    )?;
    writer.flush().map_err(LearnerError::Io)?;
    dp_run(cfg, rank, world, DpLink::Peer { reader, writer }, out_dir)
}

fn accept_peers(listener: &TcpListener, world: u32) -> Result<Vec<PeerConn>, LearnerError> {
    let mut peers = Vec::new();
    while peers.len() + 1 < world as usize {
        let (stream, _) = listener.accept().map_err(LearnerError::Io)?;
        stream.set_nodelay(true).ok();
        let mut reader = BufReader::new(stream.try_clone().map_err(LearnerError::Io)?);
        let writer = BufWriter::new(stream);
        match read_frame(&mut reader)? {
            Message::Hello { replica_id, .. } => {
                if replica_id == 0 || replica_id >= world {
                    return Err(LearnerError::Config(format!(
                        "peer announced rank {replica_id}, world {world}"
                    )));
                }
                if peers.iter().any(|p: &PeerConn| p.rank == replica_id) {
                    return Err(LearnerError::Config(format!(
                        "duplicate peer rank {replica_id}"
                    )));
                }
                peers.push(PeerConn {
                    rank: replica_id,
                    reader,
                    writer,
                });
            }
            other => {
                return Err(LearnerError::Config(format!(
                    "expected Hello from peer, got {}",
                    other.type_name()
                )))
            }
        }
    }
    peers.sort_by_key(|p| p.rank);
    Ok(peers)
}

fn connect_with_retry(addr: &str) -> Result<TcpStream, LearnerError> {
    let deadline = Instant::now() + std::time::Duration::from_secs(10);
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < deadline => {
                let _ = e;
                std::thread::sleep(std::time::Duration::from_millis(50));
            }
            Err(e) => return Err(LearnerError::Io(e)),
        }
    }
}

/// The per-worker DP training loop.
fn dp_run(
    cfg: &TrainConfig,
    rank: u32,
    world: u32,
    mut link: DpLink,
    out_dir: &Path,
) -> Result<TrainSummary, LearnerError> {
    if cfg.total_envs % world as usize != 0 {
        return Err(LearnerError::Config(format!(
            "total_envs {} not divisible by world {world}",
            cfg.total_envs
        )));
    }
    let net_cfg = cfg.net.to_net_config(&cfg.env);
    let mut net = PolicyNet::new(net_cfg, cfg.seed)?;
    if net.is_recurrent() {
        return Err(LearnerError::Config(
            "dp mode supports feedforward trunks".into(),
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(LearnerError::Io)?;
    let shard = cfg.total_envs / world as usize;
    let offset = rank * shard as u32;
    let mut links: Vec<Box<dyn ReplicaLink>> = vec![Box::new(LocalLink::new(VecEnv::new(
        cfg.env.clone(),
        cfg.seed,
        offset,
        shard,
    )?))];
    let mut adr = AdrController::from_config(&cfg.env.adr)?;
    if cfg.initial_adr_fraction > 0.0 {
        adr.sampler.set_uniform_fraction(cfg.initial_adr_fraction);
        let fr = adr.fractions();
        for l in links.iter_mut() {
            l.send_adr(&fr)?;
        }
    }
    let mut adam = AdamState::new(net.num_params());
    let mut hidden = net.zero_hidden(shard);
    let channels = cfg.env.obs_mode.channels().unwrap_or(0);
    let mut buf = ExperienceBuffer::new(
        cfg.ppo.horizon,
        shard,
        cfg.env.primary_dim(),
        PROPRIO_DIM,
        ACTION_DIM,
        channels,
    );
    let mut metrics = MetricsWriter::create(&out_dir.join(format!("metrics_rank{rank}.jsonl")))?;
    let mut checksums = std::io::BufWriter::new(
        std::fs::File::create(out_dir.join(format!("checksums_rank{rank}.txt")))
            .map_err(LearnerError::Io)?,
    );

    let mut step_id = 0u64;
    let mut last_sr = 0.0;
    let adam_cfg = cfg.ppo.adam();
    for iter in 0..cfg.iters {
        let t0 = Instant::now();
        let rollout = collect_rollout(&net, &mut links, &mut buf, &mut hidden, cfg.seed, iter, false)?;
        let (mut adv, ret) = compute_gae(&buf, cfg.ppo.gamma, cfg.ppo.lam);
        if cfg.ppo.adv_norm {
            normalize_advantages(&mut adv);
        }

        let total = buf.total_samples();
        let (pd, qd, ad) = (buf.primary_dim, buf.proprio_dim, buf.action_dim);
        let mut idx: Vec<usize> = (0..total).collect();
        let mut stats = PpoStats::default();
        let mut weight = 0.0;
        for epoch in 0..cfg.ppo.epochs {
            // shard-local shuffle; determinism only requires that each
            // worker's own stream is fixed
            let mut shuffle =
                crate::rng::Stream::from_parts(&[cfg.seed, 0x9911, rank as u64, iter, epoch as u64]);
            shuffle.shuffle(&mut idx);
            let mb_size = total.div_ceil(cfg.ppo.minibatches);
            for mb_idx in idx.chunks(mb_size) {
                let k = mb_idx.len();
                let mut primary = vec![0.0f32; k * pd];
                let mut proprio = vec![0.0f32; k * qd];
                let mut actions = vec![0.0f32; k * ad];
                let mut old_logp = vec![0.0f32; k];
                let mut advantages = vec![0.0f32; k];
                let mut returns = vec![0.0f32; k];
                for (j, &i) in mb_idx.iter().enumerate() {
                    primary[j * pd..(j + 1) * pd]
                        .copy_from_slice(&buf.obs_primary[i * pd..(i + 1) * pd]);
                    proprio[j * qd..(j + 1) * qd]
                        .copy_from_slice(&buf.obs_proprio[i * qd..(i + 1) * qd]);
                    actions[j * ad..(j + 1) * ad]
                        .copy_from_slice(&buf.actions[i * ad..(i + 1) * ad]);
                    old_logp[j] = buf.log_probs[i];
                    advantages[j] = adv[i];
                    returns[j] = ret[i];
                }
                let mb = FlatBatch {
                    n: k,
                    primary: &primary,
                    proprio: &proprio,
                    actions: &actions,
                    old_logp: &old_logp,
                    advantages: &advantages,
                    returns: &returns,
                };
                let (part, local_grads) = ppo_minibatch_grad(&net, &mb, &cfg.ppo)?;
                let mut avg = link.exchange(step_id, &local_grads, world)?;
                step_id += 1;
                // identical input -> identical clipped step on every worker
                clip_grad_norm(&mut avg, cfg.ppo.max_grad_norm);
                adam_step(net.params_mut(), &avg, &mut adam, &adam_cfg)?;
                writeln!(checksums, "{} {:016x}", step_id, net.checksum())
                    .map_err(LearnerError::Io)?;
                stats.policy_loss += part.policy_loss * k as f64;
                stats.value_loss += part.value_loss * k as f64;
                stats.entropy += part.entropy * k as f64;
                stats.clip_frac += part.clip_frac * k as f64;
                stats.approx_kl += part.approx_kl * k as f64;
                weight += k as f64;
            }
        }
        checksums.flush().map_err(LearnerError::Io)?;
        if weight > 0.0 {
            stats.policy_loss /= weight;
            stats.value_loss /= weight;
            stats.entropy /= weight;
            stats.clip_frac /= weight;
            stats.approx_kl /= weight;
        }

        // curriculum: the hub's shard drives the window; everyone applies
        // the same fractions before the next iteration's resets
        if rank == 0 {
            adr.record(buf.episode_results());
        }
        link.sync_adr(&mut adr)?;
        let fr = adr.fractions();
        for l in links.iter_mut() {
            l.send_adr(&fr)?;
        }

        let dt = t0.elapsed().as_secs_f64().max(1e-9);
        last_sr = if rollout.episodes > 0 {
            rollout.successes as f64 / rollout.episodes as f64
        } else {
            0.0
        };
        metrics.append(&MetricsRecord {
            iter,
            env_steps: (iter + 1) * (shard as u64) * (cfg.ppo.horizon as u64),
            sr: last_sr,
            adr_fraction: adr.mean_fraction(),
            pct_terminal_params: adr.pct_terminal(),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_frac: stats.clip_frac,
            kl: stats.approx_kl,
            steps_per_sec: (shard * cfg.ppo.horizon) as f64 / dt,
            buffer_bytes: buf.image_block_bytes(),
            rss_bytes: rss_bytes(),
        })?;
    }
    link.finish()?;

    let final_path = out_dir.join(format!("ckpt_rank{rank}_final.dsnn"));
    save_checkpoint(&final_path, &net, cfg.checkpoint_tags())?;
    Ok(TrainSummary {
        iters: cfg.iters,
        final_sr: last_sr,
        final_adr_fraction: adr.mean_fraction(),
        checkpoint: final_path,
    })
}
