//! Replica links and rollout collection.
//!
//! A `ReplicaLink` is the learner's handle to one shard of environments:
//! either a socket session with a replica process or an in-process `VecEnv`.
//! Both obey the same lockstep contract, which is what makes the
//! disaggregated and single-process layouts produce identical buffers.

use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};

use crate::env::wire::{obs_from_named, obs_spec};
use crate::env::{EnvConfig, ObsBatch, StepBatch, VecEnv, ACTION_DIM, PROPRIO_DIM};
use crate::nn::{gaussian_logprob_entropy, ObsInput, PolicyNet};
use crate::proto::{
    read_frame, session_step, write_frame, Message, SessionState, WireTensor,
};
use crate::rng;

use super::buffer::ExperienceBuffer;
use super::LearnerError;

/// Stream tag for action-noise keys: actions are keyed by
/// (seed, tag, iter, t, global_env, dim) so layouts cannot change them.
const ACTION_STREAM: u64 = 0xAC71;

pub trait ReplicaLink {
    fn offset(&self) -> u32;
    fn num_envs(&self) -> usize;
    /// The observation the next actions will be computed from.
    fn current_obs(&self) -> &ObsBatch;
    /// Scatter this shard's action rows (learner -> replica).
    fn send_actions(&mut self, actions: &[f32]) -> Result<(), LearnerError>;
    /// Gather the step result and advance `current_obs` (replica -> learner).
    fn recv_step(&mut self) -> Result<StepBatch, LearnerError>;
    fn send_adr(&mut self, fractions: &[f32]) -> Result<(), LearnerError>;
    fn shutdown(&mut self) -> Result<(), LearnerError>;
}

/// In-process link owning a `VecEnv` shard (single-process and DP layouts).
pub struct LocalLink {
    env: VecEnv,
    obs: ObsBatch,
    pending: Option<StepBatch>,
}

impl LocalLink {
    pub fn new(env: VecEnv) -> Self {
        let obs = env.observe();
        Self {
            env,
            obs,
            pending: None,
        }
    }

    pub fn env(&self) -> &VecEnv {
        &self.env
    }

    pub fn env_mut(&mut self) -> &mut VecEnv {
        &mut self.env
    }
}

impl ReplicaLink for LocalLink {
    fn offset(&self) -> u32 {
        self.env.id_offset()
    }

    fn num_envs(&self) -> usize {
        self.env.num_envs()
    }

    fn current_obs(&self) -> &ObsBatch {
        &self.obs
    }

    fn send_actions(&mut self, actions: &[f32]) -> Result<(), LearnerError> {
        let out = self.env.step(actions)?;
        self.obs = self.env.observe();
        self.pending = Some(out);
        Ok(())
    }

    fn recv_step(&mut self) -> Result<StepBatch, LearnerError> {
        self.pending
            .take()
            .ok_or_else(|| LearnerError::Config("recv_step before send_actions".into()))
    }

    fn send_adr(&mut self, fractions: &[f32]) -> Result<(), LearnerError> {
        self.env.set_fractions(fractions);
        Ok(())
    }

    fn shutdown(&mut self) -> Result<(), LearnerError> {
        Ok(())
    }
}

/// Learner-side socket session with one replica process.
pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    session: SessionState,
    cfg: EnvConfig,
    replica_id: u32,
    offset: u32,
    n: usize,
    obs: ObsBatch,
}

impl TcpLink {
    pub fn replica_id(&self) -> u32 {
        self.replica_id
    }

    fn advance(&mut self, msg: &Message) -> Result<(), LearnerError> {
        match session_step(self.session, msg) {
            Ok(next) => {
                self.session = next;
                Ok(())
            }
            Err(e) => {
                self.session = SessionState::Closed;
                Err(LearnerError::Session(e))
            }
        }
    }

    fn send(&mut self, msg: &Message) -> Result<(), LearnerError> {
        self.advance(msg)?;
        write_frame(&mut self.writer, msg)?;
        self.writer.flush().map_err(|e| LearnerError::Io(e))?;
        Ok(())
    }
}

impl ReplicaLink for TcpLink {
    fn offset(&self) -> u32 {
        self.offset
    }

    fn num_envs(&self) -> usize {
        self.n
    }

    fn current_obs(&self) -> &ObsBatch {
        &self.obs
    }

    fn send_actions(&mut self, actions: &[f32]) -> Result<(), LearnerError> {
        let msg = Message::Actions {
            actions: WireTensor::f32(
                vec![self.n as u32, ACTION_DIM as u32],
                actions.to_vec(),
            )?,
        };
        self.send(&msg)
    }

    fn recv_step(&mut self) -> Result<StepBatch, LearnerError> {
        let msg = read_frame(&mut self.reader)?;
        self.advance(&msg)?;
        match msg {
            Message::StepResult {
                rewards,
                dones,
                obs,
                successes,
            } => {
                let rewards = rewards.as_f32()?.to_vec();
                let dones = dones.as_u8()?.to_vec();
                let successes = successes.as_u8()?.to_vec();
                if rewards.len() != self.n || dones.len() != self.n || successes.len() != self.n
                {
                    return Err(LearnerError::Config(format!(
                        "replica {}: step result batch mismatch (expected {})",
                        self.replica_id, self.n
                    )));
                }
                self.obs = obs_from_named(&self.cfg, &obs, self.n)?;
                Ok(StepBatch {
                    rewards,
                    dones,
                    successes,
                })
            }
            other => Err(LearnerError::Config(format!(
                "replica {}: expected StepResult, got {}",
                self.replica_id,
                other.type_name()
            ))),
        }
    }

    fn send_adr(&mut self, fractions: &[f32]) -> Result<(), LearnerError> {
        let msg = Message::AdrUpdate {
            fractions: WireTensor::f32(vec![fractions.len() as u32], fractions.to_vec())?,
        };
        self.send(&msg)
    }

    fn shutdown(&mut self) -> Result<(), LearnerError> {
        if self.session == SessionState::Closed {
            return Ok(());
        }
        self.send(&Message::Shutdown)
    }
}

/// Accept `expected` replica connections, validate their Hello against the
/// env config, and collect their initial observations. Links come back
/// sorted by env offset (replica_id order).
pub fn accept_replicas(
    listener: &TcpListener,
    expected: usize,
    envs_per_replica: usize,
    cfg: &EnvConfig,
) -> Result<Vec<TcpLink>, LearnerError> {
    let want_spec = obs_spec(cfg);
    let mut links: Vec<TcpLink> = Vec::with_capacity(expected);
    while links.len() < expected {
        let (stream, _addr) = listener.accept().map_err(LearnerError::Io)?;
        stream.set_nodelay(true).ok();
        let mut reader = BufReader::new(stream.try_clone().map_err(LearnerError::Io)?);
        let writer = BufWriter::new(stream);
        let mut session = SessionState::AwaitHello;

        let hello = read_frame(&mut reader)?;
        session = session_step(session, &hello).map_err(LearnerError::Session)?;
        let (replica_id, num_envs, spec) = match hello {
            Message::Hello {
                replica_id,
                num_envs,
                obs_spec,
            } => (replica_id, num_envs as usize, obs_spec),
            other => {
                return Err(LearnerError::Config(format!(
                    "expected Hello, got {}",
                    other.type_name()
                )))
            }
        };
        if replica_id as usize >= expected {
            return Err(LearnerError::Config(format!(
                "replica id {replica_id} out of range (expected < {expected})"
            )));
        }
        if links.iter().any(|l| l.replica_id == replica_id) {
            return Err(LearnerError::Config(format!(
                "duplicate replica id {replica_id}"
            )));
        }
        if num_envs != envs_per_replica {
            return Err(LearnerError::Config(format!(
                "replica {replica_id}: {num_envs} envs, expected {envs_per_replica}"
            )));
        }
        if spec != want_spec {
            return Err(LearnerError::Config(format!(
                "replica {replica_id}: obs spec mismatch: {spec:?} vs {want_spec:?}"
            )));
        }

        let init = read_frame(&mut reader)?;
        session = session_step(session, &init).map_err(LearnerError::Session)?;
        let obs = match init {
            Message::InitialObs { obs } => obs_from_named(cfg, &obs, num_envs)?,
            other => {
                return Err(LearnerError::Config(format!(
                    "expected InitialObs, got {}",
                    other.type_name()
                )))
            }
        };
        links.push(TcpLink {
            reader,
            writer,
            session,
            cfg: cfg.clone(),
            replica_id,
            offset: replica_id * envs_per_replica as u32,
            n: num_envs,
            obs,
        });
    }
    links.sort_by_key(|l| l.offset);
    Ok(links)
}

/// Validate that links tile `0..total` contiguously in offset order.
pub fn validate_links(links: &[Box<dyn ReplicaLink>], total: usize) -> Result<(), LearnerError> {
    let mut expect = 0u32;
    for l in links {
        if l.offset() != expect {
            return Err(LearnerError::Config(format!(
                "link offset {} does not tile (expected {expect})",
                l.offset()
            )));
        }
        expect += l.num_envs() as u32;
    }
    if expect as usize != total {
        return Err(LearnerError::Config(format!(
            "links cover {expect} envs, expected {total}"
        )));
    }
    Ok(())
}

pub struct RolloutStats {
    pub episodes: u64,
    pub successes: u64,
}

/// Run one H-step rollout across all links in lockstep, filling `buf`.
///
/// Actions are sampled as mean + sigma * eps with eps keyed by
/// (seed, iter, t, global env id, dim); log-probs and values are recorded
/// for PPO. `hidden` is the persistent recurrent state across rollouts
/// (empty vec for feedforward policies); rows reset to zero when an episode
/// finishes.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout(
    policy: &PolicyNet,
    links: &mut [Box<dyn ReplicaLink>],
    buf: &mut ExperienceBuffer,
    hidden: &mut Vec<f32>,
    seed: u64,
    iter: u64,
    greedy: bool,
) -> Result<RolloutStats, LearnerError> {
    let n = buf.n_envs;
    let h = buf.horizon;
    let a_dim = buf.action_dim;
    let hid_dim = policy.hidden_dim();
    if policy.is_recurrent() {
        buf.initial_hidden = Some(hidden.clone());
    }

    let mut primary = vec![0.0f32; n * buf.primary_dim];
    let mut proprio = vec![0.0f32; n * PROPRIO_DIM];
    let mut stats = RolloutStats {
        episodes: 0,
        successes: 0,
    };
    // action noise is keyed by GLOBAL env id so any sharding of the same
    // env range draws the same actions at fixed weights
    let env_id_base = links.first().map(|l| l.offset()).unwrap_or(0) as u64;

    for t in 0..h {
        // stack current observations in offset order
        {
            let mut at = 0usize;
            for link in links.iter() {
                let o = link.current_obs();
                let k = o.n;
                primary[at * buf.primary_dim..(at + k) * buf.primary_dim]
                    .copy_from_slice(&o.primary);
                proprio[at * PROPRIO_DIM..(at + k) * PROPRIO_DIM].copy_from_slice(&o.proprio);
                at += k;
            }
            debug_assert_eq!(at, n);
        }
        let row = t * n;
        buf.obs_primary[row * buf.primary_dim..(row + n) * buf.primary_dim]
            .copy_from_slice(&primary);
        buf.obs_proprio[row * PROPRIO_DIM..(row + n) * PROPRIO_DIM].copy_from_slice(&proprio);

        let out = policy.forward(
            &ObsInput {
                n,
                primary: &primary,
                proprio: &proprio,
            },
            policy.is_recurrent().then_some(hidden.as_slice()),
            None,
        )?;

        // sample actions
        let mut actions = vec![0.0f32; n * a_dim];
        for e in 0..n {
            for d in 0..a_dim {
                let mu = out.mean[e * a_dim + d];
                actions[e * a_dim + d] = if greedy {
                    mu
                } else {
                    let eps = rng::keyed_normal(&[
                        seed,
                        ACTION_STREAM,
                        iter,
                        t as u64,
                        env_id_base + e as u64,
                        d as u64,
                    ]);
                    mu + eps * out.log_std[d].exp()
                };
            }
        }
        let (logp, _ent) = gaussian_logprob_entropy(&out.mean, &out.log_std, &actions);
        buf.actions[row * a_dim..(row + n) * a_dim].copy_from_slice(&actions);
        buf.log_probs[row..row + n].copy_from_slice(&logp);
        buf.values[row..row + n].copy_from_slice(&out.value);
        if let Some(hnew) = out.hidden {
            *hidden = hnew;
        }

        // scatter, then gather (replicas may overlap their stepping)
        {
            let mut at = 0usize;
            for link in links.iter_mut() {
                let k = link.num_envs();
                link.send_actions(&actions[at * a_dim..(at + k) * a_dim])?;
                at += k;
            }
        }
        {
            let mut at = 0usize;
            for link in links.iter_mut() {
                let k = link.num_envs();
                let sb = link.recv_step()?;
                buf.rewards[row + at..row + at + k].copy_from_slice(&sb.rewards);
                buf.dones[row + at..row + at + k].copy_from_slice(&sb.dones);
                buf.successes[row + at..row + at + k].copy_from_slice(&sb.successes);
                at += k;
            }
        }
        for e in 0..n {
            if buf.dones[row + e] != 0 {
                stats.episodes += 1;
                if buf.successes[row + e] != 0 {
                    stats.successes += 1;
                }
                // fresh episode starts with zero recurrent state
                if hid_dim > 0 {
                    hidden[e * hid_dim..(e + 1) * hid_dim].fill(0.0);
                }
            }
        }
    }

    // bootstrap values from the observation after the last transition
    {
        let mut at = 0usize;
        for link in links.iter() {
            let o = link.current_obs();
            let k = o.n;
            primary[at * buf.primary_dim..(at + k) * buf.primary_dim]
                .copy_from_slice(&o.primary);
            proprio[at * PROPRIO_DIM..(at + k) * PROPRIO_DIM].copy_from_slice(&o.proprio);
            at += k;
        }
        let out = policy.forward(
            &ObsInput {
                n,
                primary: &primary,
                proprio: &proprio,
            },
            policy.is_recurrent().then_some(hidden.as_slice()),
            None,
        )?;
        buf.bootstrap_values.copy_from_slice(&out.value);
    }
    Ok(stats)
}

/// Build one local link per shard spec (offset, n), sharing the env config.
pub fn local_links(
    cfg: &EnvConfig,
    seed: u64,
    shards: &[(u32, usize)],
) -> Result<Vec<Box<dyn ReplicaLink>>, LearnerError> {
    let mut links: Vec<Box<dyn ReplicaLink>> = Vec::new();
    for &(offset, k) in shards {
        links.push(Box::new(LocalLink::new(VecEnv::new(
            cfg.clone(),
            seed,
            offset,
            k,
        )?)));
    }
    Ok(links)
}
