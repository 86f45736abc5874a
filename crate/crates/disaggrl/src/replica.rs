//! Simulation-replica process: owns one shard of vectorized environments and
//! speaks the wire protocol — announce, send initial observations, then
//! Recv(actions) -> Step -> Send(results) until shutdown.

use std::io::{BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::env::wire::{obs_spec, obs_to_named};
use crate::env::{EnvConfig, VecEnv, ACTION_DIM};
use crate::proto::{
    read_frame, session_step, write_frame, Message, ProtoError, SessionState, WireTensor,
};

#[derive(Clone, Debug)]
pub struct ReplicaConfig {
    pub replica_id: u32,
    /// Learner address, host:port.
    pub connect: String,
    pub num_envs: usize,
    pub env: EnvConfig,
    pub global_seed: u64,
    /// Global ids of this shard are `offset .. offset + num_envs`.
    pub env_id_offset: u32,
    /// How long to keep retrying the initial connection.
    pub connect_timeout: Duration,
}

#[derive(Debug, Error)]
pub enum ReplicaError {
    /// Exit code 3.
    #[error("connection error: {0}")]
    Connection(std::io::Error),
    /// Exit code 2.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("environment error: {0}")]
    Env(#[from] crate::env::EnvError),
}

impl ReplicaError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ReplicaError::Connection(_) => 3,
            ReplicaError::Protocol(_) | ReplicaError::Env(_) => 2,
        }
    }
}

fn proto_err(e: ProtoError) -> ReplicaError {
    match e {
        ProtoError::Io(io) => ReplicaError::Connection(io),
        other => ReplicaError::Protocol(other.to_string()),
    }
}

/// Step the shard and pack the result into one `StepResult` message
/// (auto-reset means the packed observations belong to any fresh episodes).
pub fn step_once(env: &mut VecEnv, actions: &[f32]) -> Result<Message, ReplicaError> {
    let out = env.step(actions)?;
    let n = env.num_envs() as u32;
    let obs = obs_to_named(env.cfg(), &env.observe());
    Ok(Message::StepResult {
        rewards: WireTensor::f32(vec![n], out.rewards).map_err(proto_err)?,
        dones: WireTensor::u8(vec![n], out.dones).map_err(proto_err)?,
        obs,
        successes: WireTensor::u8(vec![n], out.successes).map_err(proto_err)?,
    })
}

/// Execute the replica protocol against the learner at `cfg.connect`.
/// Returns when the learner sends Shutdown.
pub fn run_replica(cfg: &ReplicaConfig) -> Result<(), ReplicaError> {
    let stream =
        connect_with_retry(&cfg.connect, cfg.connect_timeout).map_err(ReplicaError::Connection)?;
    stream.set_nodelay(true).ok();
    let mut reader = BufReader::new(stream.try_clone().map_err(ReplicaError::Connection)?);
    let mut writer = BufWriter::new(stream);
    let mut session = SessionState::AwaitHello;
    let advance = |session: &mut SessionState, msg: &Message| -> Result<(), ReplicaError> {
        match session_step(*session, msg) {
            Ok(next) => {
                *session = next;
                Ok(())
            }
            Err(e) => {
                *session = SessionState::Closed;
                Err(ReplicaError::Protocol(e.to_string()))
            }
        }
    };

    let mut env = VecEnv::new(
        cfg.env.clone(),
        cfg.global_seed,
        cfg.env_id_offset,
        cfg.num_envs,
    )?;

    let hello = Message::Hello {
        replica_id: cfg.replica_id,
        num_envs: cfg.num_envs as u32,
        obs_spec: obs_spec(&cfg.env),
    };
    advance(&mut session, &hello)?;
    write_frame(&mut writer, &hello).map_err(proto_err)?;

    let init = Message::InitialObs {
        obs: obs_to_named(&cfg.env, &env.observe()),
    };
    advance(&mut session, &init)?;
    write_frame(&mut writer, &init).map_err(proto_err)?;
    writer.flush().map_err(ReplicaError::Connection)?;

    loop {
        let msg = read_frame(&mut reader).map_err(proto_err)?;
        advance(&mut session, &msg)?;
        match msg {
            Message::Actions { actions } => {
                let a = actions.as_f32().map_err(proto_err)?;
                if a.len() != cfg.num_envs * ACTION_DIM {
                    return Err(ReplicaError::Protocol(format!(
                        "actions tensor has {} values, expected {}",
                        a.len(),
                        cfg.num_envs * ACTION_DIM
                    )));
                }
                let result = step_once(&mut env, a)?;
                advance(&mut session, &result)?;
                write_frame(&mut writer, &result).map_err(proto_err)?;
                writer.flush().map_err(ReplicaError::Connection)?;
            }
            Message::AdrUpdate { fractions } => {
                // takes effect at the next reset sampling
                env.set_fractions(fractions.as_f32().map_err(proto_err)?);
            }
            Message::Shutdown => return Ok(()),
            other => {
                return Err(ReplicaError::Protocol(format!(
                    "unexpected {} from learner",
                    other.type_name()
                )))
            }
        }
    }
}

fn connect_with_retry(addr: &str, timeout: Duration) -> std::io::Result<TcpStream> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) => {
                if Instant::now() >= deadline {
                    return Err(e);
                }
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{AdrSampler, ObsMode};
    use crate::proto::Dtype;
    use std::net::TcpListener;

    fn state_cfg(n: usize) -> ReplicaConfig {
        ReplicaConfig {
            replica_id: 0,
            connect: String::new(),
            num_envs: n,
            env: EnvConfig {
                obs_mode: ObsMode::State,
                ..Default::default()
            },
            global_seed: 11,
            env_id_offset: 0,
            connect_timeout: Duration::from_secs(10),
        }
    }

    /// Scripted fake learner: 3 Actions then Shutdown. The replica must emit
    /// Hello, one InitialObs, exactly 3 StepResults, and exit cleanly.
    #[test]
    fn protocol_trace_against_scripted_learner() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let mut cfg = state_cfg(4);
        cfg.connect = addr;
        let replica = std::thread::spawn(move || run_replica(&cfg));

        let (stream, _) = listener.accept().unwrap();
        let mut reader = std::io::BufReader::new(stream.try_clone().unwrap());
        let mut writer = std::io::BufWriter::new(stream);

        let hello = read_frame(&mut reader).unwrap();
        match &hello {
            Message::Hello {
                replica_id,
                num_envs,
                obs_spec,
            } => {
                assert_eq!(*replica_id, 0);
                assert_eq!(*num_envs, 4);
                assert_eq!(obs_spec.len(), 2);
                assert_eq!(obs_spec[0].name, "state");
                assert_eq!(obs_spec[0].dtype, Dtype::F32);
                assert_eq!(obs_spec[1].name, "proprio");
            }
            other => panic!("expected Hello, got {}", other.type_name()),
        }
        let init = read_frame(&mut reader).unwrap();
        assert!(matches!(init, Message::InitialObs { .. }));

        let mut step_results = 0;
        for _ in 0..3 {
            let actions = Message::Actions {
                actions: WireTensor::f32(vec![4, 3], vec![0.0; 12]).unwrap(),
            };
            write_frame(&mut writer, &actions).unwrap();
            writer.flush().unwrap();
            match read_frame(&mut reader).unwrap() {
                Message::StepResult { rewards, .. } => {
                    assert_eq!(rewards.as_f32().unwrap().len(), 4);
                    step_results += 1;
                }
                other => panic!("expected StepResult, got {}", other.type_name()),
            }
        }
        assert_eq!(step_results, 3);
        write_frame(&mut writer, &Message::Shutdown).unwrap();
        writer.flush().unwrap();
        replica.join().unwrap().unwrap();
    }

    /// Zero actions against seeded resets: rewards are exactly
    /// -0.1 * initial gripper-object distances.
    #[test]
    fn first_step_rewards_match_seeded_distances() {
        let cfg = state_cfg(4);
        let mut env = VecEnv::new(cfg.env.clone(), cfg.global_seed, 0, 4).unwrap();
        let sampler = AdrSampler::from_config(&cfg.env.adr).unwrap();
        let expected: Vec<f32> = (0..4u32)
            .map(|e| {
                let s = crate::env::reset(&cfg.env, &sampler, cfg.global_seed, e, 0);
                let dx = s.gripper[0] - s.object[0];
                let dy = s.gripper[1] - s.object[1];
                -0.1 * (dx * dx + dy * dy).sqrt()
            })
            .collect();
        let msg = step_once(&mut env, &[0.0; 12]).unwrap();
        match msg {
            Message::StepResult {
                rewards, successes, ..
            } => {
                assert_eq!(rewards.as_f32().unwrap(), &expected[..]);
                assert!(successes.as_u8().unwrap().iter().all(|&s| s == 0));
            }
            other => panic!("unexpected {}", other.type_name()),
        }
    }

    /// AdrUpdate(f=1) followed by a full episode of steps: the resets after
    /// timeout must sample from terminal ranges (spawn spread beyond the
    /// initial +-0.05).
    #[test]
    fn adr_update_reaches_resets() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let mut cfg = state_cfg(16);
        cfg.connect = addr;
        let t_max = cfg.env.t_max as usize;
        let replica = std::thread::spawn(move || run_replica(&cfg));

        let (stream, _) = listener.accept().unwrap();
        let mut reader = std::io::BufReader::new(stream.try_clone().unwrap());
        let mut writer = std::io::BufWriter::new(stream);
        read_frame(&mut reader).unwrap(); // Hello
        read_frame(&mut reader).unwrap(); // InitialObs

        write_frame(
            &mut writer,
            &Message::AdrUpdate {
                fractions: WireTensor::f32(vec![4], vec![1.0; 4]).unwrap(),
            },
        )
        .unwrap();
        writer.flush().unwrap();

        let mut spread = 0.0f32;
        for t in 0..t_max {
            write_frame(
                &mut writer,
                &Message::Actions {
                    actions: WireTensor::f32(vec![16, 3], vec![0.0; 48]).unwrap(),
                },
            )
            .unwrap();
            writer.flush().unwrap();
            match read_frame(&mut reader).unwrap() {
                Message::StepResult { obs, dones, .. } => {
                    if t == t_max - 1 {
                        assert!(dones.as_u8().unwrap().iter().all(|&d| d == 1));
                        // state obs rows: [grip x, grip y, obj x, obj y, grasped]
                        let state = &obs.iter().find(|(n, _)| n == "state").unwrap().1;
                        let v = state.as_f32().unwrap();
                        for e in 0..16 {
                            spread = spread.max((v[e * 5 + 2] - 0.5).abs());
                        }
                    }
                }
                other => panic!("unexpected {}", other.type_name()),
            }
        }
        assert!(
            spread > 0.06,
            "terminal spawn range not applied (max |x-0.5| = {spread})"
        );
        write_frame(&mut writer, &Message::Shutdown).unwrap();
        writer.flush().unwrap();
        replica.join().unwrap().unwrap();
    }

    /// A malformed frame closes the session with a protocol error (no
    /// resynchronization).
    #[test]
    fn corrupt_frame_is_fatal() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let mut cfg = state_cfg(2);
        cfg.connect = addr;
        let replica = std::thread::spawn(move || run_replica(&cfg));
        let (stream, _) = listener.accept().unwrap();
        let mut reader = std::io::BufReader::new(stream.try_clone().unwrap());
        let mut writer = std::io::BufWriter::new(stream);
        read_frame(&mut reader).unwrap();
        read_frame(&mut reader).unwrap();
        writer.write_all(b"XXXXXXXXXXXX").unwrap();
        writer.flush().unwrap();
        let err = replica.join().unwrap().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    /// Out-of-order message (a second Hello) is a session violation.
    #[test]
    fn out_of_order_message_is_fatal() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let mut cfg = state_cfg(2);
        cfg.connect = addr;
        let replica = std::thread::spawn(move || run_replica(&cfg));
        let (stream, _) = listener.accept().unwrap();
        let mut reader = std::io::BufReader::new(stream.try_clone().unwrap());
        let mut writer = std::io::BufWriter::new(stream);
        read_frame(&mut reader).unwrap();
        read_frame(&mut reader).unwrap();
        write_frame(
            &mut writer,
            &Message::Hello {
                replica_id: 9,
                num_envs: 2,
                obs_spec: vec![],
            },
        )
        .unwrap();
        writer.flush().unwrap();
        let err = replica.join().unwrap().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn connection_refused_is_exit_code_3() {
        // bind then drop to get a port that refuses connections
        let port = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let mut cfg = state_cfg(1);
        cfg.connect = format!("127.0.0.1:{port}");
        cfg.connect_timeout = Duration::from_millis(200);
        let err = run_replica(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
