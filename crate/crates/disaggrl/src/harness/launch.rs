//! Process launcher: spawns a learner (or DP hub) plus its replicas/peers,
//! wires addresses, multiplexes child logs with role prefixes, and
//! propagates failures.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::learner::{TrainConfig, TrainMode};

use super::HarnessError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSpec {
    /// "disagg" or "dp".
    pub mode: String,
    /// Replica count (disagg) or world size (dp).
    pub workers: usize,
    pub cfg: TrainConfig,
    pub out_dir: PathBuf,
    /// Binary to spawn; defaults to the current executable.
    #[serde(default)]
    pub exe: Option<PathBuf>,
    #[serde(default = "default_host")]
    pub listen_host: String,
}

fn default_host() -> String {
    "127.0.0.1".to_string()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LaunchOutcome {
    pub success: bool,
    /// (role, exit code) per child, in spawn order.
    pub exit_codes: Vec<(String, i32)>,
    pub learner_addr: String,
}

struct Supervised {
    role: String,
    child: Child,
}

/// Spawn a child with piped output; a thread forwards its lines with a role
/// prefix and reports any `LISTENING <addr>` announcement.
fn spawn_child(
    exe: &Path,
    role: &str,
    args: &[String],
    announce: Option<mpsc::Sender<String>>,
) -> Result<Supervised, HarnessError> {
    let mut child = Command::new(exe)
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| HarnessError::Launch(format!("spawn {role}: {e}")))?;
    let stdout = child.stdout.take().expect("piped stdout");
    let stderr = child.stderr.take().expect("piped stderr");
    let role_owned = role.to_string();
    std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines().map_while(Result::ok) {
            if let Some(addr) = line.strip_prefix("LISTENING ") {
                if let Some(tx) = announce.as_ref() {
                    let _ = tx.send(addr.trim().to_string());
                }
            }
            println!("[{role_owned}] {line}");
        }
    });
    let role_owned = role.to_string();
    std::thread::spawn(move || {
        for line in BufReader::new(stderr).lines().map_while(Result::ok) {
            eprintln!("[{role_owned}] {line}");
        }
    });
    Ok(Supervised {
        role: role.to_string(),
        child,
    })
}

fn wait_for_announce(rx: &mpsc::Receiver<String>, role: &str) -> Result<String, HarnessError> {
    rx.recv_timeout(Duration::from_secs(30))
        .map_err(|_| HarnessError::Launch(format!("{role} never announced its address")))
}

/// Supervise children until all exit (success) or any exits nonzero, in
/// which case the rest are killed within the polling interval.
fn supervise(mut children: Vec<Supervised>) -> Result<Vec<(String, i32)>, HarnessError> {
    let mut codes: Vec<Option<i32>> = vec![None; children.len()];
    let mut failed = false;
    loop {
        let mut running = false;
        for (i, c) in children.iter_mut().enumerate() {
            if codes[i].is_some() {
                continue;
            }
            match c.child.try_wait() {
                Ok(Some(status)) => {
                    let code = status.code().unwrap_or(-1);
                    codes[i] = Some(code);
                    if code != 0 {
                        failed = true;
                    }
                }
                Ok(None) => running = true,
                Err(e) => {
                    return Err(HarnessError::Launch(format!(
                        "wait {}: {e}",
                        c.role
                    )))
                }
            }
        }
        if failed {
            for (i, c) in children.iter_mut().enumerate() {
                if codes[i].is_none() {
                    let _ = c.child.kill();
                    let code = c
                        .child
                        .wait()
                        .ok()
                        .and_then(|s| s.code())
                        .unwrap_or(-9);
                    codes[i] = Some(code);
                }
            }
            break;
        }
        if !running {
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    Ok(children
        .iter()
        .zip(codes)
        .map(|(c, code)| (c.role.clone(), code.unwrap_or(-1)))
        .collect())
}

/// Launch the processes described by `spec` and supervise them to completion.
pub fn launch(spec: &RunSpec) -> Result<LaunchOutcome, HarnessError> {
    let mode: TrainMode = spec
        .mode
        .parse()
        .map_err(|e: String| HarnessError::Config(e))?;
    if spec.workers == 0 {
        return Err(HarnessError::Config("workers must be positive".into()));
    }
    if spec.cfg.total_envs % spec.workers != 0 {
        return Err(HarnessError::Config(format!(
            "total_envs {} not divisible by {} workers",
            spec.cfg.total_envs, spec.workers
        )));
    }
    let exe = match &spec.exe {
        Some(p) => p.clone(),
        None => std::env::current_exe().map_err(HarnessError::Io)?,
    };
    std::fs::create_dir_all(&spec.out_dir).map_err(HarnessError::Io)?;
    let cfg_path = spec.out_dir.join("train_config.json");
    std::fs::write(
        &cfg_path,
        serde_json::to_string_pretty(&spec.cfg)
            .map_err(|e| HarnessError::Config(e.to_string()))?,
    )
    .map_err(HarnessError::Io)?;
    let env_cfg_path = spec.out_dir.join("env_config.json");
    std::fs::write(
        &env_cfg_path,
        serde_json::to_string_pretty(&spec.cfg.env)
            .map_err(|e| HarnessError::Config(e.to_string()))?,
    )
    .map_err(HarnessError::Io)?;

    let (tx, rx) = mpsc::channel::<String>();
    let mut children = Vec::new();
    let listen = format!("{}:0", spec.listen_host);
    match mode {
        TrainMode::Disagg => {
            let learner_out = spec.out_dir.join("learner");
            children.push(spawn_child(
                &exe,
                "learner",
                &[
                    "learner".into(),
                    "--listen".into(),
                    listen,
                    "--replicas".into(),
                    spec.workers.to_string(),
                    "--cfg".into(),
                    cfg_path.display().to_string(),
                    "--mode".into(),
                    "disagg".into(),
                    "--out".into(),
                    learner_out.display().to_string(),
                ],
                Some(tx.clone()),
            )?);
            let addr = match wait_for_announce(&rx, "learner") {
                Ok(a) => a,
                Err(e) => {
                    let _ = children[0].child.kill();
                    return Err(e);
                }
            };
            let envs_per = spec.cfg.total_envs / spec.workers;
            for i in 0..spec.workers {
                children.push(spawn_child(
                    &exe,
                    &format!("replica{i}"),
                    &[
                        "replica".into(),
                        "--id".into(),
                        i.to_string(),
                        "--connect".into(),
                        addr.clone(),
                        "--envs".into(),
                        envs_per.to_string(),
                        "--config".into(),
                        env_cfg_path.display().to_string(),
                        "--seed".into(),
                        spec.cfg.seed.to_string(),
                        "--offset".into(),
                        (i * envs_per).to_string(),
                    ],
                    None,
                )?);
            }
            let exit_codes = supervise(children)?;
            let success = exit_codes.iter().all(|(_, c)| *c == 0);
            Ok(LaunchOutcome {
                success,
                exit_codes,
                learner_addr: addr,
            })
        }
        TrainMode::Dp => {
            children.push(spawn_child(
                &exe,
                "dp0",
                &[
                    "learner".into(),
                    "--listen".into(),
                    listen,
                    "--cfg".into(),
                    cfg_path.display().to_string(),
                    "--mode".into(),
                    "dp".into(),
                    "--dp-rank".into(),
                    "0".into(),
                    "--dp-world".into(),
                    spec.workers.to_string(),
                    "--out".into(),
                    spec.out_dir.join("dp0").display().to_string(),
                ],
                Some(tx.clone()),
            )?);
            let addr = match wait_for_announce(&rx, "dp hub") {
                Ok(a) => a,
                Err(e) => {
                    let _ = children[0].child.kill();
                    return Err(e);
                }
            };
            for r in 1..spec.workers {
                children.push(spawn_child(
                    &exe,
                    &format!("dp{r}"),
                    &[
                        "learner".into(),
                        "--connect".into(),
                        addr.clone(),
                        "--cfg".into(),
                        cfg_path.display().to_string(),
                        "--mode".into(),
                        "dp".into(),
                        "--dp-rank".into(),
                        r.to_string(),
                        "--dp-world".into(),
                        spec.workers.to_string(),
                        "--out".into(),
                        spec.out_dir.join(format!("dp{r}")).display().to_string(),
                    ],
                    None,
                )?);
            }
            let exit_codes = supervise(children)?;
            let success = exit_codes.iter().all(|(_, c)| *c == 0);
            Ok(LaunchOutcome {
                success,
                exit_codes,
                learner_addr: addr,
            })
        }
    }
}

/// Spawn replica processes against an already-listening learner (used by the
/// throughput bench and integration tests).
pub fn spawn_replicas(
    exe: &Path,
    addr: &str,
    env_cfg_path: &Path,
    replicas: usize,
    envs_per: usize,
    seed: u64,
) -> Result<Vec<Child>, HarnessError> {
    let mut out = Vec::new();
    for i in 0..replicas {
        let child = Command::new(exe)
            .args([
                "replica",
                "--id",
                &i.to_string(),
                "--connect",
                addr,
                "--envs",
                &envs_per.to_string(),
                "--config",
                &env_cfg_path.display().to_string(),
                "--seed",
                &seed.to_string(),
                "--offset",
                &(i * envs_per).to_string(),
            ])
            .stdout(Stdio::null())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| HarnessError::Launch(format!("spawn replica{i}: {e}")))?;
        out.push(child);
    }
    Ok(out)
}

/// Wait for children with a deadline; kills stragglers.
pub fn reap_children(children: &mut Vec<Child>, deadline: Duration) -> Vec<i32> {
    let until = Instant::now() + deadline;
    let mut codes = Vec::new();
    for c in children.iter_mut() {
        loop {
            match c.try_wait() {
                Ok(Some(s)) => {
                    codes.push(s.code().unwrap_or(-1));
                    break;
                }
                Ok(None) if Instant::now() < until => {
                    std::thread::sleep(Duration::from_millis(20))
                }
                _ => {
                    let _ = c.kill();
                    codes.push(c.wait().ok().and_then(|s| s.code()).unwrap_or(-9));
                    break;
                }
            }
        }
    }
    children.clear();
    codes
}
