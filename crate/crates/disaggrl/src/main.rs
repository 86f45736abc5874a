//! `disaggrl` CLI: thin dispatch into the library. Every capability also has
//! a runnable example under `examples/`.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use disaggrl::distill::{compare_teachers, distill, evaluate, DistillConfig};
use disaggrl::env::dump::{rollout_dump, RolloutPolicy};
use disaggrl::env::{EnvConfig, ObsMode};
use disaggrl::harness::{
    bench_throughput, launch, max_envs, reference_table, render_table, BenchTopology, Layout,
    MemoryModel, report_table2, RunSpec,
};
use disaggrl::learner::{dp_hub, dp_peer, learner_main, TrainConfig, TrainMode};
use disaggrl::replica::{run_replica, ReplicaConfig};

#[derive(Parser)]
#[command(name = "disaggrl", version, about = "Disaggregated simulation + RL testbed")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the trainer: disaggregated learner or one DP worker.
    Learner {
        /// Listen address (disagg learner / DP hub).
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        /// Hub address (DP peers).
        #[arg(long)]
        connect: Option<String>,
        #[arg(long, default_value_t = 3)]
        replicas: usize,
        #[arg(long)]
        cfg: Option<PathBuf>,
        #[arg(long, default_value = "disagg")]
        mode: TrainMode,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long, default_value = "out/learner")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        dp_rank: u32,
        #[arg(long, default_value_t = 1)]
        dp_world: u32,
    },
    /// Run one simulation replica against a learner.
    Replica {
        #[arg(long)]
        id: u32,
        #[arg(long)]
        connect: String,
        #[arg(long)]
        envs: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        offset: u32,
    },
    /// Distill a teacher checkpoint into a student.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, default_value = "stereo")]
        student_mode: ObsMode,
        #[arg(long)]
        cfg: Option<PathBuf>,
        #[arg(long, default_value = "out/distill")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint's greedy success rate at a fixed ADR fraction.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 200)]
        episodes: u32,
        #[arg(long, default_value_t = 0.0)]
        adr_fraction: f32,
        #[arg(long)]
        env_config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Distill depth and state teachers into stereo students and compare.
    Compare {
        #[arg(long)]
        depth_teacher: PathBuf,
        #[arg(long)]
        state_teacher: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: u32,
        #[arg(long)]
        cfg: Option<PathBuf>,
        #[arg(long, default_value = "out/compare")]
        out: PathBuf,
    },
    /// Frozen-policy throughput measurement.
    Bench {
        /// "single" or "disagg".
        #[arg(long, default_value = "single")]
        topology: String,
        #[arg(long, default_value_t = 64)]
        envs: usize,
        #[arg(long, default_value_t = 3)]
        replicas: usize,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long)]
        cfg: Option<PathBuf>,
        /// Write the JSON report here (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the capacity-planner table (and optional JSON).
    Memplan {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        devices: u64,
        #[arg(long)]
        json: bool,
    },
    /// Launch a full multi-process run from a spec file.
    Launch {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Pretty-print a captured stream of wire frames.
    ProtoDump { file: PathBuf },
    /// Dump a single-env trajectory as JSON lines plus image frames.
    EnvRollout {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        steps: u64,
        #[arg(long, default_value = "out/rollout")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        adr_fraction: f32,
        /// zero | scripted | a checkpoint path.
        #[arg(long, default_value = "scripted")]
        policy: String,
    },
    /// Aggregate per-seed metrics files into the summary report.
    Report {
        /// Metrics JSONL files, one per seed.
        files: Vec<PathBuf>,
    },
}

fn load_train_cfg(path: &Option<PathBuf>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(TrainConfig::default()),
    }
}

fn load_env_cfg(path: &Option<PathBuf>) -> Result<EnvConfig> {
    match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let cfg: EnvConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            cfg.validate()?;
            Ok(cfg)
        }
        None => Ok(EnvConfig::default()),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Learner {
            listen,
            connect,
            replicas,
            cfg,
            mode,
            seed,
            iters,
            out,
            dp_rank,
            dp_world,
        } => {
            let mut cfg = load_train_cfg(&cfg)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(i) = iters {
                cfg.iters = i;
            }
            let summary = match mode {
                TrainMode::Disagg => learner_main(&listen, replicas, &cfg, &out)?,
                TrainMode::Dp => {
                    if dp_rank == 0 {
                        dp_hub(&listen, &cfg, dp_world, &out)?
                    } else {
                        let addr = connect
                            .ok_or_else(|| anyhow::anyhow!("dp peers need --connect"))?;
                        dp_peer(&addr, &cfg, dp_rank, dp_world, &out)?
                    }
                }
            };
            println!(
                "done: {} iters, final sr {:.3}, adr fraction {:.3}, checkpoint {}",
                summary.iters,
                summary.final_sr,
                summary.final_adr_fraction,
                summary.checkpoint.display()
            );
            Ok(0)
        }
        Cmd::Replica {
            id,
            connect,
            envs,
            config,
            seed,
            offset,
        } => {
            let cfg = ReplicaConfig {
                replica_id: id,
                connect,
                num_envs: envs,
                env: load_env_cfg(&config)?,
                global_seed: seed,
                env_id_offset: offset,
                connect_timeout: Duration::from_secs(10),
            };
            match run_replica(&cfg) {
                Ok(()) => Ok(0),
                Err(e) => {
                    eprintln!("replica {id}: {e}");
                    Ok(e.exit_code())
                }
            }
        }
        Cmd::Distill {
            teacher,
            student_mode,
            cfg,
            out,
        } => {
            let mut dcfg = match &cfg {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<DistillConfig>(&text)
                        .with_context(|| format!("parsing {}", p.display()))?
                }
                None => DistillConfig::default(),
            };
            dcfg.teacher_ckpt = teacher;
            dcfg.student_mode = student_mode;
            let report = distill(&dcfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        Cmd::Eval {
            ckpt,
            episodes,
            adr_fraction,
            env_config,
            seed,
        } => {
            let env = load_env_cfg(&env_config)?;
            let report = evaluate(&ckpt, &env, adr_fraction, episodes, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        Cmd::Compare {
            depth_teacher,
            state_teacher,
            seeds,
            cfg,
            out,
        } => {
            let base = match &cfg {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<DistillConfig>(&text)
                        .with_context(|| format!("parsing {}", p.display()))?
                }
                None => DistillConfig::default(),
            };
            let report = compare_teachers(&depth_teacher, &state_teacher, &base, seeds, &out)?;
            println!(
                "depth mean SR {:.3} vs state mean SR {:.3} ({})",
                report.mean_depth_sr,
                report.mean_state_sr,
                if report.depth_at_least_state {
                    "depth >= state"
                } else {
                    "state > depth"
                }
            );
            Ok(0)
        }
        Cmd::Bench {
            topology,
            envs,
            replicas,
            duration,
            cfg,
            out,
        } => {
            let cfg = load_train_cfg(&cfg)?;
            let topo = match topology.as_str() {
                "single" => BenchTopology::Single { envs },
                "disagg" => BenchTopology::Disagg {
                    replicas,
                    envs_per_replica: envs / replicas.max(1),
                },
                other => bail!("unknown topology {other:?} (single|disagg)"),
            };
            let scratch = std::env::temp_dir().join("disaggrl-bench");
            let report = bench_throughput(
                &topo,
                Duration::from_secs_f64(duration),
                &cfg,
                None,
                &scratch,
            )?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => {
                    std::fs::write(&p, &text)?;
                    println!("wrote {}", p.display());
                }
                None => println!("{text}"),
            }
            Ok(0)
        }
        Cmd::Memplan {
            model,
            devices,
            json,
        } => {
            let model = match &model {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<MemoryModel>(&text)?
                }
                None => MemoryModel::calibrated_default(),
            };
            let rows = reference_table(&model, devices)?;
            print!("{}", render_table(&rows));
            if json {
                let full: Vec<_> = rows
                    .iter()
                    .map(|r| {
                        let dp = max_envs(
                            Layout::DataParallel { devices },
                            &model,
                            r.width,
                            r.height,
                            16,
                            1,
                        )
                        .unwrap();
                        let dis = max_envs(
                            Layout::Disaggregated { devices },
                            &model,
                            r.width,
                            r.height,
                            16,
                            1,
                        )
                        .unwrap();
                        serde_json::json!({ "row": r, "dp": dp, "disagg": dis })
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&full)?);
            }
            Ok(0)
        }
        Cmd::Launch { spec } => {
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("reading {}", spec.display()))?;
            let spec: RunSpec = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", spec.display()))?;
            let outcome = launch(&spec)?;
            for (role, code) in &outcome.exit_codes {
                println!("{role}: exit {code}");
            }
            Ok(if outcome.success { 0 } else { 1 })
        }
        Cmd::ProtoDump { file } => {
            let bytes =
                std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            let n = disaggrl::proto::dump_frames(&bytes, &mut lock)?;
            eprintln!("{n} frames");
            Ok(0)
        }
        Cmd::EnvRollout {
            config,
            steps,
            out,
            seed,
            adr_fraction,
            policy,
        } => {
            let cfg = load_env_cfg(&config)?;
            let pol = match policy.as_str() {
                "zero" => RolloutPolicy::Zero,
                "scripted" => RolloutPolicy::Scripted,
                path => RolloutPolicy::Checkpoint(PathBuf::from(path)),
            };
            rollout_dump(&cfg, &pol, steps, seed, adr_fraction, &out)?;
            println!("wrote {}", out.display());
            Ok(0)
        }
        Cmd::Report { files } => {
            let paths: Vec<&std::path::Path> = files.iter().map(|p| p.as_path()).collect();
            let t = report_table2(&paths)?;
            println!("{}", serde_json::to_string_pretty(&t)?);
            Ok(0)
        }
    }
}
