//! Trajectory dumper behind the `env-rollout` debug subcommand: JSON lines
//! plus PGM (depth) or PPM (stereo) frames.

use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use super::render::{render_depth, render_stereo};
use super::{EnvConfig, EnvError, ObsMode, VecEnv, ACTION_DIM};

#[derive(Clone, Debug)]
pub enum RolloutPolicy {
    Zero,
    Scripted,
    Checkpoint(std::path::PathBuf),
}

#[derive(Serialize)]
struct TrajRow {
    t: u64,
    gripper: [f32; 2],
    object: [f32; 2],
    grasped: bool,
    action: [f32; 3],
    reward: f32,
    done: bool,
    success: bool,
}

fn write_pgm(path: &Path, img: &[f32], w: usize, h: usize) -> std::io::Result<()> {
    let mut out = Vec::with_capacity(w * h + 32);
    out.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    out.extend(img.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0) as u8));
    std::fs::write(path, out)
}

fn write_ppm(path: &Path, rgb_planes: &[f32], w: usize, h: usize) -> std::io::Result<()> {
    // rgb_planes: [3][h][w] channel-major
    let plane = w * h;
    let mut out = Vec::with_capacity(3 * plane + 32);
    out.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    for i in 0..plane {
        for c in 0..3 {
            out.push((rgb_planes[c * plane + i].clamp(0.0, 1.0) * 255.0) as u8);
        }
    }
    std::fs::write(path, out)
}

/// Roll one env for `steps` steps under `policy`, writing
/// `trajectory.jsonl` and per-step images into `out_dir`.
pub fn rollout_dump(
    cfg: &EnvConfig,
    policy: &RolloutPolicy,
    steps: u64,
    seed: u64,
    adr_fraction: f32,
    out_dir: &Path,
) -> Result<(), EnvError> {
    let io_err = |e: std::io::Error| EnvError::Config(format!("i/o: {e}"));
    std::fs::create_dir_all(out_dir).map_err(io_err)?;
    let mut env = VecEnv::new(cfg.clone(), seed, 0, 1)?;
    env.set_uniform_fraction(adr_fraction);
    let net = match policy {
        RolloutPolicy::Checkpoint(path) => {
            let (net, meta) = crate::nn::load_policy(path)
                .map_err(|e| EnvError::Config(format!("checkpoint: {e}")))?;
            let mode: ObsMode = meta
                .tags
                .get("obs_mode")
                .ok_or_else(|| EnvError::Config("checkpoint carries no obs_mode tag".into()))?
                .parse()
                .map_err(EnvError::Config)?;
            if mode != cfg.obs_mode {
                return Err(EnvError::Config(format!(
                    "checkpoint obs mode {mode} != env obs mode {}",
                    cfg.obs_mode
                )));
            }
            Some(net)
        }
        _ => None,
    };

    let mut traj = std::io::BufWriter::new(
        std::fs::File::create(out_dir.join("trajectory.jsonl")).map_err(io_err)?,
    );
    let (w, h) = (cfg.image_w, cfg.image_h);
    for t in 0..steps {
        let state = env.states()[0].clone();
        match cfg.obs_mode {
            ObsMode::Depth => {
                let mut img = vec![0.0f32; w * h];
                render_depth(&state, w, h, &mut img);
                write_pgm(&out_dir.join(format!("depth_{t:04}.pgm")), &img, w, h)
                    .map_err(io_err)?;
            }
            ObsMode::Stereo => {
                let mut img = vec![0.0f32; 6 * w * h];
                render_stereo(&state, w, h, cfg.stereo_baseline, &mut img);
                write_ppm(&out_dir.join(format!("left_{t:04}.ppm")), &img[..3 * w * h], w, h)
                    .map_err(io_err)?;
                write_ppm(
                    &out_dir.join(format!("right_{t:04}.ppm")),
                    &img[3 * w * h..],
                    w,
                    h,
                )
                .map_err(io_err)?;
            }
            ObsMode::State => {}
        }
        let action = match policy {
            RolloutPolicy::Zero => [0.0; ACTION_DIM],
            RolloutPolicy::Scripted => crate::distill::scripted_action(&state),
            RolloutPolicy::Checkpoint(_) => {
                let obs = env.observe();
                let out = net
                    .as_ref()
                    .unwrap()
                    .forward(
                        &crate::nn::ObsInput {
                            n: 1,
                            primary: &obs.primary,
                            proprio: &obs.proprio,
                        },
                        None,
                        None,
                    )
                    .map_err(|e| EnvError::Config(format!("inference: {e}")))?;
                [out.mean[0], out.mean[1], out.mean[2]]
            }
        };
        let sb = env.step(&action)?;
        let row = TrajRow {
            t,
            gripper: state.gripper,
            object: state.object,
            grasped: state.grasped,
            action,
            reward: sb.rewards[0],
            done: sb.dones[0] != 0,
            success: sb.successes[0] != 0,
        };
        serde_json::to_writer(&mut traj, &row)
            .map_err(|e| EnvError::Config(format!("json: {e}")))?;
        traj.write_all(b"\n").map_err(io_err)?;
    }
    traj.flush().map_err(io_err)?;
    Ok(())
}
