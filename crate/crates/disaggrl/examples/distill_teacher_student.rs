//! Distillation demo: train a quick depth teacher, distill it into a stereo
//! student, and verify the self-distillation fixed point (a student started
//! at the teacher's own weights has zero action error at step 0).

use disaggrl::distill::{distill, DistillConfig};
use disaggrl::env::{EnvConfig, ObsMode};
use disaggrl::learner::{train_local, NetSpec, TrainConfig};
use disaggrl::nn::TrunkConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig {
        obs_mode: ObsMode::Depth,
        image_w: 16,
        image_h: 16,
        ..Default::default()
    };
    let out = std::env::temp_dir().join("disaggrl-distill-demo");
    let _ = std::fs::remove_dir_all(&out);

    println!("training a small depth teacher...");
    let teacher = train_local(
        &TrainConfig {
            env: env.clone(),
            net: NetSpec {
                conv_filters: vec![4, 8, 8, 16],
                trunk: TrunkConfig::Feedforward { hidden: vec![32, 32] },
                ..Default::default()
            },
            total_envs: 64,
            iters: 60,
            seed: 3,
            checkpoint_every: 0,
            ..Default::default()
        },
        &out.join("teacher"),
    )?;
    println!("teacher sr at f=0: {:.2}", teacher.final_sr);

    println!("\ndistilling depth -> stereo...");
    let report = distill(
        &DistillConfig {
            teacher_ckpt: teacher.checkpoint.clone(),
            student_mode: ObsMode::Stereo,
            env: env.clone(),
            n_envs: 16,
            rounds: 12,
            steps_per_round: 16,
            updates_per_round: 16,
            batch_size: 128,
            eval_episodes: 50,
            eval_every: 6,
            seed: 5,
            ..Default::default()
        },
        &out.join("stereo_student"),
    )?;
    println!(
        "action MSE {:.4} -> {:.4} over {} rounds; student sr {:.2}",
        report.step0_action_mse, report.final_action_mse, report.rounds, report.final_sr
    );

    println!("\nself-distillation fixed point (depth -> depth at teacher weights):");
    let identity = distill(
        &DistillConfig {
            teacher_ckpt: teacher.checkpoint,
            student_mode: ObsMode::Depth,
            env,
            n_envs: 8,
            rounds: 1,
            steps_per_round: 4,
            updates_per_round: 0,
            eval_episodes: 10,
            eval_every: 0,
            init_from_teacher: true,
            ..Default::default()
        },
        &out.join("identity"),
    )?;
    println!("step-0 action MSE = {} (< 1e-6)", identity.step0_action_mse);
    Ok(())
}
