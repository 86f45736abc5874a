//! Small single-process PPO run on state observations: the full
//! rollout -> GAE -> PPO -> ADR loop in one process, printing per-iteration
//! metrics.

use disaggrl::env::{EnvConfig, ObsMode};
use disaggrl::learner::{train_local, NetSpec, PpoConfig, TrainConfig};
use disaggrl::nn::TrunkConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TrainConfig {
        env: EnvConfig {
            obs_mode: ObsMode::State,
            ..Default::default()
        },
        net: NetSpec {
            trunk: TrunkConfig::Feedforward { hidden: vec![64, 64] },
            ..Default::default()
        },
        ppo: PpoConfig::default(),
        total_envs: 64,
        iters: 40,
        seed: 1,
        checkpoint_every: 0,
    };
    let out = std::env::temp_dir().join("disaggrl-train-local");
    let summary = train_local(&cfg, &out)?;
    let metrics = disaggrl::metrics::read_metrics(&out.join("metrics.jsonl"))?;
    for r in metrics.iter().step_by(8) {
        println!(
            "iter {:>3}  sr {:.2}  adr {:.2}  value loss {:>7.4}  entropy {:.3}  {:>6.0} steps/s",
            r.iter, r.sr, r.adr_fraction, r.value_loss, r.entropy, r.steps_per_sec
        );
    }
    println!(
        "\nfinal: sr {:.2}, adr fraction {:.2}, checkpoint {}",
        summary.final_sr,
        summary.final_adr_fraction,
        summary.checkpoint.display()
    );
    Ok(())
}
