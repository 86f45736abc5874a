//! Frozen-policy throughput of the single-process layout at two env counts,
//! with the per-phase wall-time split.

use std::time::Duration;

use disaggrl::env::{EnvConfig, ObsMode};
use disaggrl::harness::{bench_throughput, BenchTopology};
use disaggrl::learner::{NetSpec, TrainConfig};
use disaggrl::nn::TrunkConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TrainConfig {
        env: EnvConfig {
            obs_mode: ObsMode::Depth,
            image_w: 32,
            image_h: 32,
            ..Default::default()
        },
        net: NetSpec {
            conv_filters: vec![4, 8, 16, 16],
            trunk: TrunkConfig::Feedforward { hidden: vec![64, 64] },
            ..Default::default()
        },
        ..Default::default()
    };
    let scratch = std::env::temp_dir().join("disaggrl-bench-example");
    for envs in [32usize, 64] {
        let r = bench_throughput(
            &BenchTopology::Single { envs },
            Duration::from_secs(2),
            &cfg,
            None,
            &scratch,
        )?;
        println!(
            "{:>3} envs: {:>8.0} env-steps/s  (inference {:.2}s, env {:.2}s, other {:.2}s of {:.2}s)",
            envs, r.env_steps_per_sec, r.inference_s, r.step_phase_s, r.overhead_s, r.wall_s
        );
    }
    println!("\n(disaggregated topology: `disaggrl bench --topology disagg`)");
    Ok(())
}
