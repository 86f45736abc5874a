// scratch: measure per-iteration time and learning progress
use disaggrl::env::EnvConfig;
use disaggrl::learner::{train_local, NetSpec, PpoConfig, TrainConfig};
use disaggrl::nn::TrunkConfig;
use std::time::Instant;

fn main() {
    let mode = std::env::args().nth(1).unwrap_or("state".into());
    let iters: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let envs: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(64);
    let cfg = TrainConfig {
        env: EnvConfig {
            obs_mode: mode.parse().unwrap(),
            image_w: 32,
            image_h: 32,
            ..Default::default()
        },
        net: NetSpec {
            conv_filters: std::env::var("FILTERS").ok().map(|f| f.split(',').map(|x| x.parse().unwrap()).collect()).unwrap_or(vec![4, 8, 16, 16]),
            embed_dim: 32,
            trunk: TrunkConfig::Feedforward { hidden: vec![64, 64] },
            init_log_std: std::env::var("SIGMA").ok().and_then(|x| x.parse().ok()).unwrap_or(-0.5),
            ..Default::default()
        },
        ppo: PpoConfig {
            lr: std::env::var("LR").ok().and_then(|x| x.parse().ok()).unwrap_or(3e-4),
            minibatches: std::env::var("MB").ok().and_then(|x| x.parse().ok()).unwrap_or(4),
            epochs: std::env::var("EPOCHS").ok().and_then(|x| x.parse().ok()).unwrap_or(4),
            ent_coef: std::env::var("ENT").ok().and_then(|x| x.parse().ok()).unwrap_or(0.005),
            gamma: std::env::var("GAMMA").ok().and_then(|x| x.parse().ok()).unwrap_or(0.99),
            ..PpoConfig::default()
        },
        total_envs: envs,
        iters,
        seed: 0,
        checkpoint_every: 0,
    };
    let t0 = Instant::now();
    let dir = std::env::temp_dir().join("smoke_probe");
    train_local(&cfg, &dir).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("total {dt:.1}s , {:.2} s/iter", dt / iters as f64);
    let m = disaggrl::metrics::read_metrics(&dir.join("metrics.jsonl")).unwrap();
    for r in m.iter().step_by((iters as usize / 15).max(1)) {
        println!("iter {:3} sr {:.3} adr {:.2} ploss {:+.4} vloss {:.4} ent {:.3} kl {:.4}",
            r.iter, r.sr, r.adr_fraction, r.policy_loss, r.value_loss, r.entropy, r.kl);
    }
    println!("final sr {:.3} adr {:.3}", m.last().unwrap().sr, m.last().unwrap().adr_fraction);
    let report = disaggrl::distill::evaluate(
        &dir.join("ckpt_final.dsnn"), &cfg.env, 0.0, 200, 999).unwrap();
    println!("greedy SR at f=0: {:.3} [{:.3}, {:.3}]", report.success_rate, report.wilson_low, report.wilson_high);
}
