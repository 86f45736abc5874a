//! The disaggregated layout end to end: a learner accepting three replica
//! sessions over real localhost sockets, each replica owning a disjoint
//! shard of envs. Replicas run as threads here to keep the example
//! self-contained; `disaggrl launch` runs the same topology as processes.

use std::time::Duration;

use disaggrl::env::{EnvConfig, ObsMode};
use disaggrl::learner::{accept_replicas, bind_with_retry, train, ReplicaLink, TrainConfig};
use disaggrl::learner::{NetSpec, PpoConfig};
use disaggrl::nn::{PolicyNet, TrunkConfig};
use disaggrl::replica::{run_replica, ReplicaConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TrainConfig {
        env: EnvConfig {
            obs_mode: ObsMode::State,
            ..Default::default()
        },
        net: NetSpec {
            trunk: TrunkConfig::Feedforward { hidden: vec![32, 32] },
            embed_dim: 16,
            ..Default::default()
        },
        ppo: PpoConfig {
            horizon: 16,
            ..Default::default()
        },
        total_envs: 24,
        iters: 8,
        seed: 4,
        checkpoint_every: 0,
    };
    let replicas = 3;
    let envs_per = cfg.total_envs / replicas;

    let listener = bind_with_retry("127.0.0.1:0", 1)?;
    let addr = listener.local_addr()?.to_string();
    println!("learner listening on {addr}");

    let mut handles = Vec::new();
    for id in 0..replicas as u32 {
        let rcfg = ReplicaConfig {
            replica_id: id,
            connect: addr.clone(),
            num_envs: envs_per,
            env: cfg.env.clone(),
            global_seed: cfg.seed,
            env_id_offset: id * envs_per as u32,
            connect_timeout: Duration::from_secs(5),
        };
        handles.push(std::thread::spawn(move || run_replica(&rcfg)));
    }

    let mut links: Vec<Box<dyn ReplicaLink>> =
        accept_replicas(&listener, replicas, envs_per, &cfg.env)?
            .into_iter()
            .map(|l| Box::new(l) as Box<dyn ReplicaLink>)
            .collect();
    println!("3 replicas connected (shards of {envs_per} envs each)");

    let out = std::env::temp_dir().join("disaggrl-train-disagg");
    let mut net = PolicyNet::new(cfg.net.to_net_config(&cfg.env), cfg.seed)?;
    let summary = train(&mut net, &mut links, &cfg, &out)?;
    for link in links.iter_mut() {
        link.shutdown()?;
    }
    for h in handles {
        h.join().unwrap()?;
    }
    println!(
        "trained {} iterations over sockets; final sr {:.2}; metrics in {}",
        summary.iters,
        summary.final_sr,
        out.display()
    );
    Ok(())
}
