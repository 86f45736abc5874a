//! Data-parallel baseline demo: two workers (hub + peer) over localhost
//! sockets, each owning half the envs, averaging gradients every minibatch.
//! Their parameter checksums must be identical after every optimizer step.

use disaggrl::env::{EnvConfig, ObsMode};
use disaggrl::learner::{dp_hub, dp_peer, NetSpec, PpoConfig, TrainConfig};
use disaggrl::nn::TrunkConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TrainConfig {
        env: EnvConfig {
            obs_mode: ObsMode::State,
            ..Default::default()
        },
        net: NetSpec {
            trunk: TrunkConfig::Feedforward { hidden: vec![32] },
            embed_dim: 16,
            ..Default::default()
        },
        ppo: PpoConfig {
            horizon: 8,
            epochs: 2,
            minibatches: 2,
            ..Default::default()
        },
        total_envs: 16,
        iters: 4,
        seed: 12,
        checkpoint_every: 0,
    };
    let out = std::env::temp_dir().join("disaggrl-dp-average");
    let _ = std::fs::remove_dir_all(&out);

    // pick a port for the hub, then race the peer against it
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0")?;
        l.local_addr()?.port()
    };
    let addr = format!("127.0.0.1:{port}");
    let peer_cfg = cfg.clone();
    let peer_out = out.join("peer");
    let peer_addr = addr.clone();
    let peer = std::thread::spawn(move || dp_peer(&peer_addr, &peer_cfg, 1, 2, &peer_out));
    dp_hub(&format!("127.0.0.1:{port}"), &cfg, 2, &out.join("hub"))?;
    peer.join().unwrap()?;

    let hub_sums = std::fs::read_to_string(out.join("hub/checksums_rank0.txt"))?;
    let peer_sums = std::fs::read_to_string(out.join("peer/checksums_rank1.txt"))?;
    assert_eq!(hub_sums, peer_sums, "workers diverged");
    println!(
        "2 workers, {} optimizer steps, parameter checksums identical throughout:",
        hub_sums.lines().count()
    );
    for line in hub_sums.lines().take(4) {
        println!("  step {line}");
    }
    println!("  ...");
    Ok(())
}
