//! Roll the toy lift env with the scripted controller and dump the
//! trajectory (JSON lines) plus depth frames (PGM) to a temp directory.

use disaggrl::env::dump::{rollout_dump, RolloutPolicy};
use disaggrl::env::EnvConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("disaggrl-env-rollout");
    let cfg = EnvConfig::default();
    rollout_dump(&cfg, &RolloutPolicy::Scripted, 60, 7, 0.0, &out)?;

    let traj = std::fs::read_to_string(out.join("trajectory.jsonl"))?;
    let successes = traj.matches("\"success\":true").count();
    println!("wrote {} steps to {}", traj.lines().count(), out.display());
    println!("episodes lifted: {successes}");
    for line in traj.lines().take(3) {
        println!("  {line}");
    }
    println!("  ...");
    Ok(())
}
