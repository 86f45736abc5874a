//! Capacity planning: the calibrated memory model's env-count table for a
//! 4-device node, plus the exact buffer arithmetic it rests on.

use disaggrl::harness::{buffer_bytes, reference_table, render_table, MemoryModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // the buffer arithmetic anchor: 512 envs x 16 steps x 320x240 f32 depth
    let bytes = buffer_bytes(320, 240, 512, 16, 1)?;
    println!(
        "experience-buffer image block, 512 envs @ 320x240, 16 steps: {bytes} bytes ({:.2} GB)",
        bytes as f64 / 1e9
    );

    let model = MemoryModel::calibrated_default();
    println!(
        "\nmodel: budget {:.0} GB, asset cache {:.1} GB, {} B/env + {} B/px sim, learner {:.2} GB\n",
        model.budget_bytes as f64 / 1e9,
        model.asset_cache_bytes as f64 / 1e9,
        model.sim_env_base_bytes,
        model.sim_env_per_pixel_bytes,
        model.learner_fixed_bytes as f64 / 1e9,
    );
    let rows = reference_table(&model, 4)?;
    print!("{}", render_table(&rows));
    println!(
        "\ndisaggregation fits {:.2}x the envs of data parallelism at both resolutions",
        rows.iter().map(|r| r.ratio).fold(f64::MAX, f64::min)
    );
    Ok(())
}
