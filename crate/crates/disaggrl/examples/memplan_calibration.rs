//! The calibration fit behind `MemoryModel::calibrated_default()`, kept
//! runnable so the shipped constants stay reproducible.
//!
//! Inputs: a 48 GB per-device budget, the reference capacity table
//! (DP 1024/256 per device, disaggregated 2800/700 per simulator device at
//! 160x120 / 320x240 with a 4-device node), and two absolute anchors: a
//! 256-env 320x240 simulator at ~44 GB, and a 4096-env state-only simulator
//! at ~14 GB. The buffer term is fixed by the exact f32 arithmetic
//! (16 steps x (pixels + proprio 32 + 8 scalars) x 4 bytes per env).
//!
//! The fit is a constrained solve, not least squares on all anchors at
//! once, because the anchor set is over-determined: under a single
//! asset-cache constant, the state-only anchor (A ~ 14 GB) contradicts the
//! capacity table (which forces A ~ 41.7 GB). The capacity ratios are the
//! quantity this model exists to reproduce, so the solve prioritizes the
//! table plus the vision-sim anchor and reports the state anchor's residual
//! (a state-only simulator simply does not carry the renderer's asset
//! cache).

use disaggrl::harness::{reference_table, MemoryModel};

fn main() {
    let b: f64 = 48e9;
    let dp160: f64 = 1024.0; // DP envs/device at 160x120
    let disagg160: f64 = 2800.0; // disagg envs per sim device at 160x120
    let vision_sim_anchor: f64 = 44e9; // 256 envs at 320x240, sim only
    let state_anchor: f64 = 14e9; // 4096 state-only envs

    // Step 1: tight simulator constraint on a disagg sim device at 160x120:
    //   A + 2800 * e160 = B.
    // Step 2: the vision anchor, using e320 ~ 4*e160 (pixel-dominated cost):
    //   A + 256 * e320 = A + 1024 * e160 = 44 GB.
    // Subtracting: (2800 - 1024) * e160 = B - 44 GB.
    let e160 = (b - vision_sim_anchor) / (disagg160 - 4.0 * 256.0);
    // Step 3: split e160 into a small per-env base and a per-pixel rate.
    let s0 = 4096u64;
    let s1 = ((e160 - s0 as f64) / (160.0 * 120.0)).round() as u64;
    let e160_int = s0 + s1 * 160 * 120;
    let a = 48_000_000_000u64 - 2800 * e160_int;

    // Step 4: learner overhead from the DP row at 160x120:
    //   1024 <= (B - A - L) / (e160 + b160) < 1025.
    let b160 = 16u64 * (160 * 120 + 32 + 8) * 4;
    let l_hi = 48_000_000_000 - a - (dp160 as u64) * (e160_int + b160);
    let l_lo = 48_000_000_000u64.saturating_sub(a + (dp160 as u64 + 1) * (e160_int + b160));
    let l = 2_735_000_000u64;
    assert!(l > l_lo && l <= l_hi, "L window [{l_lo}, {l_hi}] excludes {l}");

    let fitted = MemoryModel {
        budget_bytes: 48_000_000_000,
        asset_cache_bytes: a,
        sim_env_base_bytes: s0,
        sim_env_per_pixel_bytes: s1,
        learner_fixed_bytes: l,
        buffer_proprio_dim: 32,
        buffer_overhead_scalars: 8,
    };
    println!("fitted coefficients:");
    println!("  asset cache A      = {a} bytes ({:.2} GB)", a as f64 / 1e9);
    println!("  sim per env        = {s0} + {s1} * W * H bytes");
    println!("  learner overhead L = {l} bytes ({:.3} GB), window [{l_lo}, {l_hi}]");

    // integer validation against the reference table
    let rows = reference_table(&fitted, 4).unwrap();
    println!("\nvalidation (4-device node):");
    for r in &rows {
        println!(
            "  {:>3}x{:<3}  DP {}/device ({} total)   disagg {}/device ({} total)   ratio {:.3}",
            r.width, r.height, r.dp_per_device, r.dp_total, r.disagg_per_device, r.disagg_total,
            r.ratio
        );
    }
    assert_eq!(rows[0].dp_per_device, 1024);
    assert_eq!(rows[1].dp_per_device, 256);
    assert_eq!(rows[0].disagg_per_device, 2800);
    assert_eq!(rows[1].disagg_per_device, 700);

    // anchor residuals
    let vision = a + 256 * fitted.per_env_sim_bytes(320, 240);
    let state = a + 4096 * s0;
    println!("\nanchor residuals:");
    println!(
        "  vision sim (256 @ 320x240): {:.3} GB vs 44 GB target ({:+.3} GB)",
        vision as f64 / 1e9,
        (vision as f64 - vision_sim_anchor) / 1e9
    );
    println!(
        "  state-only (4096 envs):     {:.3} GB vs 14 GB target ({:+.3} GB)  <- irreconcilable",
        state as f64 / 1e9,
        (state as f64 - state_anchor) / 1e9
    );
    println!("  (one asset-cache constant cannot serve both; the table wins)");

    assert_eq!(fitted, MemoryModel::calibrated_default());
    println!("\nfitted model matches MemoryModel::calibrated_default()");
}
