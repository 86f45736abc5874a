//! ADR mechanics in isolation: feed synthetic per-episode success streams
//! into the controller and watch the ranges widen from initial to terminal.

use disaggrl::env::{AdrConfig, AdrController};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = AdrConfig {
        window: 64,
        ..Default::default()
    };
    let mut adr = AdrController::from_config(&cfg)?;
    println!("window {}, threshold {}, step {}", cfg.window, cfg.threshold, cfg.step);
    println!("{:<6} {:>8} {:>24}", "batch", "fraction", "spawn halfwidth range");

    // a policy that succeeds 60% of the time expands every window fill;
    // one at 30% never does
    for batch in 0..30 {
        let succeeding = batch % 3 != 2; // two good stretches, one bad
        let rate = if succeeding { 0.6 } else { 0.3 };
        adr.record((0..64).map(|i| (i as f32 / 64.0) < rate));
        let spawn = &adr.sampler.params()[0];
        let [lo, hi] = spawn.current_range();
        println!(
            "{:<6} {:>8.2} {:>14.3} ..{:.3}",
            batch,
            adr.mean_fraction(),
            lo,
            hi
        );
    }
    println!(
        "\nparams at terminal range: {:.0}%",
        adr.pct_terminal() * 100.0
    );
    Ok(())
}
