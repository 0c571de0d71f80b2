//! Cave A/B study: the same seeds with and without zero-velocity updates.
//!
//! `cargo run --release --example cave_ab [trials] [first_seed]`

use coopzu::report::run_ab;
use coopzu::sim::cave;

fn main() -> coopzu::Result<()> {
    let mut args = std::env::args().skip(1);
    let trials: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut cfg = cave();
    if let Some(s) = args.next().and_then(|s| s.parse().ok()) {
        cfg.seed = s;
    }
    let summary = run_ab(&cfg, trials)?;
    print!("{}", summary.to_table());
    for r in &summary.robots {
        println!(
            "robot {}: initial error {:.2} m, improvement {:.1}% with ZU vs {:.1}% without",
            r.robot_id, r.mean_initial_error, r.mean_improvement_with_zu, r.mean_improvement_without_zu
        );
    }
    Ok(())
}
