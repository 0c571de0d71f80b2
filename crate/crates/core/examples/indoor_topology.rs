//! Indoor layout: which pairs actually range, and how often. Only the
//! configured links may measure, so one pair never exchanges data directly.
//!
//! `cargo run --release --example indoor_topology [seed]`

use coopzu::metrics::report;
use coopzu::sim::{indoor, run_scenario};

fn main() -> coopzu::Result<()> {
    let mut cfg = indoor();
    if let Some(s) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        cfg.seed = s;
    }
    println!("links (detector → detected): {:?}", cfg.effective_links());
    let art = run_scenario(&cfg)?;
    let ids = art.robot_ids();
    for &a in &ids {
        for &b in &ids {
            if a < b {
                let n = art.range_updates(a, b) + art.range_updates(b, a);
                println!("R{a}↔R{b}: {n} range updates");
            }
        }
    }
    let m = report(&art, cfg.sensors.imu_rate)?;
    for r in &m.robots {
        println!(
            "robot {}: 3D RMSE {:.3} m, horizontal error {:.2} → {:.2} m",
            r.robot_id, r.error_3d.rmse, r.initial_horizontal_error, r.final_horizontal_error
        );
    }
    for s in &art.summaries {
        if s.failed_relative + s.stale_dropped + s.busy_dropped > 0 {
            println!(
                "robot {}: {} failed, {} stale, {} busy relative exchanges",
                s.robot_id, s.failed_relative, s.stale_dropped, s.busy_dropped
            );
        }
    }
    Ok(())
}
