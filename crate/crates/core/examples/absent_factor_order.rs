//! Compares the two orders of the map applied to correlation factors toward
//! robots absent from a relative update. With the inflating order, later
//! couplings can stop being positive semi-definite and are refused.
//!
//! `cargo run --release --example absent_factor_order [seed]`

use coopzu::metrics::report;
use coopzu::relative::AbsentFactorOrder;
use coopzu::sim::{indoor, run_scenario};

fn main() -> coopzu::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    for order in [AbsentFactorOrder::PriorTimesPosteriorInverse, AbsentFactorOrder::PosteriorTimesPriorInverse] {
        let mut cfg = indoor();
        cfg.seed = seed;
        cfg.filter.absent_order = order;
        let art = run_scenario(&cfg)?;
        let failed: u64 = art.summaries.iter().map(|s| s.failed_relative).sum();
        let m = report(&art, cfg.sensors.imu_rate)?;
        let rmse: Vec<String> = m.robots.iter().map(|r| format!("R{} {:.3}", r.robot_id, r.error_3d.rmse)).collect();
        println!("{order:?}: {failed} refused couplings; 3D RMSE (m) {}", rmse.join(", "));
    }
    Ok(())
}
