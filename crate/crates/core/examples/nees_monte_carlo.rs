//! Filter consistency: average NEES of the full 15-state error over Monte
//! Carlo runs of a single GNSS-aided robot, against the χ² 95% band.
//!
//! `cargo run --release --example nees_monte_carlo [runs]`

use coopzu::sim::{run_scenario_with, RunOptions, ScenarioConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn main() -> coopzu::Result<()> {
    let runs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let base = ScenarioConfig::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/gnss_single.toml"))?;
    let opts = RunOptions {
        record_nees: true,
        ..Default::default()
    };
    let mut sum: Vec<f64> = Vec::new();
    for k in 0..runs {
        let mut cfg = base.clone();
        cfg.seed = base.seed + k as u64;
        let art = run_scenario_with(&cfg, &opts)?;
        if sum.is_empty() {
            sum = vec![0.0; art.nees.len()];
        }
        for (s, n) in sum.iter_mut().zip(&art.nees) {
            *s += n.nees;
        }
    }
    let chi = ChiSquared::new(15.0 * runs as f64).expect("dof > 0");
    let (lo, hi) = (chi.inverse_cdf(0.025) / runs as f64, chi.inverse_cdf(0.975) / runs as f64);
    let avg: Vec<f64> = sum.iter().map(|s| s / runs as f64).collect();
    let inside = avg.iter().filter(|&&x| x >= lo && x <= hi).count();
    let mean = avg.iter().sum::<f64>() / avg.len().max(1) as f64;
    println!("band [{lo:.2}, {hi:.2}], mean NEES {mean:.2} (15 is ideal)");
    println!("{inside}/{} steps inside ({:.1}%)", avg.len(), 100.0 * inside as f64 / avg.len().max(1) as f64);
    Ok(())
}
