//! Run one scenario and write the full artifact set (CSV traces, event log,
//! metrics, SVG plots) the way the CLI does.
//!
//! `cargo run --release --example run_and_write [out_dir] [scenario]`

use std::path::PathBuf;

use coopzu::report::write_run;
use coopzu::sim::{builtin, run_scenario, ScenarioConfig};

fn main() -> coopzu::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out".into()));
    let name = args.next().unwrap_or_else(|| "cave".into());
    let cfg = match builtin(&name) {
        Some(c) => c,
        None => ScenarioConfig::from_file(&name)?,
    };
    let art = run_scenario(&cfg)?;
    let dir = write_run(&out, &cfg.name, &art, cfg.sensors.imu_rate, true)?;
    println!("wrote {}", dir.display());
    for w in &art.warnings {
        println!("warning: {w}");
    }
    println!("{} events, {} ZUs", art.events.len(), art.zu.len());
    Ok(())
}
