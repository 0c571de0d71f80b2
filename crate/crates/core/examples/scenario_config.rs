//! Scenario files: load, tweak, validate, and print back as TOML.
//!
//! `cargo run --example scenario_config [scenario.toml | cave | indoor]`

use coopzu::relative::AbsentFactorOrder;
use coopzu::sim::{builtin, ScenarioConfig};

fn main() -> coopzu::Result<()> {
    let arg = std::env::args().nth(1).unwrap_or_else(|| "cave".into());
    let mut cfg = match builtin(&arg) {
        Some(c) => c,
        None => ScenarioConfig::from_file(&arg)?,
    };
    cfg.filter.absent_order = AbsentFactorOrder::PosteriorTimesPriorInverse;
    cfg.filter.range_nis_gate = Some(25.0);
    cfg.validate()?;
    let text = cfg.to_toml();
    assert_eq!(ScenarioConfig::from_toml(&text)?, cfg);
    println!("{text}");

    // Invalid values are rejected with the offending field named.
    cfg.sensors.uwb_sigma = -1.0;
    if let Err(e) = cfg.validate() {
        eprintln!("rejected: {e}");
    }
    Ok(())
}
