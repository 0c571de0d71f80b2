//! Robot 2 in the cave: bias estimation error and velocity contraction at
//! every zero-velocity update.
//!
//! `cargo run --release --example zu_bias_convergence [seed] [scenario.toml] [robot]`

use coopzu::sim::{cave, run_scenario, ScenarioConfig};

fn main() -> coopzu::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = match args.get(2) {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => cave(),
    };
    if let Some(s) = args.get(1) {
        cfg.seed = s.parse().map_err(|_| coopzu::Error::config("seed", "not an integer"))?;
    }
    let robot: u32 = match args.get(3) {
        Some(r) => r.parse().map_err(|_| coopzu::Error::config("robot", "not an integer"))?,
        None => 2,
    };
    let art = run_scenario(&cfg)?;
    println!(
        "{:>7} {:>9} {:>9} {:>10} {:>10} {:>10} {:>10} {:>9}",
        "t", "|v| pre", "|v| post", "e_bax", "e_bay", "e_baz", "e_bgz", "3σ_bgz"
    );
    for z in art.zu.iter().filter(|z| z.robot_id == robot) {
        let e = z.bias_errors();
        println!(
            "{:7.2} {:9.2e} {:9.2e} {:10.2e} {:10.2e} {:10.2e} {:10.2e} {:9.2e}",
            z.info.t,
            (z.info.v_before - z.v_true).norm(),
            (z.info.v_after - z.v_true).norm(),
            e[0],
            e[1],
            e[2],
            e[5],
            3.0 * z.info.bias_sigma[5]
        );
    }
    Ok(())
}
