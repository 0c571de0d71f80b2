//! Whole-simulator properties over randomized short scenarios.

use coopzu::relative::PSD_REL_TOL;
use coopzu::sim::{run_scenario, run_scenario_with, RunOptions, ScenarioConfig};
use proptest::prelude::*;

/// Two robots driving opposite laps of a small square so they range often,
/// one of them stopping periodically for zero-velocity updates.
fn pair(seed: u64, side: f64, period: f64) -> ScenarioConfig {
    let text = format!(
        r#"
name = "pair"
seed = {seed}
duration = 25.0

[[robots]]
id = 0
start = [0.0, 0.0, 0.0]
waypoints = [[{side}, 0.0], [{side}, {side}], [0.0, {side}], [0.0, 0.0]]
looping = true
zu_enabled = true
stop_policy = {{ mode = "periodic", period = {period}, dwell = 0.5 }}

[[robots]]
id = 1
start = [{side}, {side}, 0.0]
waypoints = [[0.0, {side}], [0.0, 0.0], [{side}, 0.0], [{side}, {side}]]
looping = true
"#
    );
    ScenarioConfig::from_toml(&text).expect("valid scenario")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn covariances_stay_symmetric_and_psd(seed in any::<u64>(), side in 1.0f64..2.0, period in 3.0f64..8.0) {
        let cfg = pair(seed, side, period);
        let art = run_scenario_with(&cfg, &RunOptions { check_invariants: true, ..Default::default() }).unwrap();
        prop_assert!(art.range_updates(1, 0) > 0, "no range updates");
        prop_assert!(art.zu.iter().any(|z| z.robot_id == 0), "no zero-velocity updates");
        for s in &art.summaries {
            prop_assert!(s.worst_min_eig_ratio >= -PSD_REL_TOL, "robot {}: {:e}", s.robot_id, s.worst_min_eig_ratio);
            prop_assert_eq!(s.worst_asymmetry, 0.0);
        }
        prop_assert!(art.beliefs.iter().all(|b| b.p_pos.iter().all(|p| p.is_finite() && *p >= 0.0)));
    }

    #[test]
    fn runs_are_deterministic_in_the_seed(seed in any::<u64>()) {
        let cfg = pair(seed, 1.5, 5.0);
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        prop_assert_eq!(&a.beliefs, &b.beliefs);
        prop_assert_eq!(&a.events, &b.events);
    }
}

#[test]
fn scenario_toml_round_trips() {
    for name in ["cave.toml", "indoor.toml", "periodic_zu.toml", "gnss_single.toml"] {
        let cfg = ScenarioConfig::from_file(format!("{}/scenarios/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap();
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg, "{name}");
    }
}
