//! The two shipped scenarios. The TOML sources live in `scenarios/` and are
//! embedded here so the library and the CLI always agree.

use super::config::ScenarioConfig;

pub const CAVE_TOML: &str = include_str!("../../scenarios/cave.toml");
pub const INDOOR_TOML: &str = include_str!("../../scenarios/indoor.toml");

/// Lost robots reinstated by a robot driving through a cave.
pub fn cave() -> ScenarioConfig {
    ScenarioConfig::from_toml(CAVE_TOML).expect("shipped cave scenario is valid")
}

/// Three robots in a small room with a restricted communication graph.
pub fn indoor() -> ScenarioConfig {
    ScenarioConfig::from_toml(INDOOR_TOML).expect("shipped indoor scenario is valid")
}

/// Looks up a shipped scenario by name.
pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    match name {
        "cave" => Some(cave()),
        "indoor" => Some(indoor()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scenarios_parse_with_stated_constants() {
        let c = cave();
        assert_eq!(c.gate_distance, 2.5);
        assert_eq!(c.robot(0).unwrap().initial.position_error, Some(14.14));
        assert_eq!(c.robot(1).unwrap().initial.position_error, Some(31.62));
        assert!(c.robots.iter().all(|r| r.speed == 0.2));
        assert_eq!(c.robot(2).unwrap().stop_policy.cov_threshold, 5.0);
        let i = indoor();
        assert_eq!(i.gate_distance, 1.0);
        assert_eq!(i.robot(2).unwrap().stop_policy.cov_threshold, 2.0);
        assert_eq!(i.effective_links(), vec![[2, 0], [0, 1]]);
        assert_eq!(i.sensors.uwb_sigma, 0.3);
    }
}
