//! Scenario configuration (TOML).
//!
//! Every sensor and filter constant has a default, so a scenario file only
//! needs `name`, `duration` and its robots. See `scenarios/*.toml` for the
//! shipped scenarios and [`ScenarioConfig::validate`] for the constraints.

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, StopPolicy, DEFAULT_ENCODER_EPS};
use crate::error::{Error, Result};
use crate::nav::{NoiseSpec, RobotId};
use crate::private::CrossFactorUpdate;
use crate::relative::AbsentFactorOrder;

const STANDARD_GRAVITY: f64 = 9.80665;

/// Sensor rates (Hz) and white-noise σ of the simulated hardware.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    pub imu_rate: f64,
    /// Per-sample σ (m/s²).
    pub accel_sigma: f64,
    /// Per-sample σ (rad/s).
    pub gyro_sigma: f64,
    pub encoder_rate: f64,
    pub encoder_sigma: f64,
    pub gnss_rate: f64,
    pub gnss_pos_sigma: f64,
    pub gnss_vel_sigma: f64,
    pub uwb_rate: f64,
    pub uwb_sigma: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            imu_rate: 50.0,
            accel_sigma: 0.001,
            gyro_sigma: 0.001,
            encoder_rate: 30.0,
            encoder_sigma: 0.01,
            gnss_rate: 1.0,
            gnss_pos_sigma: 0.1,
            gnss_vel_sigma: 0.02,
            uwb_rate: 1.0,
            uwb_sigma: 0.05,
        }
    }
}

/// Constant true IMU biases are drawn per robot from `N(0, σ²)` per axis.
///
/// Defaults are the in-run bias stability of a tactical-grade MEMS unit:
/// 0.2 mg and 25.2 °/h.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthModel {
    pub accel_bias_sigma: f64,
    pub gyro_bias_sigma: f64,
}

impl Default for TruthModel {
    fn default() -> Self {
        Self {
            accel_bias_sigma: 0.2e-3 * STANDARD_GRAVITY,
            gyro_bias_sigma: 25.2_f64.to_radians() / 3600.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// Process noise; derived from the sensor model when absent
    /// (`arw = σ_g √Δt`, `vrw = σ_a √Δt`, bias walks from below).
    pub noise: Option<NoiseSpec>,
    pub accel_bias_walk: f64,
    pub gyro_bias_walk: f64,
    /// Filter-side range σ; defaults to the sensor σ.
    pub uwb_sigma: Option<f64>,
    pub odom_vertical_sigma: f64,
    /// Odometry Jacobian includes the attitude error (see `h_odomvel_coupled`).
    pub odom_attitude_coupling: bool,
    pub zupt_vel_sigma: f64,
    /// Gyro σ of the ZU pseudo-measurement; defaults to the IMU gyro σ
    /// averaged over one dwell window.
    pub zupt_gyro_sigma: Option<f64>,
    pub encoder_eps: f64,
    pub cross_update: CrossFactorUpdate,
    pub absent_order: AbsentFactorOrder,
    /// Innovation gate on range updates (NIS threshold); off by default.
    pub range_nis_gate: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            noise: None,
            accel_bias_walk: 1e-6,
            gyro_bias_walk: 1e-7,
            uwb_sigma: None,
            odom_vertical_sigma: 100.0,
            odom_attitude_coupling: true,
            zupt_vel_sigma: 1e-3,
            zupt_gyro_sigma: None,
            encoder_eps: DEFAULT_ENCODER_EPS,
            cross_update: CrossFactorUpdate::default(),
            absent_order: AbsentFactorOrder::default(),
            range_nis_gate: None,
        }
    }
}

/// When a robot's script begins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum StartTrigger {
    Immediate,
    AtTime { t: f64 },
    /// `delay` seconds after the robot's first relative update.
    AfterFirstContact { delay: f64 },
}

impl Default for StartTrigger {
    fn default() -> Self {
        StartTrigger::Immediate
    }
}

/// Initial estimate and covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialBelief {
    /// Horizontal position error magnitude, applied in a seeded random
    /// direction; P₀'s horizontal position variances become its square.
    /// When absent, the error is drawn from `position_sigma`.
    pub position_error: Option<f64>,
    /// `[east, north, up]` position σ (m).
    pub position_sigma: [f64; 3],
    pub velocity_sigma: f64,
    pub attitude_sigma: f64,
    /// Defaults to the truth model's bias σ.
    pub accel_bias_sigma: Option<f64>,
    pub gyro_bias_sigma: Option<f64>,
}

impl Default for InitialBelief {
    fn default() -> Self {
        Self {
            position_error: None,
            position_sigma: [0.1, 0.1, 0.1],
            velocity_sigma: 0.01,
            attitude_sigma: 0.001,
            accel_bias_sigma: None,
            gyro_bias_sigma: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub id: RobotId,
    /// Start position (m, ENU).
    pub start: [f64; 3],
    /// Initial heading, counter-clockwise from east (rad).
    #[serde(default)]
    pub yaw: f64,
    #[serde(default = "default_speed")]
    pub speed: f64,
    /// Turn-in-place rate (rad/s).
    #[serde(default = "default_turn_rate")]
    pub turn_rate: f64,
    /// Horizontal waypoints, visited in order.
    #[serde(default)]
    pub waypoints: Vec<[f64; 2]>,
    /// Restart from the first waypoint after the last one.
    #[serde(default)]
    pub looping: bool,
    #[serde(default)]
    pub start_trigger: StartTrigger,
    #[serde(default)]
    pub zu_enabled: bool,
    #[serde(default)]
    pub gnss: bool,
    #[serde(default)]
    pub stop_policy: StopPolicy,
    #[serde(default)]
    pub initial: InitialBelief,
}

fn default_speed() -> f64 {
    0.2
}
fn default_turn_rate() -> f64 {
    0.5
}
fn default_gate() -> f64 {
    2.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Simulated time (s).
    pub duration: f64,
    /// UWB ranging/communication range (m).
    #[serde(default = "default_gate")]
    pub gate_distance: f64,
    /// Allowed `[detector, detected]` pairs. Empty means every pair, with the
    /// higher id detecting.
    #[serde(default)]
    pub links: Vec<[RobotId; 2]>,
    #[serde(default)]
    pub sensors: SensorModel,
    #[serde(default)]
    pub truth: TruthModel,
    #[serde(default)]
    pub filter: FilterConfig,
    pub robots: Vec<RobotConfig>,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite and > 0, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite and ≥ 0, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("toml@{}..{}", s.start, s.end))
                .unwrap_or_else(|| "toml".into());
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        positive("duration", self.duration)?;
        positive("gate_distance", self.gate_distance)?;
        let s = &self.sensors;
        for (f, v) in [
            ("sensors.imu_rate", s.imu_rate),
            ("sensors.encoder_rate", s.encoder_rate),
            ("sensors.gnss_rate", s.gnss_rate),
            ("sensors.uwb_rate", s.uwb_rate),
        ] {
            positive(f, v)?;
        }
        for (f, v) in [
            ("sensors.accel_sigma", s.accel_sigma),
            ("sensors.gyro_sigma", s.gyro_sigma),
            ("sensors.encoder_sigma", s.encoder_sigma),
            ("sensors.gnss_pos_sigma", s.gnss_pos_sigma),
            ("sensors.gnss_vel_sigma", s.gnss_vel_sigma),
            ("sensors.uwb_sigma", s.uwb_sigma),
            ("truth.accel_bias_sigma", self.truth.accel_bias_sigma),
            ("truth.gyro_bias_sigma", self.truth.gyro_bias_sigma),
            ("filter.accel_bias_walk", self.filter.accel_bias_walk),
            ("filter.gyro_bias_walk", self.filter.gyro_bias_walk),
        ] {
            non_negative(f, v)?;
        }
        let f = &self.filter;
        if let Some(n) = &f.noise {
            if !n.is_valid() {
                return Err(Error::config("filter.noise", "entries must be finite and ≥ 0"));
            }
        }
        if let Some(g) = f.range_nis_gate {
            positive("filter.range_nis_gate", g)?;
        }
        if let Some(u) = f.uwb_sigma {
            positive("filter.uwb_sigma", u)?;
        }
        positive("filter.odom_vertical_sigma", f.odom_vertical_sigma)?;
        positive("filter.zupt_vel_sigma", f.zupt_vel_sigma)?;
        if let Some(sg) = f.zupt_gyro_sigma {
            positive("filter.zupt_gyro_sigma", sg)?;
        }
        positive("filter.encoder_eps", f.encoder_eps)?;

        if self.robots.is_empty() {
            return Err(Error::config("robots", "at least one robot is required"));
        }
        let mut ids: Vec<RobotId> = self.robots.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("robots.id", "ids must be unique"));
        }
        for (i, r) in self.robots.iter().enumerate() {
            let at = |f: &str| format!("robots[{i}].{f}");
            if r.start.iter().any(|x| !x.is_finite()) {
                return Err(Error::config(at("start"), "must be finite"));
            }
            positive(&at("speed"), r.speed)?;
            positive(&at("turn_rate"), r.turn_rate)?;
            if r.waypoints.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::config(at("waypoints"), "must be finite"));
            }
            if r.looping && r.waypoints.len() < 2 {
                return Err(Error::config(at("looping"), "needs at least two waypoints"));
            }
            match r.start_trigger {
                StartTrigger::AtTime { t } => non_negative(&at("start_trigger.t"), t)?,
                StartTrigger::AfterFirstContact { delay } => {
                    non_negative(&at("start_trigger.delay"), delay)?
                }
                StartTrigger::Immediate => {}
            }
            r.stop_policy.validate().map_err(|e| match e {
                Error::Config { field, reason } => Error::config(at(&field), reason),
                other => other,
            })?;
            let ib = &r.initial;
            if let Some(e) = ib.position_error {
                non_negative(&at("initial.position_error"), e)?;
            }
            for (k, v) in ib.position_sigma.iter().enumerate() {
                positive(&at(&format!("initial.position_sigma[{k}]")), *v)?;
            }
            positive(&at("initial.velocity_sigma"), ib.velocity_sigma)?;
            positive(&at("initial.attitude_sigma"), ib.attitude_sigma)?;
            for (f, v) in [
                ("initial.accel_bias_sigma", ib.accel_bias_sigma),
                ("initial.gyro_bias_sigma", ib.gyro_bias_sigma),
            ] {
                if let Some(v) = v {
                    positive(&at(f), v)?;
                }
            }
        }
        for (i, [a, b]) in self.links.iter().enumerate() {
            if a == b {
                return Err(Error::config(format!("links[{i}]"), "a robot cannot range itself"));
            }
            for id in [a, b] {
                if !ids.contains(id) {
                    return Err(Error::config(format!("links[{i}]"), format!("unknown robot {id}")));
                }
            }
        }
        Ok(())
    }

    pub fn imu_dt(&self) -> f64 {
        1.0 / self.sensors.imu_rate
    }

    /// Effective `[detector, detected]` pairs.
    pub fn effective_links(&self) -> Vec<[RobotId; 2]> {
        if !self.links.is_empty() {
            return self.links.clone();
        }
        let mut ids: Vec<RobotId> = self.robots.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        let mut out = Vec::new();
        for (i, &lo) in ids.iter().enumerate() {
            for &hi in ids.iter().skip(i + 1).rev() {
                out.push([hi, lo]);
            }
        }
        out.sort_by(|x, y| y[0].cmp(&x[0]).then(x[1].cmp(&y[1])));
        out
    }

    /// Peers each robot can ever exchange with.
    pub fn peers_of(&self, id: RobotId) -> Vec<RobotId> {
        let mut p: Vec<RobotId> = self
            .effective_links()
            .iter()
            .filter_map(|&[a, b]| {
                if a == id {
                    Some(b)
                } else if b == id {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    pub fn filter_noise(&self) -> NoiseSpec {
        self.filter.noise.unwrap_or_else(|| {
            let sqrt_dt = self.imu_dt().sqrt();
            NoiseSpec {
                arw: self.sensors.gyro_sigma * sqrt_dt,
                vrw: self.sensors.accel_sigma * sqrt_dt,
                gyro_bias_instab: self.filter.gyro_bias_walk,
                accel_bias_instab: self.filter.accel_bias_walk,
            }
        })
    }

    pub fn agent_config(&self, robot: &RobotConfig) -> AgentConfig {
        let mut c = AgentConfig::new(robot.id, self.peers_of(robot.id), self.filter_noise());
        c.odom_sigma = self.sensors.encoder_sigma.max(1e-9);
        c.odom_vertical_sigma = self.filter.odom_vertical_sigma;
        c.odom_attitude_coupling = self.filter.odom_attitude_coupling;
        c.range_nis_gate = self.filter.range_nis_gate;
        c.gnss_pos_sigma = self.sensors.gnss_pos_sigma.max(1e-9);
        c.gnss_vel_sigma = self.sensors.gnss_vel_sigma.max(1e-9);
        c.zupt_vel_sigma = self.filter.zupt_vel_sigma;
        c.zupt_gyro_sigma = self.filter.zupt_gyro_sigma.unwrap_or_else(|| {
            let n = (robot.stop_policy.dwell * self.sensors.imu_rate).max(1.0);
            (self.sensors.gyro_sigma / n.sqrt()).max(1e-6)
        });
        c.zu_enabled = robot.zu_enabled;
        c.stop_policy = robot.stop_policy;
        c.encoder_eps = self.filter.encoder_eps;
        c.cross_update = self.filter.cross_update;
        c.absent_order = self.filter.absent_order;
        c
    }

    pub fn range_variance(&self) -> f64 {
        let s = self.filter.uwb_sigma.unwrap_or(self.sensors.uwb_sigma).max(1e-6);
        s * s
    }

    pub fn robot(&self, id: RobotId) -> Option<&RobotConfig> {
        self.robots.iter().find(|r| r.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        name = "tiny"
        duration = 10.0
        [[robots]]
        id = 0
        start = [0.0, 0.0, 0.0]
    "#;

    #[test]
    fn defaults_come_from_the_hardware_table() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.sensors, SensorModel::default());
        assert_eq!(cfg.sensors.imu_rate, 50.0);
        assert_eq!(cfg.sensors.uwb_sigma, 0.05);
        assert_eq!(cfg.gate_distance, 2.5);
        assert_eq!(cfg.robots[0].speed, 0.2);
        assert_eq!(cfg.robots[0].stop_policy.dwell, 0.5);
        assert_eq!(cfg.robots[0].stop_policy.cov_threshold, 5.0);
        let n = cfg.filter_noise();
        assert!((n.arw - 0.001 * 0.02f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn field_level_diagnostics() {
        let bad = MINIMAL.replace("duration = 10.0", "duration = -1.0");
        match ScenarioConfig::from_toml(&bad).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "duration"),
            e => panic!("{e}"),
        }
        let bad = format!("{MINIMAL}\n[robots.stop_policy]\ndwell = 0.0\n");
        match ScenarioConfig::from_toml(&bad).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "robots[0].stop_policy.dwell"),
            e => panic!("{e}"),
        }
        let bad = MINIMAL.replace("name", "nmae");
        assert!(matches!(ScenarioConfig::from_toml(&bad), Err(Error::Config { .. })));
        let bad = format!("links = [[0, 3]]\n{MINIMAL}");
        match ScenarioConfig::from_toml(&bad).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "links[0]"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn default_links_let_higher_ids_detect() {
        let mut cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        for id in [1, 2] {
            let mut r = cfg.robots[0].clone();
            r.id = id;
            cfg.robots.push(r);
        }
        assert_eq!(cfg.effective_links(), vec![[2, 0], [2, 1], [1, 0]]);
        assert_eq!(cfg.peers_of(0), vec![1, 2]);
    }
}
