//! Ground-truth kinematics.
//!
//! Truth is discrete at the IMU rate and integrated with the same attitude,
//! velocity and trapezoidal position rules the filter uses, so a noiseless,
//! bias-free IMU stream mechanizes back onto the truth exactly.

use crate::linalg::{euler_from_dcm, orthonormalize, rot_z, skew, Mat3, Vec3};
use crate::nav::{gravity, RobotId};

use super::config::{RobotConfig, StartTrigger};

#[derive(Clone, Debug, PartialEq)]
pub struct RobotTruth {
    pub id: RobotId,
    pub r: Vec3,
    pub v: Vec3,
    pub c_bn: Mat3,
    pub b_a: Vec3,
    pub b_g: Vec3,
}

impl RobotTruth {
    pub fn at_rest(id: RobotId, r: Vec3, yaw: f64) -> Self {
        Self {
            id,
            r,
            v: Vec3::zeros(),
            c_bn: rot_z(yaw),
            b_a: Vec3::zeros(),
            b_g: Vec3::zeros(),
        }
    }

    pub fn yaw(&self) -> f64 {
        euler_from_dcm(&self.c_bn).2
    }

    /// Forward (body x) speed.
    pub fn forward_speed(&self) -> f64 {
        (self.c_bn.transpose() * self.v).x
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthState {
    pub t: f64,
    pub robots: Vec<RobotTruth>,
}

/// Ideal inertial quantities over one step, in the body frame at the start
/// of the step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepKinematics {
    pub specific_force: Vec3,
    pub omega: Vec3,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum Phase {
    Waiting,
    Turning { target_yaw: f64 },
    Driving { dir: Vec3, length: f64, travelled: f64 },
    Done,
}

/// Waypoint follower: turn in place toward the next waypoint, then drive
/// straight at constant speed.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptRunner {
    waypoints: Vec<[f64; 2]>,
    speed: f64,
    turn_rate: f64,
    looping: bool,
    next: usize,
    phase: Phase,
    paused: bool,
    start_at: Option<f64>,
}

fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    (a + PI).rem_euclid(2.0 * PI) - PI
}

impl ScriptRunner {
    pub fn new(waypoints: Vec<[f64; 2]>, speed: f64, turn_rate: f64, looping: bool, start_at: Option<f64>) -> Self {
        Self {
            waypoints,
            speed,
            turn_rate,
            looping,
            next: 0,
            phase: Phase::Waiting,
            paused: false,
            start_at,
        }
    }

    pub fn from_config(cfg: &RobotConfig) -> Self {
        let start_at = match cfg.start_trigger {
            StartTrigger::Immediate => Some(0.0),
            StartTrigger::AtTime { t } => Some(t),
            StartTrigger::AfterFirstContact { .. } => None,
        };
        Self::new(cfg.waypoints.clone(), cfg.speed, cfg.turn_rate, cfg.looping, start_at)
    }

    /// Arms a deferred start.
    pub fn set_start(&mut self, t: f64) {
        if self.start_at.is_none() {
            self.start_at = Some(t);
        }
    }

    pub fn start_time(&self) -> Option<f64> {
        self.start_at
    }

    pub fn pause(&mut self) {
        self.paused = true;
    }

    pub fn resume(&mut self) {
        self.paused = false;
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    fn started(&self, t: f64) -> bool {
        self.start_at.is_some_and(|s| t >= s - 1e-9)
    }

    /// Whether the controller's velocity command is nonzero at `t`.
    pub fn commanded_moving(&self, t: f64) -> bool {
        if self.paused || !self.started(t) || self.waypoints.is_empty() {
            return false;
        }
        !matches!(self.phase, Phase::Done)
    }

    fn begin_leg(&mut self, r: &Vec3, yaw: f64) {
        if self.next >= self.waypoints.len() {
            if self.looping && !self.waypoints.is_empty() {
                self.next = 0;
            } else {
                self.phase = Phase::Done;
                return;
            }
        }
        let [x, y] = self.waypoints[self.next];
        let d = Vec3::new(x - r.x, y - r.y, 0.0);
        if d.norm() < 1e-9 {
            self.next += 1;
            self.phase = Phase::Waiting;
            return self.begin_leg(r, yaw);
        }
        let target_yaw = d.y.atan2(d.x);
        self.phase = if wrap_angle(target_yaw - yaw).abs() < 1e-9 {
            Phase::Driving {
                dir: d / d.norm(),
                length: d.norm(),
                travelled: 0.0,
            }
        } else {
            Phase::Turning { target_yaw }
        };
    }

    /// Advances `truth` by `dt` from time `t` and returns the ideal inertial
    /// inputs for the step.
    pub fn step(&mut self, truth: &mut RobotTruth, t: f64, dt: f64) -> StepKinematics {
        if self.phase == Phase::Waiting && self.started(t) && !self.waypoints.is_empty() {
            self.begin_leg(&truth.r, truth.yaw());
        }
        let v_old = truth.v;
        let mut omega_z = 0.0;
        let mut v_new = Vec3::zeros();
        if !self.paused && self.started(t) {
            match self.phase.clone() {
                Phase::Turning { target_yaw } => {
                    let e = wrap_angle(target_yaw - truth.yaw());
                    let max = self.turn_rate * dt;
                    let step = e.clamp(-max, max);
                    omega_z = step / dt;
                    if (e - step).abs() < 1e-9 {
                        let [x, y] = self.waypoints[self.next];
                        let d = Vec3::new(x - truth.r.x, y - truth.r.y, 0.0);
                        self.phase = Phase::Driving {
                            dir: d / d.norm(),
                            length: d.norm(),
                            travelled: 0.0,
                        };
                    }
                }
                Phase::Driving { dir, length, travelled } => {
                    let s_old = v_old.norm();
                    let remaining = length - travelled;
                    let s_new = if remaining >= 0.5 * dt * (s_old + self.speed) {
                        self.speed
                    } else {
                        0.0
                    };
                    v_new = dir * s_new;
                    let travelled = travelled + 0.5 * dt * (s_old + s_new);
                    if s_new == 0.0 {
                        self.next += 1;
                        self.phase = Phase::Waiting;
                        self.begin_leg(&(truth.r + (v_old + v_new) * (0.5 * dt)), truth.yaw());
                    } else {
                        self.phase = Phase::Driving { dir, length, travelled };
                    }
                }
                Phase::Waiting | Phase::Done => {}
            }
        }
        let omega = Vec3::new(0.0, 0.0, omega_z);
        let c_old = truth.c_bn;
        let specific_force = c_old.transpose() * ((v_new - v_old) / dt - gravity());
        truth.c_bn = orthonormalize(&(c_old * (Mat3::identity() + skew(&omega) * dt)));
        truth.r += (v_old + v_new) * (0.5 * dt);
        truth.v = v_new;
        StepKinematics {
            specific_force,
            omega,
            dt,
        }
    }
}

/// Advances every robot by one step.
pub fn advance_truth(truth: &TruthState, dt: f64, scripts: &mut [ScriptRunner]) -> (TruthState, Vec<StepKinematics>) {
    assert!(dt > 0.0, "dt must be positive");
    let mut next = truth.clone();
    let kin = next
        .robots
        .iter_mut()
        .zip(scripts.iter_mut())
        .map(|(r, s)| s.step(r, truth.t, dt))
        .collect();
    next.t = truth.t + dt;
    (next, kin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nav::{mechanize, ImuBiases, ImuSample, NavState};

    const DT: f64 = 0.02;

    fn run(script: &mut ScriptRunner, truth: &mut RobotTruth, steps: usize, mut hook: impl FnMut(usize, &mut ScriptRunner)) -> Vec<StepKinematics> {
        (0..steps)
            .map(|k| {
                hook(k, script);
                script.step(truth, k as f64 * DT, DT)
            })
            .collect()
    }

    #[test]
    fn straight_line_ten_seconds() {
        let mut s = ScriptRunner::new(vec![[100.0, 0.0]], 0.2, 0.5, false, Some(0.0));
        let mut tr = RobotTruth::at_rest(0, Vec3::zeros(), 0.0);
        run(&mut s, &mut tr, 500, |_, _| {});
        // One half-step of acceleration at the start.
        assert!((tr.r.x - (2.0 - 0.5 * DT * 0.2)).abs() < 1e-12, "{}", tr.r.x);
        assert_eq!(tr.r.y, 0.0);
        assert_eq!(tr.r.z, 0.0);
    }

    #[test]
    fn stop_for_half_a_second_costs_ten_centimetres() {
        let mut a = ScriptRunner::new(vec![[100.0, 0.0]], 0.2, 0.5, false, Some(0.0));
        let mut b = a.clone();
        let (mut ta, mut tb) = (RobotTruth::at_rest(0, Vec3::zeros(), 0.0), RobotTruth::at_rest(0, Vec3::zeros(), 0.0));
        run(&mut a, &mut ta, 1000, |_, _| {});
        run(&mut b, &mut tb, 1000, |k, s| {
            if k == 250 {
                s.pause();
            }
            if k == 275 {
                s.resume();
            }
        });
        assert!(((ta.r.x - tb.r.x) - 0.1).abs() < 1e-9, "{}", ta.r.x - tb.r.x);
    }

    #[test]
    fn waiting_robot_stays_put_and_turns_are_in_place() {
        let mut s = ScriptRunner::new(vec![[0.0, 3.0]], 0.2, 0.5, false, None);
        let mut tr = RobotTruth::at_rest(1, Vec3::new(0.0, 0.0, 0.0), 0.0);
        run(&mut s, &mut tr, 300, |_, _| {});
        assert_eq!(tr.r, Vec3::zeros());
        s.set_start(6.0);
        let mut max_speed_while_turning: f64 = 0.0;
        for k in 300..1500 {
            let kin = s.step(&mut tr, k as f64 * DT, DT);
            if kin.omega.z != 0.0 {
                max_speed_while_turning = max_speed_while_turning.max(tr.v.norm());
            }
        }
        assert_eq!(max_speed_while_turning, 0.0);
        assert!((tr.yaw() - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
        assert!((tr.r - Vec3::new(0.0, 3.0, 0.0)).norm() < 5e-3);
        assert!(s.is_done());
        assert_eq!(tr.r.z, 0.0);
    }

    #[test]
    fn noiseless_imu_mechanizes_onto_truth() {
        let mut s = ScriptRunner::new(vec![[2.0, 0.0], [2.0, 2.0], [0.0, 0.0]], 0.2, 0.5, true, Some(0.0));
        let mut tr = RobotTruth::at_rest(0, Vec3::zeros(), 0.3);
        let mut nav = NavState::new(tr.c_bn, tr.v, tr.r, 0.0);
        for k in 0..6000 {
            let kin = s.step(&mut tr, k as f64 * DT, DT);
            let imu = ImuSample {
                accel: kin.specific_force,
                gyro: kin.omega,
                dt: DT,
            };
            nav = mechanize(&nav, &imu, &ImuBiases::default());
        }
        assert!((nav.r - tr.r).norm() < 1e-9, "{}", (nav.r - tr.r).norm());
        assert!((nav.c_bn - tr.c_bn).amax() < 1e-12);
        assert_eq!(tr.r.z, 0.0);
    }

    #[test]
    fn angle_wrap() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12
            || (wrap_angle(3.0 * std::f64::consts::PI) + std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(0.1 - 2.0 * std::f64::consts::PI) - 0.1).abs() < 1e-12);
    }
}
