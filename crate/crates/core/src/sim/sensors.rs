//! Noisy sensor synthesis.
//!
//! Each (robot, sensor) pair draws from its own ChaCha stream, so switching
//! one robot's behaviour never shifts another robot's noise sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::Vec3;
use crate::nav::{ImuSample, RobotId};
use crate::relative::RangeMeasurement;

use super::config::SensorModel;
use super::truth::{RobotTruth, StepKinematics};

/// Stream tags; one independent stream per (robot, tag).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Imu = 0,
    Encoder = 1,
    Gnss = 2,
    Uwb = 3,
    /// Initial belief offsets.
    Init = 4,
    /// True sensor biases.
    Bias = 5,
}

pub fn stream(seed: u64, robot: RobotId, tag: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(robot) * 16 + tag as u64);
    rng
}

/// Per-robot bundle of sensor streams.
#[derive(Clone, Debug)]
pub struct SensorStreams {
    pub imu: ChaCha8Rng,
    pub encoder: ChaCha8Rng,
    pub gnss: ChaCha8Rng,
    pub uwb: ChaCha8Rng,
}

impl SensorStreams {
    pub fn new(seed: u64, robot: RobotId) -> Self {
        Self {
            imu: stream(seed, robot, Stream::Imu),
            encoder: stream(seed, robot, Stream::Encoder),
            gnss: stream(seed, robot, Stream::Gnss),
            uwb: stream(seed, robot, Stream::Uwb),
        }
    }
}

/// Zero-mean Gaussian draw; `sigma = 0` gives exactly zero.
pub fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite σ").sample(rng)
}

pub fn gauss3(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3 {
    Vec3::new(gauss(rng, sigma), gauss(rng, sigma), gauss(rng, sigma))
}

/// `a = Cᵀ(v̇ − g) + b_a + n_a`, `ω = Cᵀω_true + b_g + n_g`.
pub fn sample_imu(kin: &StepKinematics, truth: &RobotTruth, model: &SensorModel, rng: &mut ChaCha8Rng) -> ImuSample {
    ImuSample {
        accel: kin.specific_force + truth.b_a + gauss3(rng, model.accel_sigma),
        gyro: kin.omega + truth.b_g + gauss3(rng, model.gyro_sigma),
        dt: kin.dt,
    }
}

/// Forward wheel speed. Wheels that are not turning read exactly zero.
pub fn sample_encoder(truth: &RobotTruth, model: &SensorModel, rng: &mut ChaCha8Rng) -> f64 {
    let s = truth.forward_speed();
    if s.abs() < 1e-12 {
        0.0
    } else {
        s + gauss(rng, model.encoder_sigma)
    }
}

/// `(velocity, position)` fix.
pub fn sample_gnss(truth: &RobotTruth, model: &SensorModel, rng: &mut ChaCha8Rng) -> (Vec3, Vec3) {
    let v = truth.v + gauss3(rng, model.gnss_vel_sigma);
    let r = truth.r + gauss3(rng, model.gnss_pos_sigma);
    (v, r)
}

/// Range between two robots, or `None` beyond the gate.
pub fn sample_uwb(
    a: &RobotTruth,
    b: &RobotTruth,
    model: &SensorModel,
    rng: &mut ChaCha8Rng,
    gate: f64,
    filter_variance: f64,
) -> Option<RangeMeasurement> {
    let d = (a.r - b.r).norm();
    if d > gate {
        return None;
    }
    Some(RangeMeasurement {
        z: d + gauss(rng, model.uwb_sigma),
        r: filter_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nav::gravity;
    use rand::Rng;

    fn still() -> (StepKinematics, RobotTruth) {
        let tr = RobotTruth::at_rest(0, Vec3::zeros(), 0.0);
        let kin = StepKinematics {
            specific_force: -gravity(),
            omega: Vec3::zeros(),
            dt: 0.02,
        };
        (kin, tr)
    }

    #[test]
    fn stationary_noiseless_imu_reads_gravity_reaction() {
        let (kin, tr) = still();
        let model = SensorModel {
            accel_sigma: 0.0,
            gyro_sigma: 0.0,
            ..SensorModel::default()
        };
        let s = sample_imu(&kin, &tr, &model, &mut stream(1, 0, Stream::Imu));
        assert_eq!(s.accel, Vec3::new(0.0, 0.0, 9.81));
        assert_eq!(s.gyro, Vec3::zeros());
    }

    #[test]
    fn imu_noise_statistics() {
        let (kin, mut tr) = still();
        tr.b_a = Vec3::new(0.003, -0.002, 0.001);
        let model = SensorModel::default();
        let mut rng = stream(7, 2, Stream::Imu);
        let n = 100_000;
        let mut sum = Vec3::zeros();
        let mut sq = 0.0;
        for _ in 0..n {
            let s = sample_imu(&kin, &tr, &model, &mut rng);
            sum += s.accel;
            sq += (s.accel.x - tr.b_a.x).powi(2);
        }
        let mean = sum / n as f64;
        let expect = tr.b_a - gravity();
        let tol = 4.0 * model.accel_sigma / (n as f64).sqrt();
        assert!((mean - expect).amax() < tol, "{mean} vs {expect}");
        let sd = (sq / n as f64).sqrt();
        assert!((sd - 0.001).abs() < 2e-5, "{sd}");
    }

    #[test]
    fn uwb_gate_and_exact_range() {
        let a = RobotTruth::at_rest(0, Vec3::zeros(), 0.0);
        let far = RobotTruth::at_rest(1, Vec3::new(3.0, 0.0, 0.0), 0.0);
        let near = RobotTruth::at_rest(1, Vec3::new(0.6, 0.8, 0.0), 0.0);
        let exact = SensorModel {
            uwb_sigma: 0.0,
            ..SensorModel::default()
        };
        let mut rng = stream(1, 0, Stream::Uwb);
        assert!(sample_uwb(&a, &far, &exact, &mut rng, 2.5, 1e-4).is_none());
        let m = sample_uwb(&a, &near, &exact, &mut rng, 2.5, 1e-4).unwrap();
        assert_eq!(m.z, 1.0);
        assert!(sample_uwb(&a, &near, &exact, &mut rng, 0.9, 1e-4).is_none());
    }

    #[test]
    fn stopped_wheels_read_zero() {
        let tr = RobotTruth::at_rest(0, Vec3::zeros(), 0.7);
        let mut rng = stream(1, 0, Stream::Encoder);
        for _ in 0..100 {
            assert_eq!(sample_encoder(&tr, &SensorModel::default(), &mut rng), 0.0);
        }
    }

    #[test]
    fn streams_are_independent_per_robot_and_sensor() {
        let draws = |robot, tag| {
            let mut r = stream(42, robot, tag);
            (0..4).map(|_| r.random::<u64>()).collect::<Vec<_>>()
        };
        assert_eq!(draws(0, Stream::Imu), draws(0, Stream::Imu));
        assert_ne!(draws(0, Stream::Imu), draws(1, Stream::Imu));
        assert_ne!(draws(0, Stream::Imu), draws(0, Stream::Encoder));
    }
}
