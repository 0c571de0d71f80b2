//! Strapdown mechanization and error-state time propagation.
//!
//! The navigation frame is a local East-North-Up frame. Earth rotation and
//! transport rate are neglected, which is adequate for slow ground robots with
//! MEMS-grade sensors.
//!
//! Error-state sign convention, used by every measurement model in the crate:
//!
//! * `dpsi`: estimated attitude ≈ `(I + skew(dpsi)) · true attitude`
//! * `dv`, `dr`: estimate minus truth
//! * `b_a`, `b_g`: bias *residual* still present in the bias-corrected IMU
//!   output, i.e. true bias minus the accumulated bias estimate
//!
//! With that convention all direct observations have Jacobian blocks of `−I`
//! and a correction is folded into the total state by subtraction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::linalg::{orthonormalize, skew, symmetrize, Mat15, Mat3, Vec15, Vec3};

pub type RobotId = u32;

/// Gravity in the ENU frame (m/s²).
pub const GRAVITY_ENU: [f64; 3] = [0.0, 0.0, -9.81];

pub fn gravity() -> Vec3 {
    Vec3::from(GRAVITY_ENU)
}

/// Total navigation state: attitude, velocity and position in ENU.
#[derive(Clone, Debug, PartialEq)]
pub struct NavState {
    /// Body→navigation rotation.
    pub c_bn: Mat3,
    pub v: Vec3,
    pub r: Vec3,
    pub t: f64,
}

impl NavState {
    pub fn new(c_bn: Mat3, v: Vec3, r: Vec3, t: f64) -> Self {
        Self { c_bn, v, r, t }
    }

    pub fn at_rest(r: Vec3, yaw: f64, t: f64) -> Self {
        Self::new(crate::linalg::rot_z(yaw), Vec3::zeros(), r, t)
    }
}

/// Index ranges of the error-state blocks.
pub mod idx {
    pub const ATT: usize = 0;
    pub const VEL: usize = 3;
    pub const POS: usize = 6;
    pub const BA: usize = 9;
    pub const BG: usize = 12;
}

/// 15-dim error state ordered `[dpsi, dv, dr, b_a, b_g]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorState(pub Vec15);

impl Default for ErrorState {
    fn default() -> Self {
        Self::zero()
    }
}

impl ErrorState {
    pub fn zero() -> Self {
        Self(Vec15::zeros())
    }

    fn block(&self, start: usize) -> Vec3 {
        self.0.fixed_rows::<3>(start).into_owned()
    }

    pub fn dpsi(&self) -> Vec3 {
        self.block(idx::ATT)
    }
    pub fn dv(&self) -> Vec3 {
        self.block(idx::VEL)
    }
    pub fn dr(&self) -> Vec3 {
        self.block(idx::POS)
    }
    pub fn b_a(&self) -> Vec3 {
        self.block(idx::BA)
    }
    pub fn b_g(&self) -> Vec3 {
        self.block(idx::BG)
    }

    pub fn from_blocks(dpsi: Vec3, dv: Vec3, dr: Vec3, b_a: Vec3, b_g: Vec3) -> Self {
        let mut x = Vec15::zeros();
        x.fixed_rows_mut::<3>(idx::ATT).copy_from(&dpsi);
        x.fixed_rows_mut::<3>(idx::VEL).copy_from(&dv);
        x.fixed_rows_mut::<3>(idx::POS).copy_from(&dr);
        x.fixed_rows_mut::<3>(idx::BA).copy_from(&b_a);
        x.fixed_rows_mut::<3>(idx::BG).copy_from(&b_g);
        Self(x)
    }
}

/// Accumulated IMU bias estimates, removed from raw samples before use.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ImuBiases {
    pub accel: Vec3,
    pub gyro: Vec3,
}

/// One robot's covariance plus its correlation factors toward every peer.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefBlock {
    pub own_id: RobotId,
    pub p: Mat15,
    pub sigma: BTreeMap<RobotId, Mat15>,
}

impl BeliefBlock {
    /// New belief with zero correlation factors toward every listed peer.
    pub fn new(own_id: RobotId, p: Mat15, peers: impl IntoIterator<Item = RobotId>) -> Self {
        let sigma = peers
            .into_iter()
            .filter(|&id| id != own_id)
            .map(|id| (id, Mat15::zeros()))
            .collect();
        Self { own_id, p, sigma }
    }

    /// In-place version of [`propagate`] for the covariance and factors.
    pub fn propagate(&mut self, phi: &Mat15, q: &Mat15) {
        self.p = symmetrize(&(phi * self.p * phi.transpose() + q));
        for s in self.sigma.values_mut() {
            *s = phi * *s;
        }
    }
}

/// Bias-corrected-or-raw IMU sample in the body frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    /// Specific force (m/s²).
    pub accel: Vec3,
    /// Angular rate (rad/s).
    pub gyro: Vec3,
    /// Sampling interval (s), strictly positive.
    pub dt: f64,
}

/// Inertial sensor error parameters used to build the process noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Angular random walk (rad/√s).
    pub arw: f64,
    /// Velocity random walk (m/s/√s).
    pub vrw: f64,
    /// Gyro bias random-walk strength (rad/s).
    pub gyro_bias_instab: f64,
    /// Accelerometer bias random-walk strength (m/s²).
    pub accel_bias_instab: f64,
}

impl NoiseSpec {
    pub fn is_valid(&self) -> bool {
        [self.arw, self.vrw, self.gyro_bias_instab, self.accel_bias_instab]
            .iter()
            .all(|x| x.is_finite() && *x >= 0.0)
    }
}

/// `C(+) = C(−)(I + skew(ω − b_g)Δt)`, reorthonormalized.
pub fn attitude_update(state: &NavState, imu: &ImuSample, bias_g: &Vec3) -> NavState {
    let omega = imu.gyro - bias_g;
    let c = state.c_bn * (Mat3::identity() + skew(&omega) * imu.dt);
    NavState {
        c_bn: orthonormalize(&c),
        ..state.clone()
    }
}

/// `v(+) = v(−) + (C·(a − b_a) + g)Δt` with `C` supplied by the caller
/// (the pre-update attitude within a mechanization cycle).
pub fn velocity_update(state: &NavState, c_bn: &Mat3, imu: &ImuSample, bias_a: &Vec3) -> NavState {
    let a = imu.accel - bias_a;
    NavState {
        v: state.v + (c_bn * a + gravity()) * imu.dt,
        ..state.clone()
    }
}

/// Trapezoidal position integration, `r(+) = r(−) + Δt/2 (v(−) + v(+))`.
pub fn position_update(state: &NavState, v_minus: &Vec3, dt: f64) -> NavState {
    NavState {
        r: state.r + (v_minus + state.v) * (dt * 0.5),
        ..state.clone()
    }
}

/// One full mechanization cycle: attitude, velocity (with the pre-update
/// attitude), position, then the timestamp advances by `dt`.
pub fn mechanize(state: &NavState, imu: &ImuSample, biases: &ImuBiases) -> NavState {
    let c_minus = state.c_bn;
    let v_minus = state.v;
    let s = attitude_update(state, imu, &biases.gyro);
    let s = velocity_update(&s, &c_minus, imu, &biases.accel);
    let mut s = position_update(&s, &v_minus, imu.dt);
    s.t += imu.dt;
    s
}

/// Linearized error dynamics.
///
/// Nonzero blocks: `[0:3,12:15] = C`, `[3:6,0:3] = skew(−C a)`,
/// `[3:6,9:12] = C`, `[6:9,3:6] = I`.
pub fn build_f(c_bn: &Mat3, accel_corrected: &Vec3) -> Mat15 {
    let mut f = Mat15::zeros();
    f.fixed_view_mut::<3, 3>(idx::ATT, idx::BG).copy_from(c_bn);
    f.fixed_view_mut::<3, 3>(idx::VEL, idx::ATT)
        .copy_from(&skew(&(-(c_bn * accel_corrected))));
    f.fixed_view_mut::<3, 3>(idx::VEL, idx::BA).copy_from(c_bn);
    f.fixed_view_mut::<3, 3>(idx::POS, idx::VEL)
        .copy_from(&Mat3::identity());
    f
}

/// First-order transition matrix `Φ = I + FΔt`.
pub fn build_phi(f: &Mat15, dt: f64) -> Mat15 {
    Mat15::identity() + f * dt
}

/// Block-diagonal process noise for one propagation interval.
///
/// The position block is zero; position uncertainty grows only through `Φ`.
pub fn build_q(noise: &NoiseSpec, dt: f64) -> Mat15 {
    let mut q = Mat15::zeros();
    let blocks = [
        (idx::ATT, noise.arw * noise.arw),
        (idx::VEL, noise.vrw * noise.vrw),
        (idx::BA, noise.accel_bias_instab * noise.accel_bias_instab),
        (idx::BG, noise.gyro_bias_instab * noise.gyro_bias_instab),
    ];
    for (start, psd) in blocks {
        for i in start..start + 3 {
            q[(i, i)] = psd * dt;
        }
    }
    q
}

/// `x⁻ = Φx⁺`, `P⁻ = ΦP⁺Φᵀ + Q` (re-symmetrized), `σ⁻ = Φσ⁺` for every peer.
pub fn propagate(
    belief: &BeliefBlock,
    err: &ErrorState,
    phi: &Mat15,
    q: &Mat15,
) -> (BeliefBlock, ErrorState) {
    let mut b = belief.clone();
    b.propagate(phi, q);
    (b, ErrorState(phi * err.0))
}

/// Closed-loop correction: fold the estimated error into the total state and
/// bias estimates, then reset the whole error state to zero.
pub fn fold_correction(
    state: &NavState,
    err: &ErrorState,
    biases: &ImuBiases,
) -> (NavState, ErrorState, ImuBiases) {
    let c = (Mat3::identity() - skew(&err.dpsi())) * state.c_bn;
    let nav = NavState {
        c_bn: orthonormalize(&c),
        v: state.v - err.dv(),
        r: state.r - err.dr(),
        t: state.t,
    };
    let b = ImuBiases {
        accel: biases.accel + err.b_a(),
        gyro: biases.gyro + err.b_g(),
    };
    (nav, ErrorState::zero(), b)
}
