//! Single-robot measurement updates: position/velocity fixes, position-only
//! fixes, odometry velocity and zero-velocity pseudo-measurements.
//!
//! Every update here touches only the updating robot's error state,
//! covariance and its correlation factors toward peers.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{skew, symmetrize, Mat15, Vec3};
use crate::nav::{idx, BeliefBlock, ErrorState, NavState};

pub type Vec6 = SVector<f64, 6>;
pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Jacobian<const K: usize> = SMatrix<f64, K, 15>;

/// Which private measurement is being applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivateKind {
    PosVel,
    PosOnly,
    OdomVel,
    ZeroVel,
}

impl PrivateKind {
    pub fn dim(self) -> usize {
        match self {
            PrivateKind::PosVel | PrivateKind::ZeroVel => 6,
            PrivateKind::PosOnly | PrivateKind::OdomVel => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PrivateKind::PosVel => "gnss",
            PrivateKind::PosOnly => "position",
            PrivateKind::OdomVel => "odometry",
            PrivateKind::ZeroVel => "zupt",
        }
    }
}

/// A private measurement of dimension `K`: innovation inputs plus noise.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivateMeasurement<const K: usize> {
    pub kind: PrivateKind,
    pub z: SVector<f64, K>,
    pub r: SMatrix<f64, K, K>,
}

/// How a private update transforms the correlation factors toward peers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossFactorUpdate {
    /// `σ ← (I−KH) σ (I−KH)ᵀ + K R Kᵀ`, the covariance-style update applied
    /// verbatim to the factor. Does not preserve `σ_AB σ_BAᵀ` as a valid cross
    /// covariance; coupled blocks can lose positive semidefiniteness.
    JosephWithNoise,
    /// `σ ← (I−KH) σ (I−KH)ᵀ`, the same without the additive noise term.
    Joseph,
    /// `σ ← (I−KH) σ`, which keeps `σ_AB σ_BAᵀ` equal to the cross covariance
    /// of the suboptimal joint update that leaves the peer untouched.
    #[default]
    LeftMultiply,
}

/// `z = [v_meas − v; r_meas − r]`
pub fn innovation_posvel(meas_v: &Vec3, meas_r: &Vec3, state: &NavState) -> Vec6 {
    let mut z = Vec6::zeros();
    z.fixed_rows_mut::<3>(0).copy_from(&(meas_v - state.v));
    z.fixed_rows_mut::<3>(3).copy_from(&(meas_r - state.r));
    z
}

/// `z = r_meas − r`
pub fn innovation_posonly(meas_r: &Vec3, state: &NavState) -> Vec3 {
    meas_r - state.r
}

/// `z = v_meas − v` with `v_meas` already rotated into the navigation frame.
pub fn innovation_odomvel(meas_v_nav: &Vec3, state: &NavState) -> Vec3 {
    meas_v_nav - state.v
}

/// `z = [−ω; −v]` where `ω` is the bias-corrected gyro rate while stationary.
pub fn zupt_innovation(omega: &Vec3, v: &Vec3) -> Vec6 {
    let mut z = Vec6::zeros();
    z.fixed_rows_mut::<3>(0).copy_from(&(-omega));
    z.fixed_rows_mut::<3>(3).copy_from(&(-v));
    z
}

fn neg_identity_rows<const K: usize>(blocks: &[(usize, usize)]) -> Jacobian<K> {
    let mut h = Jacobian::<K>::zeros();
    for &(row, col) in blocks {
        for i in 0..3 {
            h[(row + i, col + i)] = -1.0;
        }
    }
    h
}

/// `[0 −I₆ 0]` over velocity and position errors.
pub fn h_posvel() -> Jacobian<6> {
    neg_identity_rows(&[(0, idx::VEL), (3, idx::POS)])
}

/// `[0 0 −I 0 0]`
pub fn h_posonly() -> Jacobian<3> {
    neg_identity_rows(&[(0, idx::POS)])
}

/// `[0 −I 0 0 0]`
pub fn h_odomvel() -> Jacobian<3> {
    neg_identity_rows(&[(0, idx::VEL)])
}

/// `[−[v]ₓ −I 0 0 0]`: the odometry fix is the wheel speed rotated by the
/// *estimated* attitude, so an attitude error tilts it by `−[v]ₓ δψ`.
pub fn h_odomvel_coupled(v_nav: &Vec3) -> Jacobian<3> {
    let mut h = h_odomvel();
    h.fixed_view_mut::<3, 3>(0, idx::ATT).copy_from(&(-skew(v_nav)));
    h
}

/// Rows 0..3 observe the gyro-bias residual, rows 3..6 the velocity error.
pub fn h_zupt() -> Jacobian<6> {
    neg_identity_rows(&[(0, idx::BG), (3, idx::VEL)])
}

/// Diagonal noise covariance from per-axis standard deviations.
pub fn r_from_sigmas<const K: usize>(sigmas: [f64; K]) -> SMatrix<f64, K, K> {
    SMatrix::<f64, K, K>::from_diagonal(&SVector::<f64, K>::from(sigmas.map(|s| s * s)))
}

/// Kalman gain `K = P Hᵀ (H P Hᵀ + R)⁻¹`.
pub fn kalman_gain<const K: usize>(
    p: &Mat15,
    h: &Jacobian<K>,
    r: &SMatrix<f64, K, K>,
) -> Result<SMatrix<f64, 15, K>> {
    let s = symmetrize(&(h * p * h.transpose() + r));
    let chol = s.cholesky().ok_or(Error::InnovationCovSingular)?;
    // Kᵀ = S⁻¹ H P because S and P are symmetric.
    let kt = chol.solve(&(h * p));
    if !kt.iter().all(|x| x.is_finite()) {
        return Err(Error::InnovationCovSingular);
    }
    Ok(kt.transpose())
}

/// Joseph-form covariance update, re-symmetrized.
pub fn joseph<const K: usize>(
    p: &Mat15,
    gain: &SMatrix<f64, 15, K>,
    h: &Jacobian<K>,
    r: &SMatrix<f64, K, K>,
) -> Mat15 {
    let a = Mat15::identity() - gain * h;
    symmetrize(&(a * p * a.transpose() + gain * r * gain.transpose()))
}

/// Generic private Kalman update on one robot's belief.
///
/// Error state and covariance follow the standard gain / Joseph form; every
/// correlation factor is transformed according to `mode`.
pub fn apply_private<const K: usize>(
    belief: &BeliefBlock,
    err: &ErrorState,
    h: &Jacobian<K>,
    z: &SVector<f64, K>,
    r: &SMatrix<f64, K, K>,
    mode: CrossFactorUpdate,
) -> Result<(BeliefBlock, ErrorState)> {
    let gain = kalman_gain(&belief.p, h, r)?;
    let x = err.0 + gain * (z - h * err.0);
    let a = Mat15::identity() - gain * h;
    let krk = gain * r * gain.transpose();
    let mut out = belief.clone();
    out.p = joseph(&belief.p, &gain, h, r);
    for s in out.sigma.values_mut() {
        *s = match mode {
            CrossFactorUpdate::LeftMultiply => a * *s,
            CrossFactorUpdate::JosephWithNoise => a * *s * a.transpose() + krk,
            CrossFactorUpdate::Joseph => a * *s * a.transpose(),
        };
    }
    Ok((out, ErrorState(x)))
}

/// Applies a [`PrivateMeasurement`] with the Jacobian matching its kind.
pub fn apply_measurement<const K: usize>(
    belief: &BeliefBlock,
    err: &ErrorState,
    meas: &PrivateMeasurement<K>,
    h: &Jacobian<K>,
    mode: CrossFactorUpdate,
) -> Result<(BeliefBlock, ErrorState)> {
    debug_assert_eq!(meas.kind.dim(), K);
    apply_private(belief, err, h, &meas.z, &meas.r, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{is_psd, Vec15};
    use crate::nav::fold_correction;
    use crate::nav::ImuBiases;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, scale: f64) -> Mat15 {
        let a = Mat15::from_fn(|_, _| rng.random_range(-1.0..1.0));
        (a * a.transpose() + Mat15::identity() * 0.1) * scale
    }

    #[test]
    fn innovations() {
        let s = NavState::new(
            nalgebra::Matrix3::identity(),
            Vec3::new(0.2, 0.0, 0.0),
            Vec3::new(1.0, 2.0, 0.0),
            0.0,
        );
        assert_eq!(innovation_posvel(&s.v, &s.r, &s), Vec6::zeros());
        let z = innovation_posvel(&Vec3::new(0.25, 0.0, 0.0), &s.r, &s);
        assert!((z[0] - 0.05).abs() < 1e-15);
        assert_eq!(innovation_posonly(&s.r, &s), Vec3::zeros());
        let z = zupt_innovation(&Vec3::new(0.001, 0.0, 0.0), &Vec3::new(0.01, 0.0, 0.02));
        assert_eq!(z, Vec6::from([-0.001, 0.0, 0.0, -0.01, 0.0, -0.02]));
        assert_eq!(zupt_innovation(&Vec3::zeros(), &Vec3::zeros()), Vec6::zeros());
    }

    #[test]
    fn coupled_odometry_jacobian_matches_perturbed_model() {
        // Truth at yaw 0.4 moving forward; the estimate carries small attitude
        // and velocity errors. The exact innovation Ĉ·[s,0,0] − v̂ must match
        // H·x to second order in the error.
        let c = crate::linalg::rot_z(0.4);
        let s = 0.3;
        let v = c * Vec3::new(s, 0.0, 0.0);
        let psi = Vec3::new(1e-4, -2e-4, 3e-4);
        let dv = Vec3::new(1e-4, 5e-5, -2e-5);
        let est = NavState::new(crate::linalg::rotation_from_vector(&psi) * c, v + dv, Vec3::zeros(), 0.0);
        let z = innovation_odomvel(&(est.c_bn * Vec3::new(s, 0.0, 0.0)), &est);
        let mut x = Vec15::zeros();
        x.fixed_rows_mut::<3>(idx::ATT).copy_from(&psi);
        x.fixed_rows_mut::<3>(idx::VEL).copy_from(&dv);
        let hx = h_odomvel_coupled(&v) * x;
        let second_order = 2.0 * s * psi.norm_squared();
        assert!((z - hx).amax() < second_order, "{z} vs {hx}");
        assert!((h_odomvel() * x - z).amax() > 1e-5);
    }

    #[test]
    fn jacobian_shapes() {
        let h = h_posvel();
        let mut e = Vec15::zeros();
        e[idx::VEL] = 1.0;
        assert_eq!((h * e)[0], -1.0);
        for row in h.row_iter() {
            assert_eq!(row.iter().filter(|x| **x != 0.0).count(), 1);
            assert_eq!(row.iter().sum::<f64>(), -1.0);
        }
        let mut att = Vec15::zeros();
        att.fixed_rows_mut::<3>(0).fill(1.0);
        assert_eq!(h * att, Vec6::zeros());

        let hz = h_zupt();
        let mut dv = Vec15::zeros();
        dv.fixed_rows_mut::<3>(idx::VEL).copy_from(&Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(hz * dv, Vec6::from([0.0, 0.0, 0.0, -1.0, -2.0, -3.0]));
        let mut bg = Vec15::zeros();
        bg.fixed_rows_mut::<3>(idx::BG).copy_from(&Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(hz * bg, Vec6::from([-1.0, -2.0, -3.0, 0.0, 0.0, 0.0]));

        let mut dr = Vec15::zeros();
        dr.fixed_rows_mut::<3>(idx::POS).fill(1.0);
        assert_eq!(h_odomvel() * dr, Vec3::zeros());
        assert_eq!(h_posonly() * dr, Vec3::repeat(-1.0));
    }

    #[test]
    fn uninformative_measurement_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = BeliefBlock::new(0, random_spd(&mut rng, 1.0), [1]);
        let e = ErrorState(Vec15::repeat(0.3));
        let r = Mat6::identity() * 1e12;
        let (b2, e2) = apply_private(&b, &e, &h_posvel(), &Vec6::repeat(1.0), &r, CrossFactorUpdate::LeftMultiply).unwrap();
        assert!((b2.p - b.p).amax() < 1e-6);
        assert!((e2.0 - e.0).amax() < 1e-6);
    }

    #[test]
    fn scalar_kalman_oracle() {
        // One observed component, unit prior, H = −1, R = 1, z = 0.5.
        for x_prior in [0.0, 0.2, -0.7] {
            let mut p = Mat15::identity();
            p[(6, 6)] = 1.0;
            let b = BeliefBlock::new(0, p, []);
            let mut x = Vec15::zeros();
            x[6] = x_prior;
            let mut h = Jacobian::<1>::zeros();
            h[(0, 6)] = -1.0;
            let z = SVector::<f64, 1>::new(0.5);
            let r = SMatrix::<f64, 1, 1>::new(1.0);
            let gain = kalman_gain(&b.p, &h, &r).unwrap();
            assert!((gain[(6, 0)] + 0.5).abs() < 1e-15);
            let (b2, e2) = apply_private(&b, &ErrorState(x), &h, &z, &r, CrossFactorUpdate::LeftMultiply).unwrap();
            // Hand-solved: x⁺ = x⁻ − 0.5 (0.5 + x⁻), P⁺ = 0.25·1 + 0.25·1.
            let expected = x_prior - 0.5 * (0.5 + x_prior);
            assert!((e2.0[6] - expected).abs() < 1e-15);
            assert!((b2.p[(6, 6)] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn singular_innovation_covariance_is_reported() {
        let b = BeliefBlock::new(0, Mat15::zeros(), []);
        let r = Mat6::zeros();
        let out = apply_private(&b, &ErrorState::zero(), &h_posvel(), &Vec6::zeros(), &r, CrossFactorUpdate::LeftMultiply);
        assert_eq!(out.unwrap_err(), Error::InnovationCovSingular);
    }

    #[test]
    fn zupt_drives_velocity_to_zero() {
        // Prior velocity uncertainty at the scale left by 30 Hz encoder aiding.
        let mut p = Mat15::identity() * 1e-6;
        for i in 3..6 {
            p[(i, i)] = 1e-4;
        }
        let b = BeliefBlock::new(0, p, []);
        let mut s = NavState::new(
            nalgebra::Matrix3::identity(),
            Vec3::new(0.01, 0.0, 0.02),
            Vec3::zeros(),
            0.0,
        );
        let r = r_from_sigmas([1e-3; 6]);
        let z = zupt_innovation(&Vec3::zeros(), &s.v);
        let (_, e) = apply_private(&b, &ErrorState::zero(), &h_zupt(), &z, &r, CrossFactorUpdate::LeftMultiply).unwrap();
        let (s2, _, _) = fold_correction(&s, &e, &ImuBiases::default());
        s = s2;
        assert!(s.v.norm() < 1e-3, "{}", s.v.norm());
    }

    #[test]
    fn factor_modes_differ_only_by_right_factor_and_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut b = BeliefBlock::new(0, random_spd(&mut rng, 0.1), [1]);
        b.sigma.insert(1, Mat15::from_fn(|_, _| rng.random_range(-0.1..0.1)));
        let r = r_from_sigmas([0.1; 3]);
        let z = Vec3::new(0.1, 0.0, -0.1);
        let (left, _) = apply_private(&b, &ErrorState::zero(), &h_posonly(), &z, &r, CrossFactorUpdate::LeftMultiply).unwrap();
        let (joseph_mode, _) = apply_private(&b, &ErrorState::zero(), &h_posonly(), &z, &r, CrossFactorUpdate::JosephWithNoise).unwrap();
        let gain = kalman_gain(&b.p, &h_posonly(), &r).unwrap();
        let a = Mat15::identity() - gain * h_posonly();
        assert!((left.sigma[&1] - a * b.sigma[&1]).amax() < 1e-14);
        let printed = a * b.sigma[&1] * a.transpose() + gain * r * gain.transpose();
        assert!((joseph_mode.sigma[&1] - printed).amax() < 1e-14);
        assert_eq!(left.p, joseph_mode.p);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn joseph_equals_short_form_and_shrinks_trace(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = rng.random_range(0.01..10.0);
            let p = random_spd(&mut rng, scale);
            let r = r_from_sigmas([rng.random_range(0.01..1.0); 6]);
            let h = h_posvel();
            let gain = kalman_gain(&p, &h, &r).unwrap();
            let long = joseph(&p, &gain, &h, &r);
            let short = (Mat15::identity() - gain * h) * p;
            prop_assert!((long - short).amax() < 1e-9 * p.amax().max(1.0));
            prop_assert!(long.trace() <= p.trace() + 1e-12);
            prop_assert!(is_psd(&long, 1e-9));
        }
    }
}
