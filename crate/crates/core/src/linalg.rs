//! Fixed-size matrix aliases and small numerical helpers shared by the filter.

use nalgebra::{DMatrix, SMatrix, SVector, SymmetricEigen};

pub type Vec3 = SVector<f64, 3>;
pub type Mat3 = SMatrix<f64, 3, 3>;
pub type Vec15 = SVector<f64, 15>;
pub type Mat15 = SMatrix<f64, 15, 15>;
pub type Vec30 = SVector<f64, 30>;
pub type Mat30 = SMatrix<f64, 30, 30>;

/// Dimension of the per-robot error state.
pub const ERR_DIM: usize = 15;

/// Skew-symmetric (cross-product) matrix, `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Gram–Schmidt reorthonormalization of a near-rotation matrix.
///
/// Columns are processed in order x, y and then z is rebuilt as x × y, so the
/// result is always a proper rotation (det = +1).
pub fn orthonormalize(c: &Mat3) -> Mat3 {
    let x = c.column(0).into_owned().normalize();
    let y_raw = c.column(1).into_owned();
    let y = (y_raw - x * x.dot(&y_raw)).normalize();
    let z = x.cross(&y);
    Mat3::from_columns(&[x, y, z])
}

/// `‖CᵀC − I‖_F`
pub fn orthonormality_defect(c: &Mat3) -> f64 {
    (c.transpose() * c - Mat3::identity()).norm()
}

/// `(P + Pᵀ) / 2`
pub fn symmetrize<const N: usize>(p: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (p + p.transpose()) * 0.5
}

/// Largest absolute entry of `P − Pᵀ`.
pub fn asymmetry<const N: usize>(p: &SMatrix<f64, N, N>) -> f64 {
    (p - p.transpose()).amax()
}

/// Smallest eigenvalue of the symmetric part of `p`.
pub fn min_eigenvalue<const N: usize>(p: &SMatrix<f64, N, N>) -> f64 {
    let sym = symmetrize(p);
    SymmetricEigen::new(DMatrix::from_column_slice(N, N, sym.as_slice()))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// PSD test with a trace-relative tolerance: `λ_min > −tol · max(trace, 1e-300)`.
pub fn is_psd<const N: usize>(p: &SMatrix<f64, N, N>, rel_tol: f64) -> bool {
    let tr = p.trace().abs().max(1e-300);
    min_eigenvalue(p) > -rel_tol * tr
}

/// Roll/pitch/yaw (radians) of a body→ENU rotation, using the ZYX convention
/// `C = Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn euler_from_dcm(c: &Mat3) -> (f64, f64, f64) {
    let pitch = (-c[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = c[(2, 1)].atan2(c[(2, 2)]);
    let yaw = c[(1, 0)].atan2(c[(0, 0)]);
    (roll, pitch, yaw)
}

/// Rotation about the up axis.
pub fn rot_z(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Exact rotation matrix for a rotation vector (Rodrigues).
pub fn rotation_from_vector(phi: &Vec3) -> Mat3 {
    let angle = phi.norm();
    if angle < 1e-12 {
        return Mat3::identity() + skew(phi);
    }
    let k = skew(&(phi / angle));
    Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Small-angle attitude error ψ such that `estimate ≈ (I + skew(ψ)) · truth`.
pub fn attitude_error(estimate: &Mat3, truth: &Mat3) -> Vec3 {
    let d = estimate * truth.transpose();
    let a = (d - d.transpose()) * 0.5;
    Vec3::new(a[(2, 1)], a[(0, 2)], a[(1, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skew_is_cross_product() {
        let a = Vec3::new(1.0, -2.0, 0.5);
        let b = Vec3::new(0.3, 0.7, -1.1);
        assert!((skew(&a) * b - a.cross(&b)).norm() < 1e-15);
        assert!((skew(&a) + skew(&a).transpose()).norm() < 1e-15);
    }

    #[test]
    fn orthonormalize_repairs_perturbed_rotation() {
        let mut c = rot_z(0.3);
        c[(0, 1)] += 1e-3;
        c[(2, 0)] -= 2e-3;
        let o = orthonormalize(&c);
        assert!(orthonormality_defect(&o) < 1e-14);
        assert!((o.determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn euler_round_trip_yaw() {
        let (roll, pitch, yaw) = euler_from_dcm(&rot_z(1.2));
        assert!(roll.abs() < 1e-15 && pitch.abs() < 1e-15);
        assert!((yaw - 1.2).abs() < 1e-15);
    }

    #[test]
    fn attitude_error_recovers_small_rotation() {
        let truth = rot_z(0.4);
        let psi = Vec3::new(1e-4, -2e-4, 3e-4);
        let est = rotation_from_vector(&psi) * truth;
        assert!((attitude_error(&est, &truth) - psi).norm() < 1e-11);
    }

    #[test]
    fn psd_check() {
        let mut p = SMatrix::<f64, 3, 3>::identity();
        assert!(is_psd(&p, 1e-9));
        p[(2, 2)] = -0.1;
        assert!(!is_psd(&p, 1e-9));
    }
}
