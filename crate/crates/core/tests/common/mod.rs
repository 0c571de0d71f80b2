//! A monolithic joint EKF over several stacked 15-state robots, written with
//! plain matrix algebra so it shares no update code with the crate.

#![allow(dead_code)]

use coopzu::linalg::Mat15;
use coopzu::private::Jacobian;
use nalgebra::{SMatrix, SVector};

pub struct JointEkf<const N: usize> {
    pub x: SVector<f64, N>,
    pub p: SMatrix<f64, N, N>,
}

impl<const N: usize> JointEkf<N> {
    pub fn new(blocks: &[Mat15]) -> Self {
        assert_eq!(blocks.len() * 15, N);
        let mut p = SMatrix::<f64, N, N>::zeros();
        for (k, b) in blocks.iter().enumerate() {
            p.fixed_view_mut::<15, 15>(15 * k, 15 * k).copy_from(b);
        }
        Self {
            x: SVector::zeros(),
            p,
        }
    }

    pub fn block(&self, i: usize, j: usize) -> Mat15 {
        self.p.fixed_view::<15, 15>(15 * i, 15 * j).into_owned()
    }

    pub fn propagate(&mut self, phi: &[Mat15], q: &[Mat15]) {
        let mut big_phi = SMatrix::<f64, N, N>::zeros();
        let mut big_q = SMatrix::<f64, N, N>::zeros();
        for k in 0..phi.len() {
            big_phi.fixed_view_mut::<15, 15>(15 * k, 15 * k).copy_from(&phi[k]);
            big_q.fixed_view_mut::<15, 15>(15 * k, 15 * k).copy_from(&q[k]);
        }
        self.x = big_phi * self.x;
        let p = big_phi * self.p * big_phi.transpose() + big_q;
        self.p = (p + p.transpose()) * 0.5;
    }

    /// Update with the optimal joint gain.
    pub fn update<const K: usize>(&mut self, h: &SMatrix<f64, K, N>, z: &SVector<f64, K>, r: &SMatrix<f64, K, K>) {
        let gain = self.gain(h, r);
        self.apply(h, z, r, &gain);
    }

    /// Update whose gain is zeroed outside robot `own`'s rows.
    pub fn update_one_sided<const K: usize>(
        &mut self,
        h: &SMatrix<f64, K, N>,
        z: &SVector<f64, K>,
        r: &SMatrix<f64, K, K>,
        own: usize,
    ) {
        let mut gain = self.gain(h, r);
        for i in 0..N {
            if i / 15 != own {
                for j in 0..K {
                    gain[(i, j)] = 0.0;
                }
            }
        }
        self.apply(h, z, r, &gain);
    }

    fn gain<const K: usize>(&self, h: &SMatrix<f64, K, N>, r: &SMatrix<f64, K, K>) -> SMatrix<f64, N, K> {
        let s = h * self.p * h.transpose() + r;
        let s_inv = s.try_inverse().expect("innovation covariance invertible");
        self.p * h.transpose() * s_inv
    }

    fn apply<const K: usize>(
        &mut self,
        h: &SMatrix<f64, K, N>,
        z: &SVector<f64, K>,
        r: &SMatrix<f64, K, K>,
        gain: &SMatrix<f64, N, K>,
    ) {
        self.x += gain * (z - h * self.x);
        let a = SMatrix::<f64, N, N>::identity() - gain * h;
        let p = a * self.p * a.transpose() + gain * r * gain.transpose();
        self.p = (p + p.transpose()) * 0.5;
    }
}

/// Places a single-robot Jacobian in robot `robot`'s columns.
pub fn embed<const K: usize, const N: usize>(h: &Jacobian<K>, robot: usize) -> SMatrix<f64, K, N> {
    let mut big = SMatrix::<f64, K, N>::zeros();
    big.fixed_view_mut::<K, 15>(0, 15 * robot).copy_from(h);
    big
}

/// Range row over the joint state: with position errors defined as estimate
/// minus truth, `z ≈ |r̂_a − r̂_b| − u·(δr_a − δr_b)`, `u` the unit vector
/// from `b` to `a`.
pub fn range_row<const N: usize>(ra: &coopzu::linalg::Vec3, rb: &coopzu::linalg::Vec3, a: usize, b: usize) -> SMatrix<f64, 1, N> {
    let u = (ra - rb) / (ra - rb).norm();
    let mut h = SMatrix::<f64, 1, N>::zeros();
    for j in 0..3 {
        h[(0, 15 * a + 6 + j)] = -u[j];
        h[(0, 15 * b + 6 + j)] = u[j];
    }
    h
}

/// `‖a − b‖ / ‖b‖`, zero when the two agree exactly.
pub fn rel_err(diff: f64, reference: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff / reference.max(f64::MIN_POSITIVE)
    }
}
