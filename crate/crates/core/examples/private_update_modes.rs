//! A private GNSS update on a robot that is correlated with a peer, under each
//! correlation-factor rule. Prints the smallest eigenvalue of the rebuilt
//! joint covariance: negative means the pair is no longer a valid Gaussian.
//!
//! `cargo run --example private_update_modes [trials]`

use coopzu::linalg::{min_eigenvalue, Mat15, Mat30};
use coopzu::nav::{BeliefBlock, ErrorState};
use coopzu::private::{apply_private, h_posvel, r_from_sigmas, CrossFactorUpdate};
use nalgebra::SVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn joint(a: &BeliefBlock, b: &BeliefBlock) -> Mat30 {
    let mut p = Mat30::zeros();
    let cross = a.sigma[&b.own_id] * b.sigma[&a.own_id].transpose();
    p.fixed_view_mut::<15, 15>(0, 0).copy_from(&a.p);
    p.fixed_view_mut::<15, 15>(15, 15).copy_from(&b.p);
    p.fixed_view_mut::<15, 15>(0, 15).copy_from(&cross);
    p.fixed_view_mut::<15, 15>(15, 0).copy_from(&cross.transpose());
    p
}

/// Two beliefs split from a random full-rank joint covariance.
fn correlated(rng: &mut ChaCha8Rng) -> (BeliefBlock, BeliefBlock) {
    let l = Mat30::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let p = l * l.transpose() + Mat30::identity() * 1e-3;
    let mut a = BeliefBlock::new(0, p.fixed_view::<15, 15>(0, 0).into_owned(), [1]);
    let mut b = BeliefBlock::new(1, p.fixed_view::<15, 15>(15, 15).into_owned(), [0]);
    a.sigma.insert(1, Mat15::identity());
    b.sigma.insert(0, p.fixed_view::<15, 15>(15, 0).into_owned());
    (a, b)
}

fn main() -> coopzu::Result<()> {
    let trials: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let r = r_from_sigmas([0.05, 0.05, 0.05, 0.02, 0.02, 0.02]);
    for mode in [CrossFactorUpdate::LeftMultiply, CrossFactorUpdate::Joseph, CrossFactorUpdate::JosephWithNoise] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut worst, mut bad) = (f64::INFINITY, 0);
        for _ in 0..trials {
            let (a, b) = correlated(&mut rng);
            let z = SVector::<f64, 6>::from_fn(|_, _| rng.random_range(-0.1..0.1));
            let (a2, _) = apply_private(&a, &ErrorState::zero(), &h_posvel(), &z, &r, mode)?;
            let p = joint(&a2, &b);
            let ratio = min_eigenvalue(&p) / p.trace();
            worst = worst.min(ratio);
            bad += usize::from(ratio < -1e-9);
        }
        println!("{mode:?}: {bad}/{trials} joint covariances indefinite, worst λ_min/trace {worst:.2e}");
    }
    Ok(())
}
