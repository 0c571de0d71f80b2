//! One relative update between two robots, step by step: couple the beliefs,
//! fuse a UWB range, split the posterior, install each side.
//!
//! `cargo run --example two_robot_range`

use coopzu::linalg::{min_eigenvalue, Mat15, Vec15, Vec3};
use coopzu::nav::{BeliefBlock, ErrorState, NavState};
use coopzu::relative::{couple, decompose, install_side, relative_update, AbsentFactorOrder, RangeMeasurement};

fn p0(pos_sigma: f64) -> Mat15 {
    let mut d = Vec15::from_element(1e-4);
    for i in 6..9 {
        d[i] = pos_sigma * pos_sigma;
    }
    Mat15::from_diagonal(&d)
}

fn main() -> coopzu::Result<()> {
    // A is well localized, B is not; B also shares a factor with a third robot.
    let nav_a = NavState::at_rest(Vec3::new(0.0, 0.0, 0.0), 0.0, 0.0);
    let nav_b = NavState::at_rest(Vec3::new(2.0, 0.5, 0.0), 0.0, 0.0);
    let bel_a = BeliefBlock::new(0, p0(0.05), [1, 2]);
    let bel_b = BeliefBlock::new(1, p0(1.0), [0, 2]);
    let (err_a, err_b) = (ErrorState::zero(), ErrorState::zero());

    let c = couple(&bel_a, &err_a, &bel_b, &err_b)?;
    println!("before: trace P_A {:.4}, trace P_B {:.4}", c.p_a().trace(), c.p_b().trace());

    // The true distance is 1.8 m; B's estimate puts it at ~2.06 m.
    let upd = relative_update(&c, &RangeMeasurement { z: 1.8, r: 0.05 * 0.05 }, &nav_a, &nav_b)?;
    println!("innovation {:.4} m, NIS {:.2}", upd.innovation, upd.nis);
    println!(
        "after:  trace P_A {:.4}, trace P_B {:.4}, λ_min(joint) {:.2e}",
        upd.coupled.p_a().trace(),
        upd.coupled.p_b().trace(),
        min_eigenvalue(&upd.coupled.p)
    );

    let (mine, theirs) = decompose(&upd.coupled);
    let (new_a, x_a, _) = install_side(&bel_a, &mine, 1, AbsentFactorOrder::default());
    let (new_b, x_b, _) = install_side(&bel_b, &theirs, 0, AbsentFactorOrder::default());
    let rebuilt = new_a.sigma[&1] * new_b.sigma[&0].transpose();
    println!(
        "‖σ_AB σ_BAᵀ − Σ_AB‖ = {:.1e}",
        (rebuilt - upd.coupled.cross_ab()).norm()
    );
    println!("B position error estimate: {:.4?}", x_b.dr().as_slice());
    println!("A position error estimate: {:.4?}", x_a.dr().as_slice());
    println!("B factor toward robot 2 rescaled: ‖σ_B2‖ = {:.4}", new_b.sigma[&2].norm());
    Ok(())
}
