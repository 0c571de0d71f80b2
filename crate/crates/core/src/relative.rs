//! Pairwise range update between two robots.
//!
//! The detecting robot `A` couples its belief with the detected robot `B`
//! into a 30-dim joint system, runs a scalar Kalman update on the range, and
//! splits the posterior back into per-robot beliefs. Cross covariance between
//! the two is carried as the factor product `σ_AB σ_BAᵀ`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_psd, min_eigenvalue, symmetrize, Mat15, Mat30, Vec15, Vec3, Vec30};
use crate::nav::{idx, BeliefBlock, ErrorState, NavState, RobotId};

/// Relative tolerance for the PSD test on the coupled covariance.
pub const PSD_REL_TOL: f64 = 1e-9;
/// Below this separation the range Jacobian is undefined.
pub const MIN_SEPARATION: f64 = 1e-6;

pub type RangeRow = SMatrix<f64, 1, 30>;

/// Joint belief of a detecting robot `A` and a detected robot `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledBelief {
    pub p: Mat30,
    pub x: Vec30,
    /// `(A, B)`; `A` is the detecting robot.
    pub ids: (RobotId, RobotId),
}

impl CoupledBelief {
    pub fn p_a(&self) -> Mat15 {
        self.p.fixed_view::<15, 15>(0, 0).into_owned()
    }
    pub fn p_b(&self) -> Mat15 {
        self.p.fixed_view::<15, 15>(15, 15).into_owned()
    }
    /// `Σ_AB`, the top-right block.
    pub fn cross_ab(&self) -> Mat15 {
        self.p.fixed_view::<15, 15>(0, 15).into_owned()
    }
    /// `Σ_BA`, the bottom-left block.
    pub fn cross_ba(&self) -> Mat15 {
        self.p.fixed_view::<15, 15>(15, 0).into_owned()
    }
}

/// One UWB range sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeMeasurement {
    pub z: f64,
    /// Variance (m²).
    pub r: f64,
}

/// Order of the covariance map applied to factors toward robots absent from
/// a relative update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsentFactorOrder {
    /// `σ ← P⁻ (P⁺)⁻¹ σ`
    #[default]
    PriorTimesPosteriorInverse,
    /// `σ ← P⁺ (P⁻)⁻¹ σ`
    PosteriorTimesPriorInverse,
}

/// Assembles `[[P_A, σ_AB σ_BAᵀ], [·ᵀ, P_B]]` and the stacked error state.
pub fn couple(
    belief_a: &BeliefBlock,
    err_a: &ErrorState,
    belief_b: &BeliefBlock,
    err_b: &ErrorState,
) -> Result<CoupledBelief> {
    let (a, b) = (belief_a.own_id, belief_b.own_id);
    let sigma_ab = belief_a
        .sigma
        .get(&b)
        .ok_or(Error::MissingFactor { robot: a, peer: b })?;
    let sigma_ba = belief_b
        .sigma
        .get(&a)
        .ok_or(Error::MissingFactor { robot: b, peer: a })?;
    let cross = sigma_ab * sigma_ba.transpose();
    let mut p = Mat30::zeros();
    p.fixed_view_mut::<15, 15>(0, 0).copy_from(&belief_a.p);
    p.fixed_view_mut::<15, 15>(15, 15).copy_from(&belief_b.p);
    p.fixed_view_mut::<15, 15>(0, 15).copy_from(&cross);
    p.fixed_view_mut::<15, 15>(15, 0).copy_from(&cross.transpose());
    if !is_psd(&p, PSD_REL_TOL) {
        return Err(Error::NotPsd {
            min_eig: min_eigenvalue(&p),
        });
    }
    let mut x = Vec30::zeros();
    x.fixed_rows_mut::<15>(0).copy_from(&err_a.0);
    x.fixed_rows_mut::<15>(15).copy_from(&err_b.0);
    Ok(CoupledBelief { p, x, ids: (a, b) })
}

/// Euclidean distance between two positions.
pub fn range_model(r_a: &Vec3, r_b: &Vec3) -> Result<f64> {
    let d = (r_b - r_a).norm();
    if d < MIN_SEPARATION {
        return Err(Error::DegenerateGeometry { separation: d });
    }
    Ok(d)
}

/// Gradient of the range with respect to the two stacked positions, laid out
/// over the joint error state: `(r_A − r_B)/h` in A's position columns and
/// `(r_B − r_A)/h` in B's.
///
/// This is `∂h/∂r`. Because position errors are estimate minus truth, the
/// error-state Jacobian used by [`relative_update`] is its negative.
pub fn range_jacobian(r_a: &Vec3, r_b: &Vec3) -> Result<RangeRow> {
    let h = range_model(r_a, r_b)?;
    let u = (r_a - r_b) / h;
    let mut row = RangeRow::zeros();
    for i in 0..3 {
        row[(0, idx::POS + i)] = u[i];
        row[(0, 15 + idx::POS + i)] = -u[i];
    }
    Ok(row)
}

/// Error-state measurement row for a range between the two robots.
pub fn range_error_jacobian(r_a: &Vec3, r_b: &Vec3) -> Result<RangeRow> {
    Ok(-range_jacobian(r_a, r_b)?)
}

/// Result of a joint update, with the scalar innovation for logging.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeUpdate {
    pub coupled: CoupledBelief,
    pub innovation: f64,
    /// Normalized innovation squared, `ν² / s`.
    pub nis: f64,
}

/// Scalar Kalman update of the joint system with a range sample.
pub fn relative_update(
    coupled: &CoupledBelief,
    meas: &RangeMeasurement,
    state_a: &NavState,
    state_b: &NavState,
) -> Result<RangeUpdate> {
    let predicted = range_model(&state_a.r, &state_b.r)?;
    let h = range_error_jacobian(&state_a.r, &state_b.r)?;
    let innovation = meas.z - predicted - (h * coupled.x)[0];
    let s = (h * coupled.p * h.transpose())[0] + meas.r;
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::InnovationCovSingular);
    }
    let gain: SVector<f64, 30> = coupled.p * h.transpose() / s;
    let a = Mat30::identity() - gain * h;
    let p = symmetrize(&(a * coupled.p * a.transpose() + gain * gain.transpose() * meas.r));
    Ok(RangeUpdate {
        coupled: CoupledBelief {
            p,
            x: coupled.x + gain * innovation,
            ids: coupled.ids,
        },
        innovation,
        nis: innovation * innovation / s,
    })
}

/// What one side of a decomposed joint posterior installs.
#[derive(Clone, Debug, PartialEq)]
pub struct SidePosterior {
    pub p: Mat15,
    pub err: ErrorState,
    /// New correlation factor toward the other robot.
    pub sigma_toward_peer: Mat15,
}

/// Splits a joint posterior. `A` keeps the identity factor and `B` receives
/// the bottom-left cross block, so `σ_AB σ_BAᵀ` reproduces `Σ_AB` exactly.
pub fn decompose(coupled: &CoupledBelief) -> (SidePosterior, SidePosterior) {
    let a = SidePosterior {
        p: coupled.p_a(),
        err: ErrorState(coupled.x.fixed_rows::<15>(0).into_owned()),
        sigma_toward_peer: Mat15::identity(),
    };
    let b = SidePosterior {
        p: coupled.p_b(),
        err: ErrorState(coupled.x.fixed_rows::<15>(15).into_owned()),
        sigma_toward_peer: coupled.cross_ba(),
    };
    (a, b)
}

fn inverse_regularized(p: &Mat15) -> Option<Mat15> {
    let sym = symmetrize(p);
    if let Some(c) = sym.cholesky() {
        return Some(c.inverse());
    }
    let lambda = 1e-12 * sym.trace().abs() / 15.0;
    (sym + Mat15::identity() * lambda).cholesky().map(|c| c.inverse())
}

/// Maps every factor toward robots not in `skip` through the covariance
/// change of the robot that was just updated.
///
/// If the matrix to invert is singular it is regularized by `λI`, with
/// `λ = 1e-12·trace/15`, and retried once; if that also fails, the belief is
/// returned unchanged inside [`Error::SingularPosterior`]'s caller path.
pub fn update_absent_correlations(
    belief: &BeliefBlock,
    p_prior: &Mat15,
    p_post: &Mat15,
    skip: &[RobotId],
    order: AbsentFactorOrder,
) -> Result<BeliefBlock> {
    let map = match order {
        AbsentFactorOrder::PriorTimesPosteriorInverse => {
            p_prior * inverse_regularized(p_post).ok_or(Error::SingularPosterior)?
        }
        AbsentFactorOrder::PosteriorTimesPriorInverse => {
            p_post * inverse_regularized(p_prior).ok_or(Error::SingularPosterior)?
        }
    };
    let mut out = belief.clone();
    for (id, s) in out.sigma.iter_mut() {
        if !skip.contains(id) {
            *s = map * *s;
        }
    }
    Ok(out)
}

/// Installs one side of a decomposed posterior into a robot's belief: maps the
/// factors toward absent robots, replaces the covariance, and stores the new
/// factor toward `peer`.
///
/// Returns the new belief, the posterior error state, and whether the absent
/// map had to be skipped because the covariance could not be inverted.
pub fn install_side(
    belief: &BeliefBlock,
    side: &SidePosterior,
    peer: RobotId,
    order: AbsentFactorOrder,
) -> (BeliefBlock, ErrorState, bool) {
    let (mut out, skipped) =
        match update_absent_correlations(belief, &belief.p, &side.p, &[peer], order) {
            Ok(b) => (b, false),
            Err(_) => (belief.clone(), true),
        };
    out.p = side.p;
    out.sigma.insert(peer, side.sigma_toward_peer);
    (out, side.err, skipped)
}

/// Stacked error state helper for tests and diagnostics.
pub fn stack(a: &Vec15, b: &Vec15) -> Vec30 {
    let mut x = Vec30::zeros();
    x.fixed_rows_mut::<15>(0).copy_from(a);
    x.fixed_rows_mut::<15>(15).copy_from(b);
    x
}
