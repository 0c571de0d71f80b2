//! Localization error statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::nav::RobotId;
use crate::sim::{BeliefSample, RunArtifacts, TruthSample};

/// Summary of one error component over a run (m).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub rmse: f64,
    /// Largest absolute error.
    pub max: f64,
    /// Median absolute error.
    pub median: f64,
    /// Standard deviation of the signed error.
    pub std: f64,
}

impl ErrorStats {
    pub fn from_errors(e: &[f64]) -> Result<Self> {
        if e.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let n = e.len() as f64;
        let mean = e.iter().sum::<f64>() / n;
        let rmse = (e.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        let std = (e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut abs: Vec<f64> = e.iter().map(|x| x.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let m = abs.len();
        let median = if m % 2 == 1 {
            abs[m / 2]
        } else {
            0.5 * (abs[m / 2 - 1] + abs[m / 2])
        };
        Ok(Self {
            rmse,
            max: abs[m - 1],
            median,
            std,
        })
    }
}

/// Error statistics for one robot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotMetrics {
    pub robot_id: RobotId,
    pub samples: usize,
    pub east: ErrorStats,
    pub north: ErrorStats,
    pub up: ErrorStats,
    /// Statistics of the 3D error norm.
    pub error_3d: ErrorStats,
    pub initial_horizontal_error: f64,
    pub final_horizontal_error: f64,
    /// `initial − final` horizontal error (m).
    pub correction: f64,
    /// `100 · correction / initial` (%); zero when the initial error is zero.
    pub improvement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub robots: Vec<RobotMetrics>,
}

impl MetricsReport {
    pub fn robot(&self, id: RobotId) -> Option<&RobotMetrics> {
        self.robots.iter().find(|r| r.robot_id == id)
    }
}

/// Position errors (estimate − truth) at belief samples matched to the
/// nearest truth sample within `tolerance` seconds. Both traces must be
/// sorted by time.
pub fn aligned_errors(beliefs: &[BeliefSample], truth: &[TruthSample], tolerance: f64) -> Vec<(f64, Vec3)> {
    let mut out = Vec::with_capacity(beliefs.len());
    let mut j = 0;
    for b in beliefs {
        while j + 1 < truth.len() && (truth[j + 1].t - b.t).abs() <= (truth[j].t - b.t).abs() {
            j += 1;
        }
        if let Some(t) = truth.get(j) {
            if (t.t - b.t).abs() <= tolerance {
                out.push((b.t, b.r - t.r));
            }
        }
    }
    out
}

/// Statistics for one robot's belief trace against its truth trace.
///
/// `tolerance` is the alignment window, normally half an IMU period.
/// `initial_horizontal_error` is the reference for the improvement figure.
pub fn compute_metrics(
    robot_id: RobotId,
    beliefs: &[BeliefSample],
    truth: &[TruthSample],
    tolerance: f64,
    initial_horizontal_error: f64,
) -> Result<RobotMetrics> {
    let errs = aligned_errors(beliefs, truth, tolerance);
    if errs.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let axis = |k: usize| ErrorStats::from_errors(&errs.iter().map(|(_, e)| e[k]).collect::<Vec<_>>());
    let norms: Vec<f64> = errs.iter().map(|(_, e)| e.norm()).collect();
    let last = errs.last().expect("non-empty").1;
    let final_h = last.xy().norm();
    let correction = initial_horizontal_error - final_h;
    Ok(RobotMetrics {
        robot_id,
        samples: errs.len(),
        east: axis(0)?,
        north: axis(1)?,
        up: axis(2)?,
        error_3d: ErrorStats::from_errors(&norms)?,
        initial_horizontal_error,
        final_horizontal_error: final_h,
        correction,
        improvement: improvement_of_correction(correction, initial_horizontal_error),
    })
}

/// `100 · correction / initial`.
pub fn improvement_of_correction(correction: f64, initial: f64) -> f64 {
    if initial > 0.0 {
        100.0 * correction / initial
    } else {
        0.0
    }
}

/// `100 · (without − with) / without`, the A/B convention.
pub fn ab_improvement(without: f64, with: f64) -> f64 {
    if without > 0.0 {
        100.0 * (without - with) / without
    } else {
        0.0
    }
}

/// Metrics for every robot of a run.
pub fn report(art: &RunArtifacts, imu_rate: f64) -> Result<MetricsReport> {
    let tol = 0.5 / imu_rate;
    let robots = art
        .initial
        .iter()
        .map(|ic| {
            compute_metrics(
                ic.robot_id,
                &art.beliefs_of(ic.robot_id),
                &art.truth_of(ic.robot_id),
                tol,
                ic.horizontal_error(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        scenario: art.scenario.clone(),
        seed: art.seed,
        robots,
    })
}
