//! Relative pose error metrics and trial aggregation.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default success thresholds: translation error in meters and rotation
/// error in degrees, both inclusive.
pub const SUCCESS_T_MAX: f64 = 2.0;
pub const SUCCESS_R_MAX: f64 = 10.0;

/// Squared Euclidean translation error in m².
pub fn translation_error(t_hat: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    (t_gt - t_hat).norm_squared()
}

/// Geodesic angle between two rotations in degrees, within [0, 180].
pub fn rotation_error(r_hat: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    let cos = (((r_hat.transpose() * r_gt).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuccessCriteria {
    pub t_max: f64,
    pub r_max: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self {
            t_max: SUCCESS_T_MAX,
            r_max: SUCCESS_R_MAX,
        }
    }
}

impl SuccessCriteria {
    pub fn check(&self, t_err: f64, r_err: f64) -> bool {
        t_err <= self.t_max && r_err <= self.r_max
    }
}

/// `t_err` is the translation error norm in meters, `r_err` in degrees.
pub fn success(t_err: f64, r_err: f64) -> bool {
    SuccessCriteria::default().check(t_err, r_err)
}

/// Outcome of one registration trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Squared translation error in m².
    pub t_err_sq: f64,
    /// Rotation error in degrees.
    pub r_err: f64,
    pub success: bool,
    pub degenerate: bool,
}

impl TrialRecord {
    pub fn new(t_err_sq: f64, r_err: f64, degenerate: bool, criteria: &SuccessCriteria) -> Self {
        Self {
            t_err_sq,
            r_err,
            success: criteria.check(t_err_sq.sqrt(), r_err),
            degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Mean squared translation error in m².
    pub t_avg: f64,
    /// `sqrt(t_avg)` in meters, for readability.
    pub t_rmse: f64,
    /// Mean rotation error in degrees.
    pub r_avg: f64,
    pub success_rate: f64,
    pub degenerate_rate: f64,
    pub n: usize,
    pub records: Vec<TrialRecord>,
}

pub fn aggregate(records: &[TrialRecord]) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptyReport);
    }
    let n = records.len() as f64;
    let t_avg = records.iter().map(|r| r.t_err_sq).sum::<f64>() / n;
    let r_avg = records.iter().map(|r| r.r_err).sum::<f64>() / n;
    let count = |f: fn(&TrialRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / n;
    Ok(EvalReport {
        t_avg,
        t_rmse: t_avg.sqrt(),
        r_avg,
        success_rate: count(|r| r.success),
        degenerate_rate: count(|r| r.degenerate),
        n: records.len(),
        records: records.to_vec(),
    })
}
