//! Component-wise translation estimation (COTE).
//!
//! Each axis is an independent 1-D truncated least-squares problem. The
//! windows `v ± σ c̄` partition the line into gaps; inside a gap the set of
//! windows covering it is constant, so the optimum is the weighted mean of
//! one of these consensus sets. Scanning the sorted window endpoints visits
//! every set once.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::features::CorrespondenceSet;
use crate::geometry::PointCloud;

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationMeasurements {
    /// `v = q_j − R p_i` per correspondence.
    pub v: Vec<Vector3<f64>>,
    pub sigma: Vec<f64>,
}

impl TranslationMeasurements {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn axis(&self, axis: usize) -> Vec<f64> {
        self.v.iter().map(|v| v[axis]).collect()
    }
}

/// Axis-wise residual translations for every correspondence.
pub fn build_measurements(
    src: &PointCloud,
    tgt: &PointCloud,
    corr: &CorrespondenceSet,
    rotation: &Matrix3<f64>,
) -> Result<TranslationMeasurements> {
    if corr.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    corr.check_bounds(src.len(), tgt.len())?;
    let (p, q) = (src.points(), tgt.points());
    let v = corr
        .iter()
        .map(|c| q[c.tgt].coords - rotation * p[c.src].coords)
        .collect();
    let sigma = corr.iter().map(|c| c.sigma).collect();
    Ok(TranslationMeasurements { v, sigma })
}

/// `Σ min((t − v)²/σ², c̄²)`, accumulated in index order.
pub fn truncated_objective(t: f64, values: &[f64], sigmas: &[f64], cbar: f64) -> f64 {
    let c2 = cbar * cbar;
    values
        .iter()
        .zip(sigmas)
        .map(|(&v, &s)| ((t - v) * (t - v) / (s * s)).min(c2))
        .sum()
}

/// One non-empty gap between consecutive window endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusInterval {
    pub lower: f64,
    pub upper: f64,
    pub midpoint: f64,
    /// Inverse-variance weighted mean of the covering windows' values.
    pub candidate: f64,
    pub members: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisEstimate {
    pub estimate: f64,
    /// Indices whose window covers the winning gap, ascending.
    pub inliers: Vec<usize>,
    pub objective: f64,
}

/// All candidates in left-to-right gap order. Zero-width gaps and gaps no
/// window covers emit nothing.
pub fn consensus_intervals(values: &[f64], sigmas: &[f64], cbar: f64) -> Vec<ConsensusInterval> {
    assert_eq!(values.len(), sigmas.len(), "one sigma per value");
    // (position, +1 opening / -1 closing, index)
    let mut ends: Vec<(f64, i8, usize)> = Vec::with_capacity(2 * values.len());
    for (i, (&v, &s)) in values.iter().zip(sigmas).enumerate() {
        let half = s * cbar;
        ends.push((v - half, 1, i));
        ends.push((v + half, -1, i));
    }
    ends.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));

    let mut out = Vec::new();
    let (mut count, mut sum_w, mut sum_wv) = (0usize, 0.0, 0.0);
    for k in 0..ends.len() {
        let (pos, kind, i) = ends[k];
        let w = 1.0 / (sigmas[i] * sigmas[i]);
        if kind > 0 {
            count += 1;
            sum_w += w;
            sum_wv += w * values[i];
        } else {
            count -= 1;
            sum_w -= w;
            sum_wv -= w * values[i];
        }
        if count == 0 {
            // avoid carrying cancellation error into the next cluster
            sum_w = 0.0;
            sum_wv = 0.0;
            continue;
        }
        let Some(&(next, _, _)) = ends.get(k + 1) else { break };
        if next <= pos {
            continue;
        }
        let candidate = sum_wv / sum_w;
        out.push(ConsensusInterval {
            lower: pos,
            upper: next,
            midpoint: 0.5 * (pos + next),
            candidate,
            members: count,
            objective: truncated_objective(candidate, values, sigmas, cbar),
        });
    }
    out
}

/// Truncated-LS estimate of one translation component.
pub fn cote_axis(values: &[f64], sigmas: &[f64], cbar: f64) -> Result<AxisEstimate> {
    if values.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    let best = consensus_intervals(values, sigmas, cbar)
        .into_iter()
        .reduce(|best, c| if c.objective < best.objective { c } else { best })
        .expect("a non-empty input always covers at least one gap");
    let inliers = values
        .iter()
        .zip(sigmas)
        .enumerate()
        .filter(|(_, (&v, &s))| v - s * cbar <= best.lower && v + s * cbar >= best.upper)
        .map(|(i, _)| i)
        .collect();
    Ok(AxisEstimate {
        estimate: best.candidate,
        inliers,
        objective: best.objective,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationEstimate {
    pub translation: Vector3<f64>,
    pub axis_inliers: [Vec<usize>; 3],
}

/// [`cote_axis`] on x, y and z independently.
pub fn estimate_translation(meas: &TranslationMeasurements, cbar: f64) -> Result<TranslationEstimate> {
    if meas.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    let [x, y, z] = [0, 1, 2].map(|axis| cote_axis(&meas.axis(axis), &meas.sigma, cbar));
    let (x, y, z) = (x?, y?, z?);
    Ok(TranslationEstimate {
        translation: Vector3::new(x.estimate, y.estimate, z.estimate),
        axis_inliers: [x.inliers, y.inliers, z.inliers],
    })
}
