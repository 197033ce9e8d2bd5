//! Graduated non-convexity (GNC) truncated-least-squares rotation
//! estimation over TIMs.
//!
//! Two rotation models are supported. `QuasiSo3` restricts the rotation to
//! a yaw about the gravity axis and scores only the planar (x, y) part of
//! each residual, so measurements whose error is purely vertical keep full
//! weight and a single TIM is enough to fix the estimate. `FullSo3` is the
//! weighted SVD baseline which needs at least three supporting TIMs.

use nalgebra::{Matrix3, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rot_z, RotationMode};
use crate::pruning::TimSet;

/// Weight above which a TIM counts as an inlier in the degeneracy check.
pub const INLIER_WEIGHT: f64 = 0.5;
/// μ used when every initial residual is already inside the inlier band.
pub const MU_ALL_INLIER: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GncConfig {
    /// Truncation threshold c̄, in residual units (meters).
    pub cbar: f64,
    /// Continuation factor κ > 1 applied to μ every iteration.
    pub kappa: f64,
    pub max_iters: usize,
    /// Stop once the weighted cost changes by less than this.
    pub cost_tol: f64,
    /// Divide each TIM residual by its squared noise bound before
    /// truncation. Off by default: σ only enters translation estimation.
    pub sigma_normalized: bool,
}

impl Default for GncConfig {
    fn default() -> Self {
        Self {
            cbar: 0.15,
            kappa: 1.4,
            max_iters: 100,
            cost_tol: 1e-7,
            sigma_normalized: false,
        }
    }
}

impl GncConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cbar > 0.0) {
            return Err(Error::Config(format!("cbar must be positive, got {}", self.cbar)));
        }
        if !(self.kappa > 1.0) {
            return Err(Error::Config(format!("kappa must exceed 1, got {}", self.kappa)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.cost_tol > 0.0) {
            return Err(Error::Config(format!(
                "cost_tol must be positive, got {}",
                self.cost_tol
            )));
        }
        Ok(())
    }
}

/// Squared residual of one TIM under `rotation`. Quasi mode drops the z
/// component.
pub fn residual(alpha: &Vector3<f64>, beta: &Vector3<f64>, rotation: &Matrix3<f64>, mode: RotationMode) -> f64 {
    let e = beta - rotation * alpha;
    match mode {
        RotationMode::FullSo3 => e.norm_squared(),
        RotationMode::QuasiSo3 => e.x * e.x + e.y * e.y,
    }
}

/// Closed-form weighted yaw: the global minimiser of
/// `Σ w_k ‖(β_k − R_z(θ) α_k)_xy‖²`.
pub fn solve_yaw_weighted(tims: &TimSet, weights: &[f64]) -> Result<f64> {
    debug_assert_eq!(tims.len(), weights.len());
    let mut sin_sum = 0.0;
    let mut cos_sum = 0.0;
    let mut extent = 0.0;
    for ((a, b), &w) in tims.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        sin_sum += w * (a.x * b.y - a.y * b.x);
        cos_sum += w * (a.x * b.x + a.y * b.y);
        extent += w * (a.x * a.x + a.y * a.y);
    }
    if !(extent > 0.0) || (sin_sum == 0.0 && cos_sum == 0.0) {
        return Err(Error::DegenerateRotation {
            detail: "no weighted TIM with planar extent",
            last_yaw: None,
        });
    }
    Ok(sin_sum.atan2(cos_sum))
}

/// Weighted Arun/Horn rotation `R = V diag(1, 1, det(V Uᵀ)) Uᵀ` from the
/// SVD of `C = Σ w_k α_k β_kᵀ`.
pub fn solve_so3_weighted(tims: &TimSet, weights: &[f64]) -> Result<Matrix3<f64>> {
    debug_assert_eq!(tims.len(), weights.len());
    let support = weights.iter().filter(|&&w| w > 0.0).count();
    if support < 3 {
        return Err(Error::DegenerateRotation {
            detail: "fewer than three weighted TIMs",
            last_yaw: None,
        });
    }
    let c = tims
        .iter()
        .zip(weights)
        .fold(Matrix3::zeros(), |acc, ((a, b), &w)| acc + w * a * b.transpose());
    let svd = SVD::new(c, true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let s = svd.singular_values;
    let mut sorted = [s[0], s[1], s[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-12 * sorted[0] {
        return Err(Error::DegenerateRotation {
            detail: "collinear TIMs",
            last_yaw: None,
        });
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let imin = (0..3).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap_or(2);
    let mut diag = Vector3::from_element(1.0);
    diag[imin] = d;
    Ok(v * Matrix3::from_diagonal(&diag) * u.transpose())
}

/// Closed-form minimiser over `w ∈ [0, 1]` of `w r + μ(1 − w)c̄²/(μ + w)`.
pub fn gnc_weight(residual: f64, mu: f64, cbar: f64) -> f64 {
    let c2 = cbar * cbar;
    let upper = (mu + 1.0) / mu * c2;
    let lower = mu / (mu + 1.0) * c2;
    if residual >= upper {
        0.0
    } else if residual <= lower {
        1.0
    } else {
        (cbar * (mu * (mu + 1.0) / residual).sqrt() - mu).clamp(0.0, 1.0)
    }
}

pub fn gnc_weight_update(residuals: &[f64], mu: f64, cbar: f64) -> Vec<f64> {
    residuals.iter().map(|&r| gnc_weight(r, mu, cbar)).collect()
}

/// `μ₀ = c̄² / (max r − c̄²)`, or [`MU_ALL_INLIER`] when no residual
/// exceeds `c̄²`.
pub fn gnc_mu_init(residuals: &[f64], cbar: f64) -> f64 {
    let c2 = cbar * cbar;
    let max_r = residuals.iter().copied().fold(0.0, f64::max);
    if max_r > c2 {
        c2 / (max_r - c2)
    } else {
        MU_ALL_INLIER
    }
}

/// Snapshot of the alternation after a weight update.
#[derive(Debug, Clone, PartialEq)]
pub struct GncState {
    /// Number of completed iterations.
    pub t: usize,
    /// μ used for the most recent weight update.
    pub mu: f64,
    pub weights: Vec<f64>,
    /// `Σ w_k r_k` after the most recent update.
    pub cost: f64,
    pub converged: bool,
    pub rotation: Matrix3<f64>,
    pub cost_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationEstimate {
    pub rotation: Matrix3<f64>,
    pub mode: RotationMode,
    /// Yaw angle in radians (quasi mode only).
    pub yaw: Option<f64>,
    pub final_weights: Vec<f64>,
    pub inlier_tims: Vec<usize>,
    /// Fewer than three TIMs ended with weight above [`INLIER_WEIGHT`].
    pub degenerate: bool,
    pub iterations: usize,
    pub converged: bool,
}

/// Step-wise GNC alternation: rotation step on the current weights, then
/// the truncated weight update, then `μ ← κ μ`.
pub struct GncSolver<'a> {
    tims: &'a TimSet,
    scales: Option<&'a [f64]>,
    config: GncConfig,
    mode: RotationMode,
    state: GncState,
    next_mu: f64,
}

impl<'a> GncSolver<'a> {
    pub fn new(tims: &'a TimSet, config: GncConfig, mode: RotationMode) -> Result<Self> {
        Self::with_scales(tims, None, config, mode)
    }

    /// `scales[k]` divides the residual of TIM `k` as `r / scale²`.
    pub fn with_scales(
        tims: &'a TimSet,
        scales: Option<&'a [f64]>,
        config: GncConfig,
        mode: RotationMode,
    ) -> Result<Self> {
        config.validate()?;
        let needed = match mode {
            RotationMode::QuasiSo3 => 1,
            RotationMode::FullSo3 => 3,
        };
        if tims.len() < needed {
            return Err(Error::DegenerateRotation {
                detail: "too few TIMs for the rotation model",
                last_yaw: None,
            });
        }
        if let Some(s) = scales {
            assert_eq!(s.len(), tims.len(), "one scale per TIM");
        }
        let identity = Matrix3::identity();
        let r0 = residuals(tims, scales, &identity, mode);
        let mu0 = gnc_mu_init(&r0, config.cbar);
        Ok(Self {
            tims,
            scales,
            config,
            mode,
            state: GncState {
                t: 0,
                mu: mu0,
                weights: vec![1.0; tims.len()],
                cost: f64::INFINITY,
                converged: false,
                rotation: identity,
                cost_history: Vec::new(),
            },
            next_mu: mu0,
        })
    }

    pub fn state(&self) -> &GncState {
        &self.state
    }

    fn solve(&self, weights: &[f64]) -> Result<Matrix3<f64>> {
        match self.mode {
            RotationMode::QuasiSo3 => solve_yaw_weighted(self.tims, weights).map(rot_z),
            RotationMode::FullSo3 => solve_so3_weighted(self.tims, weights),
        }
    }

    fn last_yaw(&self) -> Option<f64> {
        (self.mode == RotationMode::QuasiSo3 && self.state.t > 0)
            .then(|| self.state.rotation[(1, 0)].atan2(self.state.rotation[(0, 0)]))
    }

    /// One rotation step plus one weight update.
    pub fn step(&mut self) -> Result<&GncState> {
        let rotation = self.solve(&self.state.weights).map_err(|e| match e {
            Error::DegenerateRotation { detail, .. } => Error::DegenerateRotation {
                detail,
                last_yaw: self.last_yaw(),
            },
            e => e,
        })?;
        let r = residuals(self.tims, self.scales, &rotation, self.mode);
        let mu = self.next_mu;
        let weights = gnc_weight_update(&r, mu, self.config.cbar);
        let cost: f64 = weights.iter().zip(&r).map(|(w, r)| w * r).sum();
        let prev = self.state.cost;
        let st = &mut self.state;
        st.t += 1;
        st.mu = mu;
        st.rotation = rotation;
        st.weights = weights;
        st.cost = cost;
        st.cost_history.push(cost);
        st.converged = (cost - prev).abs() < self.config.cost_tol;
        self.next_mu = mu * self.config.kappa;
        Ok(&self.state)
    }

    /// Runs to convergence or the iteration cap.
    pub fn run(mut self) -> Result<RotationEstimate> {
        while self.state.t < self.config.max_iters {
            self.step()?;
            if self.state.weights.iter().all(|&w| w == 0.0) {
                return Err(Error::DegenerateRotation {
                    detail: "all TIM weights collapsed to zero",
                    last_yaw: self.last_yaw(),
                });
            }
            if self.state.converged {
                break;
            }
        }
        // final rotation on the final weights; keep the last valid one if the
        // surviving support is too thin for the model
        let rotation = self.solve(&self.state.weights).unwrap_or(self.state.rotation);
        let st = self.state;
        let inlier_tims: Vec<usize> = st
            .weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > INLIER_WEIGHT)
            .map(|(k, _)| k)
            .collect();
        Ok(RotationEstimate {
            rotation,
            mode: self.mode,
            yaw: (self.mode == RotationMode::QuasiSo3).then(|| rotation[(1, 0)].atan2(rotation[(0, 0)])),
            degenerate: inlier_tims.len() < 3,
            inlier_tims,
            final_weights: st.weights,
            iterations: st.t,
            converged: st.converged,
        })
    }
}

fn residuals(tims: &TimSet, scales: Option<&[f64]>, rotation: &Matrix3<f64>, mode: RotationMode) -> Vec<f64> {
    tims.iter()
        .enumerate()
        .map(|(k, (a, b))| {
            let r = residual(a, b, rotation, mode);
            match scales {
                Some(s) => r / (s[k] * s[k]),
                None => r,
            }
        })
        .collect()
}

/// Full GNC alternation starting from unit weights.
pub fn estimate_rotation_gnc(tims: &TimSet, config: &GncConfig, mode: RotationMode) -> Result<RotationEstimate> {
    GncSolver::new(tims, *config, mode)?.run()
}
