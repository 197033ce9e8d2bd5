//! End-to-end registration: preprocessing, matching, clique pruning, GNC
//! rotation, COTE translation, plus the RANSAC baseline and an ICP refiner.

use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3, SVD};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::cote::{build_measurements, estimate_translation};
use crate::error::{Error, Result, Stage};
use crate::features::{compute_fpfh, match_correspondences, CorrespondenceSet};
use crate::geometry::{
    estimate_normals, rot_x, rot_y, rotate_cloud, voxel_downsample, Point3, PointCloud, RigidTransform, RotationMode,
};
use crate::pruning::{build_compat_graph, filter_by_clique, mcis_heuristic};
use crate::rotation::{GncConfig, GncSolver};
use crate::spatial::PointIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// GNC rotation in the configured mode, then COTE.
    #[default]
    Quatro,
    /// GNC with the full-SO(3) rotation model regardless of `mode`.
    FullGnc,
    Ransac,
}

impl Solver {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::Quatro => "quatro",
            Solver::FullGnc => "full_gnc",
            Solver::Ransac => "ransac",
        }
    }
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quatro" => Ok(Solver::Quatro),
            "gnc" | "full_gnc" => Ok(Solver::FullGnc),
            "ransac" => Ok(Solver::Ransac),
            other => Err(Error::Config(format!("unknown solver '{other}'"))),
        }
    }
}

/// Roll and pitch of a cloud's sensor relative to gravity, in radians, so
/// that `captured = R_y(pitch) · R_x(roll) · level`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Attitude {
    pub roll: f64,
    pub pitch: f64,
}

impl Attitude {
    pub fn new(roll: f64, pitch: f64) -> Self {
        Self { roll, pitch }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        rot_y(self.pitch) * rot_x(self.roll)
    }

    pub fn is_level(&self) -> bool {
        self.roll == 0.0 && self.pitch == 0.0
    }
}

/// INS readings for both clouds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct InsReadings {
    pub src: Attitude,
    pub tgt: Attitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier distance in meters; the voxel size when unset.
    pub inlier_thresh: Option<f64>,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            inlier_thresh: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_corr_dist: f64,
    pub max_iters: usize,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_corr_dist: 1.0,
            max_iters: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub voxel_size: f64,
    pub r_normal: f64,
    pub r_fpfh: f64,
    pub gnc: GncConfig,
    /// Noise bound assigned to matched pairs; the voxel size when unset.
    pub sigma_default: Option<f64>,
    pub mode: RotationMode,
    pub ins: Option<InsReadings>,
    pub refine: bool,
    pub solver: Solver,
    /// Multiplier on `σ_a + σ_b` in the pairwise compatibility test.
    pub compat_scale: f64,
    /// Feed COTE only the correspondences touched by rotation-inlier TIMs
    /// instead of every clique member.
    pub cote_rotation_inliers_only: bool,
    pub ransac: RansacConfig,
    pub icp: IcpConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::outdoor()
    }
}

impl PipelineConfig {
    /// 64-channel outdoor LiDAR profile.
    pub fn outdoor() -> Self {
        Self::with_radii(0.3, 0.5, 0.65)
    }

    /// Denser indoor profile.
    pub fn indoor() -> Self {
        Self::with_radii(0.1, 0.3, 0.45)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "outdoor" => Some(Self::outdoor()),
            "indoor" => Some(Self::indoor()),
            _ => None,
        }
    }

    fn with_radii(voxel_size: f64, r_normal: f64, r_fpfh: f64) -> Self {
        Self {
            voxel_size,
            r_normal,
            r_fpfh,
            gnc: GncConfig::default(),
            sigma_default: None,
            mode: RotationMode::QuasiSo3,
            ins: None,
            refine: false,
            solver: Solver::Quatro,
            compat_scale: 1.0,
            cote_rotation_inliers_only: false,
            ransac: RansacConfig::default(),
            icp: IcpConfig::default(),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_default.unwrap_or(self.voxel_size)
    }

    pub fn ransac_thresh(&self) -> f64 {
        self.ransac.inlier_thresh.unwrap_or(self.voxel_size)
    }

    /// Rotation model actually used by the GNC solvers.
    pub fn rotation_mode(&self) -> RotationMode {
        match self.solver {
            Solver::FullGnc => RotationMode::FullSo3,
            _ => self.mode,
        }
    }

    /// Rejects invalid values. Returns advisory warnings for values that are
    /// legal but unusual.
    pub fn validate(&self) -> Result<Vec<String>> {
        for (name, v) in [
            ("voxel_size", self.voxel_size),
            ("r_normal", self.r_normal),
            ("r_fpfh", self.r_fpfh),
            ("compat_scale", self.compat_scale),
            ("sigma", self.sigma()),
            ("icp.max_corr_dist", self.icp.max_corr_dist),
            ("ransac.inlier_thresh", self.ransac_thresh()),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        self.gnc.validate()?;
        if let Some(ins) = &self.ins {
            let angles = [ins.src.roll, ins.src.pitch, ins.tgt.roll, ins.tgt.pitch];
            if !angles.iter().all(|a| a.is_finite()) {
                return Err(Error::Config("INS angles must be finite".into()));
            }
        }
        let mut warnings = Vec::new();
        if self.r_fpfh <= self.r_normal {
            warnings.push(format!(
                "r_fpfh ({}) should exceed r_normal ({})",
                self.r_fpfh, self.r_normal
            ));
        }
        Ok(warnings)
    }
}

fn millis<S: Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

/// Wall-clock time per stage, serialized in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StageTimings {
    #[serde(serialize_with = "millis")]
    pub preprocess: Duration,
    #[serde(serialize_with = "millis")]
    pub features: Duration,
    #[serde(serialize_with = "millis")]
    pub matching: Duration,
    #[serde(serialize_with = "millis")]
    pub pruning: Duration,
    #[serde(serialize_with = "millis")]
    pub rotation: Duration,
    #[serde(serialize_with = "millis")]
    pub translation: Duration,
    #[serde(serialize_with = "millis")]
    pub refine: Duration,
    /// Rotation plus translation (or the RANSAC loop).
    #[serde(serialize_with = "millis")]
    pub optimization: Duration,
    #[serde(serialize_with = "millis")]
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps source coordinates into the target frame.
    pub transform: RigidTransform,
    pub num_raw_corr: usize,
    pub num_pruned_corr: usize,
    /// TIMs with final weight above 0.5, or RANSAC inlier pairs.
    pub rotation_inliers: usize,
    pub degenerate: bool,
    pub solver: Solver,
    pub timings: StageTimings,
}

impl RegistrationResult {
    /// Everything except the timings, for determinism checks.
    pub fn same_estimate(&self, other: &Self) -> bool {
        self.transform == other.transform
            && self.num_raw_corr == other.num_raw_corr
            && self.num_pruned_corr == other.num_pruned_corr
            && self.rotation_inliers == other.rotation_inliers
            && self.degenerate == other.degenerate
            && self.solver == other.solver
    }
}

/// Rotates a captured cloud back to the gravity-aligned frame.
pub fn apply_ins_alignment(cloud: &PointCloud, roll: f64, pitch: f64) -> PointCloud {
    rotate_cloud(cloud, &Attitude::new(roll, pitch).matrix().transpose())
}

/// Full registration from raw clouds.
pub fn register(src: &PointCloud, tgt: &PointCloud, config: &PipelineConfig) -> Result<RegistrationResult> {
    let start = Instant::now();
    config.validate()?;
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::EmptyCloud.at(Stage::Preprocess));
    }
    let mut timings = StageTimings::default();
    let (src, tgt) = level_clouds(src, tgt, config);

    let t = Instant::now();
    let src_ds = voxel_downsample(&src, config.voxel_size).map_err(|e| e.at(Stage::Preprocess))?;
    let tgt_ds = voxel_downsample(&tgt, config.voxel_size).map_err(|e| e.at(Stage::Preprocess))?;
    timings.preprocess = t.elapsed();

    let t = Instant::now();
    let describe = |c: &PointCloud| {
        let normals = estimate_normals(c, config.r_normal)?;
        compute_fpfh(c, &normals, config.r_fpfh)
    };
    let desc_src = describe(&src_ds).map_err(|e| e.at(Stage::Features))?;
    let desc_tgt = describe(&tgt_ds).map_err(|e| e.at(Stage::Features))?;
    timings.features = t.elapsed();

    let t = Instant::now();
    let corr = match_correspondences(&desc_src, &desc_tgt, config.sigma()).map_err(|e| e.at(Stage::Matching))?;
    timings.matching = t.elapsed();

    let mut result = solve(&src_ds, &tgt_ds, &corr, config, timings)?;
    result.transform = restore_attitude(result.transform, config);
    result.timings.total = start.elapsed();
    Ok(result)
}

/// Registration from given correspondences, skipping feature matching.
pub fn register_with_correspondences(
    src: &PointCloud,
    tgt: &PointCloud,
    corr: &CorrespondenceSet,
    config: &PipelineConfig,
) -> Result<RegistrationResult> {
    let start = Instant::now();
    config.validate()?;
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::EmptyCloud.at(Stage::Preprocess));
    }
    if corr.is_empty() {
        return Err(Error::EmptyCorrespondences.at(Stage::Matching));
    }
    corr.check_bounds(src.len(), tgt.len())
        .map_err(|e| e.at(Stage::Matching))?;
    let (src, tgt) = level_clouds(src, tgt, config);
    let mut result = solve(&src, &tgt, corr, config, StageTimings::default())?;
    result.transform = restore_attitude(result.transform, config);
    result.timings.total = start.elapsed();
    Ok(result)
}

fn level_clouds<'a>(
    src: &'a PointCloud,
    tgt: &'a PointCloud,
    config: &PipelineConfig,
) -> (std::borrow::Cow<'a, PointCloud>, std::borrow::Cow<'a, PointCloud>) {
    use std::borrow::Cow;
    match &config.ins {
        None => (Cow::Borrowed(src), Cow::Borrowed(tgt)),
        Some(ins) => {
            let level = |c: &'a PointCloud, a: &Attitude| {
                if a.is_level() {
                    Cow::Borrowed(c)
                } else {
                    Cow::Owned(apply_ins_alignment(c, a.roll, a.pitch))
                }
            };
            (level(src, &ins.src), level(tgt, &ins.tgt))
        }
    }
}

/// Maps an estimate between the levelled clouds back to the captured
/// frames: `R = A_tgt · R_level · A_srcᵀ`, `t = A_tgt · t_level`.
fn restore_attitude(level: RigidTransform, config: &PipelineConfig) -> RigidTransform {
    match &config.ins {
        Some(ins) if !(ins.src.is_level() && ins.tgt.is_level()) => {
            let (a_s, a_t) = (ins.src.matrix(), ins.tgt.matrix());
            RigidTransform {
                rotation: a_t * level.rotation * a_s.transpose(),
                translation: a_t * level.translation,
                mode: RotationMode::FullSo3,
                degenerate: level.degenerate,
            }
        }
        _ => level,
    }
}

/// Everything from pruning onward, in the levelled frame.
fn solve(
    src: &PointCloud,
    tgt: &PointCloud,
    corr: &CorrespondenceSet,
    config: &PipelineConfig,
    mut timings: StageTimings,
) -> Result<RegistrationResult> {
    if config.solver == Solver::Ransac {
        let mut r = register_ransac(
            src,
            tgt,
            corr,
            config.ransac.iterations,
            config.ransac_thresh(),
            config.ransac.seed,
        )?;
        r.timings.preprocess = timings.preprocess;
        r.timings.features = timings.features;
        r.timings.matching = timings.matching;
        return refine_result(src, tgt, r, config);
    }
    let mode = config.rotation_mode();

    let t = Instant::now();
    let graph = build_compat_graph(src, tgt, corr, config.compat_scale);
    let clique = mcis_heuristic(&graph);
    let (pruned, tims) = filter_by_clique(src, tgt, corr, &clique).map_err(|e| e.at(Stage::Pruning))?;
    timings.pruning = t.elapsed();

    let opt = Instant::now();
    let (rotation, inlier_tims, degenerate) = if tims.is_empty() {
        if mode == RotationMode::FullSo3 {
            return Err(Error::DegenerateRotation {
                detail: "clique holds a single correspondence",
                last_yaw: None,
            }
            .at(Stage::Rotation));
        }
        (Matrix3::identity(), Vec::new(), true)
    } else {
        let scales: Option<Vec<f64>> = config.gnc.sigma_normalized.then(|| {
            let c = pruned.pairs();
            (0..c.len()).map(|k| c[k].sigma + c[(k + 1) % c.len()].sigma).collect()
        });
        let outcome = GncSolver::with_scales(&tims, scales.as_deref(), config.gnc, mode).and_then(GncSolver::run);
        match (outcome, mode) {
            (Ok(est), RotationMode::FullSo3) if est.degenerate => {
                return Err(Error::DegenerateRotation {
                    detail: "fewer than three inlier TIMs",
                    last_yaw: None,
                }
                .at(Stage::Rotation));
            }
            (Ok(est), _) => (est.rotation, est.inlier_tims, est.degenerate),
            (Err(Error::DegenerateRotation { last_yaw, .. }), RotationMode::QuasiSo3) => {
                let yaw = last_yaw.unwrap_or(0.0);
                (crate::geometry::rot_z(yaw), Vec::new(), true)
            }
            (Err(e), _) => return Err(e.at(Stage::Rotation)),
        }
    };
    timings.rotation = opt.elapsed();

    let t = Instant::now();
    let cote_set = if config.cote_rotation_inliers_only && !inlier_tims.is_empty() {
        let n = pruned.len();
        let mut touched: Vec<usize> = inlier_tims.iter().flat_map(|&k| [k, (k + 1) % n]).collect();
        touched.sort_unstable();
        touched.dedup();
        pruned.select(&touched)
    } else {
        pruned.clone()
    };
    let meas = build_measurements(src, tgt, &cote_set, &rotation).map_err(|e| e.at(Stage::Translation))?;
    let translation = estimate_translation(&meas, config.gnc.cbar).map_err(|e| e.at(Stage::Translation))?;
    timings.translation = t.elapsed();
    timings.optimization = opt.elapsed();

    let transform = RigidTransform {
        rotation,
        translation: translation.translation,
        mode,
        degenerate,
    };
    let result = RegistrationResult {
        transform,
        num_raw_corr: corr.len(),
        num_pruned_corr: pruned.len(),
        rotation_inliers: inlier_tims.len(),
        degenerate,
        solver: config.solver,
        timings,
    };
    refine_result(src, tgt, result, config)
}

fn refine_result(
    src: &PointCloud,
    tgt: &PointCloud,
    mut result: RegistrationResult,
    config: &PipelineConfig,
) -> Result<RegistrationResult> {
    if config.refine {
        let t = Instant::now();
        let icp = refine_icp(
            src,
            tgt,
            &result.transform,
            config.icp.max_corr_dist,
            config.icp.max_iters,
        );
        result.transform = icp.transform;
        result.timings.refine = t.elapsed();
    }
    Ok(result)
}

/// Least-squares rigid fit `q ≈ R p + t` (Kabsch). `None` when the source
/// points are collinear or fewer than three.
pub fn fit_rigid(src: &[Point3], tgt: &[Point3]) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    assert_eq!(src.len(), tgt.len());
    let n = src.len();
    if n < 3 {
        return None;
    }
    let inv = 1.0 / n as f64;
    let cp = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) * inv;
    let cq = tgt.iter().fold(Vector3::zeros(), |a, q| a + q.coords) * inv;
    let h = src.iter().zip(tgt).fold(Matrix3::zeros(), |acc, (p, q)| {
        acc + (p.coords - cp) * (q.coords - cq).transpose()
    });
    let svd = SVD::new(h, true, true);
    let s = svd.singular_values;
    let mut sorted = [s[0], s[1], s[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-12 * sorted[0] {
        return None;
    }
    let (u, v) = (svd.u?, svd.v_t?.transpose());
    let d = (v * u.transpose()).determinant().signum();
    let imin = (0..3).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap_or(2);
    let mut diag = Vector3::from_element(1.0);
    diag[imin] = d;
    let r = v * Matrix3::from_diagonal(&diag) * u.transpose();
    Some((r, cq - r * cp))
}

/// Seeded RANSAC over 3-point samples. Total failure returns the identity
/// flagged degenerate.
pub fn register_ransac(
    src: &PointCloud,
    tgt: &PointCloud,
    corr: &CorrespondenceSet,
    iterations: usize,
    inlier_thresh: f64,
    seed: u64,
) -> Result<RegistrationResult> {
    corr.check_bounds(src.len(), tgt.len())
        .map_err(|e| e.at(Stage::Matching))?;
    let start = Instant::now();
    let n = corr.len();
    let failure = |timings| RegistrationResult {
        transform: RigidTransform::identity().with_degenerate(true),
        num_raw_corr: n,
        num_pruned_corr: n,
        rotation_inliers: 0,
        degenerate: true,
        solver: Solver::Ransac,
        timings,
    };
    if n < 3 {
        return Ok(failure(StageTimings::default()));
    }
    let (p, q) = (src.points(), tgt.points());
    let ps: Vec<Point3> = corr.iter().map(|c| p[c.src]).collect();
    let qs: Vec<Point3> = corr.iter().map(|c| q[c.tgt]).collect();
    let t2 = inlier_thresh * inlier_thresh;
    let inliers_of = |r: &Matrix3<f64>, t: &Vector3<f64>| -> Vec<usize> {
        (0..n)
            .filter(|&k| (qs[k].coords - (r * ps[k].coords + t)).norm_squared() <= t2)
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Matrix3<f64>, Vector3<f64>, Vec<usize>)> = None;
    for _ in 0..iterations {
        let idx = sample(&mut rng, n, 3);
        let sp: Vec<Point3> = idx.iter().map(|k| ps[k]).collect();
        let sq: Vec<Point3> = idx.iter().map(|k| qs[k]).collect();
        let Some((r, t)) = fit_rigid(&sp, &sq) else { continue };
        let inl = inliers_of(&r, &t);
        if best.as_ref().is_none_or(|b| inl.len() > b.2.len()) {
            best = Some((r, t, inl));
        }
    }
    let mut timings = StageTimings::default();
    let Some((mut r, mut t, mut inl)) = best.filter(|b| b.2.len() >= 3) else {
        timings.optimization = start.elapsed();
        return Ok(failure(timings));
    };
    let sp: Vec<Point3> = inl.iter().map(|&k| ps[k]).collect();
    let sq: Vec<Point3> = inl.iter().map(|&k| qs[k]).collect();
    if let Some((r2, t2)) = fit_rigid(&sp, &sq) {
        let inl2 = inliers_of(&r2, &t2);
        if inl2.len() >= inl.len() {
            (r, t, inl) = (r2, t2, inl2);
        }
    }
    timings.optimization = start.elapsed();
    Ok(RegistrationResult {
        transform: RigidTransform::new(r, t, RotationMode::FullSo3),
        num_raw_corr: n,
        num_pruned_corr: n,
        rotation_inliers: inl.len(),
        degenerate: false,
        solver: Solver::Ransac,
        timings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Mean squared association distance at the initial transform.
    pub mse_initial: f64,
    pub mse_final: f64,
    pub iterations: usize,
    /// No source point had a target within `max_corr_dist` initially.
    pub no_progress: bool,
}

/// Point-to-point ICP. Returns the lowest-MSE transform visited, so the
/// result never scores worse than `initial`.
pub fn refine_icp(
    src: &PointCloud,
    tgt: &PointCloud,
    initial: &RigidTransform,
    max_corr_dist: f64,
    max_iters: usize,
) -> IcpResult {
    let index = PointIndex::new(tgt.points());
    let d2 = max_corr_dist * max_corr_dist;
    let associate = |r: &Matrix3<f64>, t: &Vector3<f64>| {
        let mut ps = Vec::new();
        let mut qs = Vec::new();
        let mut sum = 0.0;
        for p in src.points() {
            let moved = Point3::from(r * p.coords + t);
            if let Some((j, dist)) = index.nearest(&moved) {
                if dist <= d2 {
                    ps.push(*p);
                    qs.push(tgt.points()[j]);
                    sum += dist;
                }
            }
        }
        let mse = if ps.is_empty() {
            f64::INFINITY
        } else {
            sum / ps.len() as f64
        };
        (ps, qs, mse)
    };

    let (mut ps, mut qs, mse0) = associate(&initial.rotation, &initial.translation);
    if ps.is_empty() {
        return IcpResult {
            transform: *initial,
            mse_initial: f64::INFINITY,
            mse_final: f64::INFINITY,
            iterations: 0,
            no_progress: true,
        };
    }
    let (mut best_r, mut best_t, mut best_mse) = (initial.rotation, initial.translation, mse0);
    let mut prev = mse0;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let Some((r, t)) = fit_rigid(&ps, &qs) else { break };
        let (nps, nqs, mse) = associate(&r, &t);
        if nps.is_empty() {
            break;
        }
        if mse < best_mse {
            (best_r, best_t, best_mse) = (r, t, mse);
        }
        let done = (prev - mse).abs() < 1e-8;
        (ps, qs, prev) = (nps, nqs, mse);
        if done {
            break;
        }
    }
    let transform = if best_mse < mse0 {
        RigidTransform {
            rotation: best_r,
            translation: best_t,
            mode: RotationMode::FullSo3,
            degenerate: initial.degenerate,
        }
    } else {
        *initial
    };
    IcpResult {
        transform,
        mse_initial: mse0,
        mse_final: best_mse,
        iterations,
        no_progress: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_transform, rot_z};
    use crate::metrics::rotation_error;
    use rand::{Rng, SeedableRng};

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-20.0..20.0),
                        rng.random_range(-20.0..20.0),
                        rng.random_range(-2.0..5.0),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn identity_corr(n: usize) -> CorrespondenceSet {
        let pairs: Vec<_> = (0..n).map(|i| (i, i)).collect();
        CorrespondenceSet::from_pairs(&pairs, 0.3).unwrap()
    }

    #[test]
    fn identity_correspondences_give_identity() {
        let c = random_cloud(50, 1);
        let r = register_with_correspondences(&c, &c, &identity_corr(50), &PipelineConfig::default()).unwrap();
        assert!((r.transform.rotation - Matrix3::identity()).norm() < 1e-9);
        assert!(r.transform.translation.norm() < 1e-9);
        assert!(!r.degenerate);
        assert_eq!((r.num_raw_corr, r.num_pruned_corr), (50, 50));
    }

    #[test]
    fn noiseless_composition_is_exact() {
        let src = random_cloud(60, 2);
        let gt = RigidTransform::from_yaw(1.2, Vector3::new(4.0, -2.0, 0.7));
        let tgt = apply_transform(&src, &gt);
        let r = register_with_correspondences(&src, &tgt, &identity_corr(60), &PipelineConfig::default()).unwrap();
        let mean: f64 = src
            .points()
            .iter()
            .zip(tgt.points())
            .map(|(p, q)| (r.transform.apply(p) - q).norm())
            .sum::<f64>()
            / 60.0;
        assert!(mean < 1e-6, "{mean}");
        assert!(r.transform.is_valid(1e-9));
    }

    #[test]
    fn single_correspondence_is_translation_only() {
        let src = random_cloud(5, 3);
        let gt = RigidTransform::from_yaw(0.5, Vector3::new(1.0, 2.0, 3.0));
        let tgt = apply_transform(&src, &gt);
        let corr = CorrespondenceSet::from_pairs(&[(2, 2)], 0.3).unwrap();
        let r = register_with_correspondences(&src, &tgt, &corr, &PipelineConfig::default()).unwrap();
        assert!(r.degenerate && r.transform.degenerate);
        assert_eq!(r.transform.rotation, Matrix3::identity());
        let v = tgt.points()[2].coords - src.points()[2].coords;
        assert!((r.transform.translation - v).norm() < 1e-12);

        let full = PipelineConfig {
            solver: Solver::FullGnc,
            ..Default::default()
        };
        let err = register_with_correspondences(&src, &tgt, &corr, &full).unwrap_err();
        assert!(err.is_degenerate_rotation());
        assert_eq!(err.stage(), Some(Stage::Rotation));
    }

    #[test]
    fn out_of_range_correspondence_is_reported() {
        let c = random_cloud(5, 4);
        let corr = CorrespondenceSet::from_pairs(&[(0, 0), (1, 7)], 0.3).unwrap();
        let err = register_with_correspondences(&c, &c, &corr, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err.root(), Error::IndexOutOfRange { index: 7, .. }));
    }

    #[test]
    fn injected_outliers_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = random_cloud(200, 5);
        let gt = RigidTransform::from_yaw(-0.8, Vector3::new(3.0, 1.0, -0.2));
        let tgt = apply_transform(&src, &gt);
        let pairs: Vec<_> = (0..200)
            .map(|i| {
                if i % 4 == 0 {
                    (i, i)
                } else {
                    (i, rng.random_range(0..200))
                }
            })
            .collect();
        let mut seen = std::collections::HashSet::new();
        let pairs: Vec<_> = pairs.into_iter().filter(|p| seen.insert(*p)).collect();
        let corr = CorrespondenceSet::from_pairs(&pairs, 0.3).unwrap();
        let r = register_with_correspondences(&src, &tgt, &corr, &PipelineConfig::default()).unwrap();
        assert!(rotation_error(&r.transform.rotation, &gt.rotation) < 1.0);
        assert!((r.transform.translation - gt.translation).norm() < 0.2);
        assert!(r.num_pruned_corr <= r.num_raw_corr);
    }

    #[test]
    fn ins_alignment_round_trip() {
        let c = random_cloud(20, 6);
        assert_eq!(apply_ins_alignment(&c, 0.0, 0.0), c);
        let tilted = rotate_cloud(&c, &Attitude::new(0.03, -0.08).matrix());
        let back = apply_ins_alignment(&tilted, 0.03, -0.08);
        for (a, b) in back.points().iter().zip(c.points()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn ins_plane_becomes_level() {
        // a plane inclined by 5 degrees of pitch
        let pitch = 5f64.to_radians();
        let level: Vec<Point3> = (0..100)
            .map(|i| Point3::new((i % 10) as f64, (i / 10) as f64, 0.0))
            .collect();
        let tilted = rotate_cloud(&PointCloud::new(level).unwrap(), &rot_y(pitch));
        let aligned = apply_ins_alignment(&tilted, 0.0, pitch);
        let normals = estimate_normals(&aligned, 1.5).unwrap();
        for n in normals.iter().flatten() {
            let angle = n.z.abs().clamp(-1.0, 1.0).acos().to_degrees();
            assert!(angle < 0.01, "{angle}");
        }
    }

    #[test]
    fn ins_reconstruction_recovers_full_rotation() {
        let level_src = random_cloud(80, 7);
        let yaw_t = RigidTransform::from_yaw(0.6, Vector3::new(2.0, -1.0, 0.3));
        let level_tgt = apply_transform(&level_src, &yaw_t);
        let (a_s, a_t) = (Attitude::new(0.04, -0.07), Attitude::new(-0.02, 0.05));
        let src = rotate_cloud(&level_src, &a_s.matrix());
        let tgt = rotate_cloud(&level_tgt, &a_t.matrix());
        let config = PipelineConfig {
            ins: Some(InsReadings { src: a_s, tgt: a_t }),
            ..Default::default()
        };
        let r = register_with_correspondences(&src, &tgt, &identity_corr(80), &config).unwrap();
        for (p, q) in src.points().iter().zip(tgt.points()) {
            assert!((r.transform.apply(p) - q).norm() < 1e-6);
        }
        assert!(r.transform.is_valid(1e-9));
    }

    #[test]
    fn ransac_exact_on_clean_data_and_deterministic() {
        let src = random_cloud(100, 8);
        let gt = RigidTransform::new(
            rot_z(0.7) * rot_x(0.1),
            Vector3::new(1.0, -3.0, 2.0),
            RotationMode::FullSo3,
        );
        let tgt = apply_transform(&src, &gt);
        let corr = identity_corr(100);
        let a = register_ransac(&src, &tgt, &corr, 100, 0.3, 42).unwrap();
        assert!((a.transform.rotation - gt.rotation).norm() < 1e-9);
        assert!((a.transform.translation - gt.translation).norm() < 1e-9);
        assert_eq!(a.rotation_inliers, 100);
        let b = register_ransac(&src, &tgt, &corr, 100, 0.3, 42).unwrap();
        assert!(a.same_estimate(&b));

        let two = CorrespondenceSet::from_pairs(&[(0, 0), (1, 1)], 0.3).unwrap();
        let r = register_ransac(&src, &tgt, &two, 100, 0.3, 1).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.transform.rotation, Matrix3::identity());
    }

    #[test]
    fn ransac_solver_via_pipeline_config() {
        let src = random_cloud(40, 9);
        let gt = RigidTransform::from_yaw(0.2, Vector3::new(0.5, 0.5, 0.0));
        let tgt = apply_transform(&src, &gt);
        let config = PipelineConfig {
            solver: Solver::Ransac,
            ..Default::default()
        };
        let r = register_with_correspondences(&src, &tgt, &identity_corr(40), &config).unwrap();
        assert_eq!(r.solver, Solver::Ransac);
        assert!((r.transform.translation - gt.translation).norm() < 1e-9);
    }

    #[test]
    fn fit_rigid_rejects_collinear_points() {
        let line: Vec<Point3> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(fit_rigid(&line, &line).is_none());
        assert!(fit_rigid(&line[..2], &line[..2]).is_none());
    }

    #[test]
    fn icp_keeps_ground_truth() {
        let src = random_cloud(300, 10);
        let gt = RigidTransform::from_yaw(0.3, Vector3::new(0.2, 0.1, 0.0));
        let tgt = apply_transform(&src, &gt);
        let r = refine_icp(&src, &tgt, &gt, 1.0, 30);
        assert!(r.mse_final <= r.mse_initial);
        assert!((r.transform.rotation - gt.rotation).norm() < 1e-9);
        assert!((r.transform.translation - gt.translation).norm() < 1e-9);
    }

    #[test]
    fn icp_without_associations_returns_initial() {
        let src = random_cloud(50, 11);
        let far = RigidTransform::from_yaw(0.0, Vector3::new(200.0, 0.0, 0.0));
        let r = refine_icp(&src, &src, &far, 1.0, 30);
        assert!(r.no_progress);
        assert_eq!(r.transform, far);
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::outdoor().validate().unwrap().is_empty());
        assert_eq!(PipelineConfig::indoor().voxel_size, 0.1);
        let bad = PipelineConfig {
            voxel_size: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let odd = PipelineConfig {
            r_fpfh: 0.4,
            ..Default::default()
        };
        assert_eq!(odd.validate().unwrap().len(), 1);
        assert_eq!(PipelineConfig::default().sigma(), 0.3);
        assert_eq!("gnc".parse::<Solver>().unwrap(), Solver::FullGnc);
        assert!("foo".parse::<Solver>().is_err());
    }
}
