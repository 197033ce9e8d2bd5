//! Seeded pseudo-urban scene pairs with labelled correspondences.
//!
//! The source is a ground plane plus vertical structure sampled as columns
//! (facade strips and poles). The target is the rigidly moved source
//! restricted to an overlap region, with Gaussian noise. Outlier
//! correspondences point to uniformly random target points.
//!
//! With `inlier_floor = k` exactly `k` correspondences are true inliers.
//! The clique that survives pruning is completed with near misses of two
//! kinds: quasi-inliers pair a column point with a different point of the
//! same column (right xy, wrong z) and ground mismatches pair ground points
//! under a meter apart (right z, wrong xy). Consecutive members of that
//! clique always differ in pairwise length by more than the rotation
//! truncation bound, so no rotation can fit three full-SO(3) TIMs, while
//! the quasi-inliers still agree on yaw and the ground mismatches on
//! height.

use std::collections::HashSet;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Correspondence, CorrespondenceSet};
use crate::geometry::{rot_z, Point3, PointCloud, RigidTransform, RotationMode};
use crate::pipeline::Attitude;

const GROUND_Z: f64 = -1.7;
const STRUCTURE_HEIGHT: f64 = 8.0;
const POINTS_PER_COLUMN: usize = 6;
const COLUMN_SPACING: f64 = 0.4;
const QUASI_MIN_DZ: f64 = 0.5;
const GROUND_OFFSET: (f64, f64) = (0.3, 0.6);
/// Near-miss survivors per degenerate scene.
const QUASI_COUNT: usize = 8;
const GROUND_MISMATCH_COUNT: usize = 3;
/// Length mismatch window for consecutive near-miss survivors: above the
/// default truncation bound c̄ = 0.15 m with margin, below the pruning bound.
const CHAIN_MISMATCH_MIN: f64 = 0.25;
const CHAIN_MISMATCH_MAX: f64 = 0.5;
const PLACEMENT_ATTEMPTS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub n_points: usize,
    /// Side length of the square scene footprint in meters.
    pub extent: f64,
    pub yaw_deg: f64,
    /// Tilt of the source sensor, reported as its INS reading.
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub translation: [f64; 3],
    pub outlier_ratio: f64,
    pub noise_sigma: f64,
    pub inlier_floor: Option<usize>,
    pub seed: u64,
    pub n_correspondences: usize,
    /// Noise bound attached to every correspondence.
    pub sigma: f64,
    /// Fraction of the footprint (along x) visible in the target.
    pub overlap: f64,
    /// Standard deviation of the simulated INS error in degrees.
    pub ins_noise_deg: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_points: 2000,
            extent: 40.0,
            yaw_deg: 30.0,
            roll_deg: 0.0,
            pitch_deg: 0.0,
            translation: [4.0, 2.0, 0.0],
            outlier_ratio: 0.5,
            noise_sigma: 0.01,
            inlier_floor: None,
            seed: 0,
            n_correspondences: 500,
            sigma: 0.3,
            overlap: 0.8,
            ins_noise_deg: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.n_points < 4 {
            return bad(format!("n_points must be at least 4, got {}", self.n_points));
        }
        if !(0.0..1.0).contains(&self.outlier_ratio) {
            return bad(format!("outlier_ratio must lie in [0, 1), got {}", self.outlier_ratio));
        }
        if self.n_correspondences == 0 || self.n_correspondences > self.n_points {
            return bad(format!(
                "n_correspondences must lie in [1, n_points], got {}",
                self.n_correspondences
            ));
        }
        if !(self.extent > 0.0) || !(self.sigma > 0.0) {
            return bad("extent and sigma must be positive".into());
        }
        if !(self.noise_sigma >= 0.0) || !(self.ins_noise_deg >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if !(self.overlap > 0.0 && self.overlap <= 1.0) {
            return bad(format!("overlap must lie in (0, 1], got {}", self.overlap));
        }
        let angles = [self.yaw_deg, self.roll_deg, self.pitch_deg];
        if !angles.iter().chain(&self.translation).all(|v| v.is_finite()) {
            return bad("pose parameters must be finite".into());
        }
        Ok(())
    }

    pub fn attitude(&self) -> Attitude {
        Attitude::new(self.roll_deg.to_radians(), self.pitch_deg.to_radians())
    }

    /// Source-to-target transform of the generated pair.
    pub fn ground_truth(&self) -> RigidTransform {
        let a = self.attitude();
        let t = Vector3::from(self.translation);
        if a.is_level() {
            RigidTransform::from_yaw(self.yaw_deg.to_radians(), t)
        } else {
            RigidTransform::new(
                rot_z(self.yaw_deg.to_radians()) * a.matrix().transpose(),
                t,
                RotationMode::FullSo3,
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Inlier,
    QuasiInlier,
    GroundMismatch,
    Outlier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub src: PointCloud,
    pub tgt: PointCloud,
    pub corr: CorrespondenceSet,
    /// True for correspondences that satisfy `q = R p + t + noise`.
    pub labels: Vec<bool>,
    pub kinds: Vec<PairKind>,
    pub ground_truth: RigidTransform,
    /// INS reading of the source sensor (possibly perturbed).
    pub ins: Attitude,
}

impl Scene {
    pub fn inlier_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

struct Layout {
    level: Vec<Point3>,
    /// Column id per point, `None` for ground points.
    column_of: Vec<Option<usize>>,
    columns: Vec<Vec<usize>>,
}

fn layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Layout {
    let h = spec.extent / 2.0;
    let n_ground = spec.n_points / 2;
    let n_columns = (spec.n_points - n_ground).div_ceil(POINTS_PER_COLUMN);
    let mut level = Vec::with_capacity(spec.n_points);
    let mut column_of = Vec::with_capacity(spec.n_points);
    for _ in 0..n_ground {
        level.push(Point3::new(rng.random_range(-h..h), rng.random_range(-h..h), GROUND_Z));
        column_of.push(None);
    }

    // facade strips along a few dominant directions, plus free-standing poles
    let n_facade = n_columns * 7 / 10;
    let n_walls = (n_facade / 20).max(1);
    let base: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
    let walls: Vec<(f64, f64, f64)> = (0..n_walls)
        .map(|w| {
            let dir = base + (w % 4) as f64 * std::f64::consts::FRAC_PI_2 + rng.random_range(-0.05..0.05);
            (rng.random_range(-h..h), rng.random_range(-h..h), dir)
        })
        .collect();
    let mut columns = Vec::with_capacity(n_columns);
    for c in 0..n_columns {
        let (x, y) = if c < n_facade {
            let (x0, y0, dir) = walls[c % n_walls];
            let s = (c / n_walls) as f64 * COLUMN_SPACING;
            (x0 + s * dir.cos(), y0 + s * dir.sin())
        } else {
            (rng.random_range(-h..h), rng.random_range(-h..h))
        };
        let mut members = Vec::new();
        for _ in 0..POINTS_PER_COLUMN {
            if level.len() == spec.n_points {
                break;
            }
            members.push(level.len());
            level.push(Point3::new(x, y, GROUND_Z + rng.random_range(0.0..STRUCTURE_HEIGHT)));
            column_of.push(Some(c));
        }
        columns.push(members);
    }
    Layout {
        level,
        column_of,
        columns,
    }
}

/// Builds a scene pair. A fixed spec (including its seed) always yields the
/// same scene bit for bit.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let Layout {
        level,
        column_of,
        columns,
    } = layout(spec, &mut rng);
    let attitude = spec.attitude();
    let gt = spec.ground_truth();

    let src_points: Vec<Point3> = if attitude.is_level() {
        level.clone()
    } else {
        let a = attitude.matrix();
        level.iter().map(|p| Point3::from(a * p.coords)).collect()
    };

    let x_max = -spec.extent / 2.0 + spec.overlap * spec.extent;
    let mut visible: Vec<usize> = (0..level.len()).filter(|&i| level[i].x <= x_max).collect();
    visible.shuffle(&mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Spec(e.to_string()))?;
    let yaw = rot_z(spec.yaw_deg.to_radians());
    let t = Vector3::from(spec.translation);
    let mut match_of = vec![None; level.len()];
    let mut tgt_points = Vec::with_capacity(visible.len());
    for (j, &i) in visible.iter().enumerate() {
        let clean = if attitude.is_level() {
            gt.apply(&src_points[i])
        } else {
            Point3::from(yaw * level[i].coords + t)
        };
        let jitter = if spec.noise_sigma > 0.0 {
            Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
        } else {
            Vector3::zeros()
        };
        tgt_points.push(clean + jitter);
        match_of[i] = Some(j);
    }
    let src = PointCloud::new(src_points)?.with_frame("source");
    let tgt = PointCloud::new(tgt_points)?.with_frame("target");

    let n = spec.n_correspondences;
    let n_inliers = ((1.0 - spec.outlier_ratio) * n as f64).round() as usize;
    if n_inliers > visible.len() {
        return Err(Error::Spec(format!(
            "{n_inliers} inliers requested but only {} source points are visible",
            visible.len()
        )));
    }

    let mut chosen: Vec<(usize, usize, PairKind)> = match spec.inlier_floor {
        None => {
            let mut pool = visible.clone();
            pool.shuffle(&mut rng);
            pool[..n_inliers]
                .iter()
                .map(|&i| (i, match_of[i].expect("visible point"), PairKind::Inlier))
                .collect()
        }
        Some(k) => {
            if k > n_inliers {
                return Err(Error::Spec(format!(
                    "inlier_floor {k} exceeds the {n_inliers} available inliers"
                )));
            }
            let ctx = ChainContext {
                src: &src,
                tgt: &tgt,
                level: &level,
                column_of: &column_of,
                columns: &columns,
                match_of: &match_of,
                visible: &visible,
            };
            let budget = n_inliers - k;
            let quasi = QUASI_COUNT.min(budget);
            let ground = GROUND_MISMATCH_COUNT.min(budget - quasi);
            degenerate_chain(&ctx, k, quasi, ground, &mut rng)?
        }
    };

    // outliers from unused source points, re-drawn if they hit the true match
    let used: HashSet<usize> = chosen.iter().map(|c| c.0).collect();
    let mut remaining: Vec<usize> = (0..level.len()).filter(|i| !used.contains(i)).collect();
    remaining.shuffle(&mut rng);
    let n_out = n - chosen.len();
    if n_out > remaining.len() {
        return Err(Error::Spec("not enough source points for the outliers".into()));
    }
    for &i in &remaining[..n_out] {
        let j = loop {
            let j = rng.random_range(0..tgt.len());
            if match_of[i] != Some(j) || tgt.len() == 1 {
                break j;
            }
        };
        chosen.push((i, j, PairKind::Outlier));
    }

    // survivors keep their chain order at sorted random positions; the rest
    // fill the gaps in random order
    let n_chain = if spec.inlier_floor.is_some() { n - n_out } else { 0 };
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(&mut rng);
    let (chain_pos, rest_pos) = positions.split_at_mut(n_chain);
    chain_pos.sort_unstable();
    let mut slots: Vec<Option<(usize, usize, PairKind)>> = vec![None; n];
    for (k, &p) in chain_pos.iter().enumerate() {
        slots[p] = Some(chosen[k]);
    }
    let mut others = chosen[n_chain..].to_vec();
    others.shuffle(&mut rng);
    for (&p, c) in rest_pos.iter().zip(others) {
        slots[p] = Some(c);
    }
    let ordered: Vec<(usize, usize, PairKind)> = slots.into_iter().map(|s| s.expect("every slot filled")).collect();

    let corr = CorrespondenceSet::new(
        ordered
            .iter()
            .map(|&(src, tgt, _)| Correspondence {
                src,
                tgt,
                sigma: spec.sigma,
            })
            .collect(),
    )?;
    let kinds: Vec<PairKind> = ordered.iter().map(|c| c.2).collect();
    let labels = kinds.iter().map(|&k| k == PairKind::Inlier).collect();

    let ins = if spec.ins_noise_deg > 0.0 {
        let d = Normal::new(0.0, spec.ins_noise_deg.to_radians()).map_err(|e| Error::Spec(e.to_string()))?;
        Attitude::new(attitude.roll + d.sample(&mut rng), attitude.pitch + d.sample(&mut rng))
    } else {
        attitude
    };
    Ok(Scene {
        src,
        tgt,
        corr,
        labels,
        kinds,
        ground_truth: gt,
        ins,
    })
}

struct ChainContext<'a> {
    src: &'a PointCloud,
    tgt: &'a PointCloud,
    level: &'a [Point3],
    column_of: &'a [Option<usize>],
    columns: &'a [Vec<usize>],
    match_of: &'a [Option<usize>],
    visible: &'a [usize],
}

impl ChainContext<'_> {
    fn mismatch(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let dp = (self.src.points()[a.0] - self.src.points()[b.0]).norm();
        let dq = (self.tgt.points()[a.1] - self.tgt.points()[b.1]).norm();
        (dp - dq).abs()
    }

    fn fits(&self, chain: &[(usize, usize, PairKind)], cand: (usize, usize)) -> bool {
        if chain.iter().any(|c| c.0 == cand.0 || c.1 == cand.1) {
            return false;
        }
        let all_close = chain
            .iter()
            .all(|c| self.mismatch((c.0, c.1), cand) <= CHAIN_MISMATCH_MAX);
        let apart_from_prev = chain
            .last()
            .is_none_or(|c| self.mismatch((c.0, c.1), cand) >= CHAIN_MISMATCH_MIN);
        all_close && apart_from_prev
    }

    /// Every source column point paired with the image of a column mate at
    /// least `QUASI_MIN_DZ` above or below it.
    fn quasi_candidates(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &i in self.visible {
            let Some(col) = self.column_of[i] else { continue };
            for &m in &self.columns[col] {
                if m != i && (self.level[m].z - self.level[i].z).abs() >= QUASI_MIN_DZ {
                    out.extend(self.match_of[m].map(|j| (i, j)));
                }
            }
        }
        out
    }

    /// Every ground point paired with the image of a ground point within
    /// `GROUND_OFFSET` horizontally.
    fn ground_candidates(&self) -> Vec<(usize, usize)> {
        let ground: Vec<usize> = self
            .visible
            .iter()
            .copied()
            .filter(|&i| self.column_of[i].is_none())
            .collect();
        let mut out = Vec::new();
        for &i in &ground {
            for &m in &ground {
                let d = (self.level[m] - self.level[i]).xy().norm();
                if (GROUND_OFFSET.0..=GROUND_OFFSET.1).contains(&d) {
                    out.extend(self.match_of[m].map(|j| (i, j)));
                }
            }
        }
        out
    }

    fn closes(&self, chain: &[(usize, usize, PairKind)], cand: (usize, usize)) -> bool {
        self.mismatch((chain[0].0, chain[0].1), cand) >= CHAIN_MISMATCH_MIN
    }
}

/// Inliers first, then ground mismatches, then quasi-inliers, in chain
/// order. Near misses that cannot be placed within the attempt budget are
/// dropped.
fn degenerate_chain(
    ctx: &ChainContext<'_>,
    k: usize,
    quasi: usize,
    ground: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize, PairKind)>> {
    let mut chain: Vec<(usize, usize, PairKind)> = Vec::new();
    let mut pool = ctx.visible.to_vec();
    pool.shuffle(rng);
    for &i in &pool {
        if chain.len() == k {
            break;
        }
        let j = ctx.match_of[i].expect("visible point");
        if chain
            .iter()
            .all(|c| ctx.mismatch((c.0, c.1), (i, j)) <= CHAIN_MISMATCH_MAX)
        {
            chain.push((i, j, PairKind::Inlier));
        }
    }
    if chain.len() < k {
        return Err(Error::Spec(format!("could not place {k} inliers")));
    }
    let mut candidates = [ctx.ground_candidates(), ctx.quasi_candidates()];
    let targets = [(ground, PairKind::GroundMismatch), (quasi, PairKind::QuasiInlier)];
    for (pool, &(count, kind)) in candidates.iter_mut().zip(&targets) {
        pool.shuffle(rng);
        let mut placed = 0;
        for &c in pool.iter().take(PLACEMENT_ATTEMPTS) {
            if placed == count {
                break;
            }
            if ctx.fits(&chain, c) {
                chain.push((c.0, c.1, kind));
                placed += 1;
            }
        }
    }
    // the chain closes from the last member back to the first; a closing
    // replacement is tried before dropping the last member
    while chain.len() > k && !ctx.closes(&chain, (chain[chain.len() - 1].0, chain[chain.len() - 1].1)) {
        let (_, _, kind) = chain.pop().expect("non-empty chain");
        let pool = &candidates[usize::from(kind == PairKind::QuasiInlier)];
        if let Some(&c) = pool
            .iter()
            .take(PLACEMENT_ATTEMPTS)
            .find(|&&c| ctx.fits(&chain, c) && ctx.closes(&chain, c))
        {
            chain.push((c.0, c.1, kind));
            break;
        }
    }
    Ok(chain)
}
