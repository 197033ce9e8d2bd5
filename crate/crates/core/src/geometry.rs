//! Core geometric types plus voxel downsampling and normal estimation.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::PointIndex;

pub type Point3 = nalgebra::Point3<f64>;

/// Unit surface normal.
pub type Normal3 = Unit<Vector3<f64>>;

/// Ordered set of 3D points in meters, assumed gravity aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    frame: String,
}

impl PointCloud {
    /// Builds a cloud, rejecting NaN or infinite coordinates.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(index) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinitePoint { index });
        }
        Ok(Self {
            points,
            frame: String::new(),
        })
    }

    pub fn from_xyz(xyz: &[[f64; 3]]) -> Result<Self> {
        Self::new(xyz.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect())
    }

    pub fn with_frame(mut self, frame: impl Into<String>) -> Self {
        self.frame = frame.into();
        self
    }

    pub fn frame(&self) -> &str {
        &self.frame
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub(crate) fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyCloud)
        } else {
            Ok(())
        }
    }

    fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
            frame: self.frame.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RotationMode {
    FullSo3,
    #[default]
    QuasiSo3,
}

/// Rotation about x by `angle` radians.
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotation about y by `angle` radians.
pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about z (yaw) by `angle` radians.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation plus translation mapping source coordinates into the target
/// frame, `q = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub mode: RotationMode,
    /// Set when the estimate was produced with fewer supporting
    /// measurements than the rotation model needs.
    pub degenerate: bool,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros(), RotationMode::FullSo3)
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, mode: RotationMode) -> Self {
        Self {
            rotation,
            translation,
            mode,
            degenerate: false,
        }
    }

    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self::new(rot_z(yaw), translation, RotationMode::QuasiSo3)
    }

    pub fn with_degenerate(mut self, degenerate: bool) -> Self {
        self.degenerate = degenerate;
        self
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
            mode: self.mode,
            degenerate: self.degenerate,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            mode: if self.mode == other.mode {
                self.mode
            } else {
                RotationMode::FullSo3
            },
            degenerate: self.degenerate || other.degenerate,
        }
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix4();
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    /// (yaw, pitch, roll) in radians for the `R_z · R_y · R_x` factorisation.
    pub fn yaw_pitch_roll(&self) -> (f64, f64, f64) {
        let r = &self.rotation;
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        if r[(2, 0)].abs() < 1.0 - 1e-12 {
            let yaw = r[(1, 0)].atan2(r[(0, 0)]);
            let roll = r[(2, 1)].atan2(r[(2, 2)]);
            (yaw, pitch, roll)
        } else {
            // gimbal lock: fold roll into yaw
            let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
            (yaw, pitch, 0.0)
        }
    }

    /// Checks `RᵀR = I` and `det R = 1` within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).norm() <= tol;
        ortho && (r.determinant() - 1.0).abs() <= tol && self.translation.iter().all(|c| c.is_finite())
    }
}

/// Maps every point through `transform`.
pub fn apply_transform(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    cloud.map_points(|p| transform.apply(p))
}

pub(crate) fn rotate_cloud(cloud: &PointCloud, rotation: &Matrix3<f64>) -> PointCloud {
    cloud.map_points(|p| Point3::from(rotation * p.coords))
}

/// One centroid per occupied voxel of a grid anchored at the origin.
/// Output is ordered by voxel key, so it does not depend on input order
/// beyond floating-point summation.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    cloud.require_non_empty()?;
    if !(voxel_size > 0.0) {
        return Err(Error::Config(format!("voxel size must be positive, got {voxel_size}")));
    }
    let mut cells: BTreeMap<(i64, i64, i64), (Vector3<f64>, usize)> = BTreeMap::new();
    for p in cloud.points() {
        let key = (
            (p.x / voxel_size).floor() as i64,
            (p.y / voxel_size).floor() as i64,
            (p.z / voxel_size).floor() as i64,
        );
        let cell = cells.entry(key).or_insert((Vector3::zeros(), 0));
        cell.0 += p.coords;
        cell.1 += 1;
    }
    let points = cells
        .into_values()
        .map(|(sum, n)| Point3::from(sum / n as f64))
        .collect();
    Ok(PointCloud {
        points,
        frame: cloud.frame.clone(),
    })
}

pub(crate) const MIN_NORMAL_NEIGHBORS: usize = 3;

/// Per-point normals from the covariance of the radius neighbourhood.
///
/// The normal is the eigenvector of the smallest covariance eigenvalue,
/// oriented so that `n · (origin − p) ≥ 0`. Points with fewer than three
/// neighbours (self included) get `None`.
pub fn estimate_normals(cloud: &PointCloud, radius: f64) -> Result<Vec<Option<Normal3>>> {
    if cloud.len() < MIN_NORMAL_NEIGHBORS {
        return Err(Error::InsufficientPoints {
            needed: MIN_NORMAL_NEIGHBORS,
            got: cloud.len(),
        });
    }
    if !(radius > 0.0) {
        return Err(Error::Config(format!("normal radius must be positive, got {radius}")));
    }
    let index = PointIndex::new(cloud.points());
    let pts = cloud.points();
    Ok(pts
        .iter()
        .map(|p| {
            let nbrs = index.within(p, radius);
            normal_from_neighbors(p, nbrs.iter().map(|&i| &pts[i]))
        })
        .collect())
}

fn normal_from_neighbors<'a>(p: &Point3, nbrs: impl Iterator<Item = &'a Point3> + Clone) -> Option<Normal3> {
    let n = nbrs.clone().count();
    if n < MIN_NORMAL_NEIGHBORS {
        return None;
    }
    let mean = nbrs.clone().fold(Vector3::zeros(), |acc, q| acc + q.coords) / n as f64;
    let cov = nbrs.fold(Matrix3::zeros(), |acc, q| {
        let d = q.coords - mean;
        acc + d * d.transpose()
    }) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let (imin, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let mut normal: Vector3<f64> = eig.eigenvectors.column(imin).into_owned();
    if normal.dot(&(-p.coords)) < 0.0 {
        normal = -normal;
    }
    Unit::try_new(normal, 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn cloud(xyz: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_xyz(xyz).unwrap()
    }

    #[test]
    fn rejects_non_finite_points() {
        let err = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [f64::NAN, 0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::NonFinitePoint { index: 1 }));
    }

    #[test]
    fn voxel_singleton_is_its_own_centroid() {
        let out = voxel_downsample(&cloud(&[[1.0, 2.0, 3.0]]), 0.3).unwrap();
        assert_eq!(out.points(), &[Point3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn voxel_merges_points_in_one_cell() {
        let out = voxel_downsample(&cloud(&[[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]), 0.3).unwrap();
        assert_eq!(out.len(), 1);
        assert_relative_eq!(out.points()[0], Point3::new(0.05, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn voxel_uses_floor_for_negative_coordinates() {
        let out = voxel_downsample(&cloud(&[[-0.1, 0.0, 0.0], [0.1, 0.0, 0.0]]), 0.3).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn voxel_errors() {
        assert!(matches!(voxel_downsample(&cloud(&[]), 0.3), Err(Error::EmptyCloud)));
        assert!(voxel_downsample(&cloud(&[[0.0; 3]]), 0.0).is_err());
    }

    #[test]
    fn planar_grid_normals_point_along_z() {
        let mut xyz = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                xyz.push([i as f64 * 0.1 - 0.5, j as f64 * 0.1 - 0.5, 1.0]);
            }
        }
        let normals = estimate_normals(&cloud(&xyz), 0.25).unwrap();
        for n in normals {
            let n = n.expect("grid points have neighbours");
            assert_relative_eq!(n.norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(n.z.abs(), 1.0, epsilon = 1e-9);
            // plane at z = 1 seen from the origin: normal points down
            assert!(n.z < 0.0);
        }
    }

    #[test]
    fn sparse_points_get_no_normal() {
        let normals = estimate_normals(&cloud(&[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0], [10.0, 0.0, 0.0]]), 1.0).unwrap();
        assert!(normals.iter().all(Option::is_none));
        assert!(matches!(
            estimate_normals(&cloud(&[[0.0; 3], [1.0; 3]]), 1.0),
            Err(Error::InsufficientPoints { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn transform_examples() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(apply_transform(&c, &RigidTransform::identity()), c);
        let shift = RigidTransform::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0), RotationMode::FullSo3);
        assert_eq!(apply_transform(&c, &shift).points()[0], Point3::new(1.0, 0.0, 0.0));
        let yaw = RigidTransform::from_yaw(FRAC_PI_2, Vector3::zeros());
        assert_relative_eq!(
            apply_transform(&c, &yaw).points()[1],
            Point3::new(0.0, 1.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn euler_decomposition_round_trips() {
        let r = rot_z(0.7) * rot_y(-0.2) * rot_x(0.1);
        let t = RigidTransform::new(r, Vector3::zeros(), RotationMode::FullSo3);
        let (y, p, ro) = t.yaw_pitch_roll();
        assert_relative_eq!(y, 0.7, epsilon = 1e-12);
        assert_relative_eq!(p, -0.2, epsilon = 1e-12);
        assert_relative_eq!(ro, 0.1, epsilon = 1e-12);
    }
}
