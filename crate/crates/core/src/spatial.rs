//! Thin wrapper over a k-d tree for the radius and nearest-neighbour
//! queries used by normal estimation, FPFH and ICP.

use kiddo::{ImmutableKdTree, SquaredEuclidean};

use crate::geometry::Point3;

pub(crate) struct PointIndex {
    tree: Option<ImmutableKdTree<f64, 3>>,
}

impl PointIndex {
    pub fn new(points: &[Point3]) -> Self {
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = if coords.is_empty() {
            None
        } else {
            Some(ImmutableKdTree::new_from_slice(&coords).expect("k-d tree construction"))
        };
        Self { tree }
    }

    /// Indices of all points within `radius` (inclusive), ascending by index.
    pub fn within(&self, p: &Point3, radius: f64) -> Vec<usize> {
        let Some(tree) = &self.tree else {
            return Vec::new();
        };
        let mut out: Vec<usize> = tree
            .query(&[p.x, p.y, p.z])
            .within::<SquaredEuclidean<f64>>(radius * radius)
            .execute()
            .into_iter()
            .map(|r| r.item as usize)
            .collect();
        out.sort_unstable();
        out
    }

    /// Nearest point and its squared distance.
    pub fn nearest(&self, p: &Point3) -> Option<(usize, f64)> {
        let tree = self.tree.as_ref()?;
        let r = tree
            .query(&[p.x, p.y, p.z])
            .nearest_one::<SquaredEuclidean<f64>>()
            .execute();
        Some((r.item as usize, r.distance))
    }
}
