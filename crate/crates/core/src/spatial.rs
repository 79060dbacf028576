//! Nearest-neighbour queries over 3D points, backed by a k-d tree.

use std::num::NonZeroUsize;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;

/// Static index over a point set; results refer to positions in the input slice.
pub struct PointIndex {
    tree: ImmutableKdTree<f64, 3>,
    len: usize,
}

impl PointIndex {
    /// Panics on an empty point set.
    pub fn new(points: &[Vector3<f64>]) -> Self {
        assert!(!points.is_empty(), "cannot index an empty point set");
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = ImmutableKdTree::new_from_slice(&raw).expect("k-d tree construction");
        Self {
            tree,
            len: points.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index and squared distance of the closest point.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        let r = self
            .tree
            .query(&[q.x, q.y, q.z])
            .nearest_one::<SquaredEuclidean<f64>>()
            .execute();
        (r.item as usize, r.distance)
    }

    /// Up to `k` closest points as `(index, squared distance)`, ordered by distance
    /// and then by index.
    pub fn nearest_n(&self, q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let k = NonZeroUsize::new(k.min(self.len)).expect("k >= 1");
        let mut out: Vec<(usize, f64)> = self
            .tree
            .query(&[q.x, q.y, q.z])
            .nearest_n::<SquaredEuclidean<f64>>(k)
            .execute()
            .into_iter()
            .map(|r| (r.item as usize, r.distance))
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Every point within squared distance `radius_sq`, as `(index, squared distance)`
    /// in index order.
    pub fn within(&self, q: &Vector3<f64>, radius_sq: f64) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .tree
            .query(&[q.x, q.y, q.z])
            .within::<SquaredEuclidean<f64>>(radius_sq)
            .unsorted()
            .execute()
            .into_iter()
            .map(|r| (r.item as usize, r.distance))
            .collect();
        out.sort_unstable_by_key(|x| x.0);
        out
    }
}
