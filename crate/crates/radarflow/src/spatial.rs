//! Exact nearest-neighbor and radius queries over 3D point sets.
//!
//! The tree is built once per frame and then shared read-only across
//! parallel workers. Queries are exact and deterministic: when two points
//! are at exactly the same distance from the query, the smaller point index
//! wins. That tie rule is what makes the whole pipeline reproducible
//! bit-for-bit, so any replacement index must preserve it.

use crate::types::Vec3;

/// Squared Euclidean distance with a fixed summation order.
///
/// Every distance comparison in the crate goes through this function so that
/// production code and brute-force test oracles agree to the last bit.
#[inline]
pub fn squared_distance(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone, Copy)]
struct Node {
    /// Index into the original point slice.
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

const NONE: i32 = -1;

/// Static kd-tree over a copied point set.
#[derive(Debug, Clone)]
pub struct KdTree3 {
    points: Vec<Vec3>,
    nodes: Vec<Node>,
    root: i32,
}

impl KdTree3 {
    pub fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(points, &mut order[..], 0, &mut nodes);
        Self {
            points: points.to_vec(),
            nodes,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_rec(points: &[Vec3], order: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> i32 {
        if order.is_empty() {
            return NONE;
        }
        let axis = (depth % 3) as u8;
        let mid = order.len() / 2;
        // Total order on (coordinate, index) keeps the layout independent of
        // the incoming point order for identical coordinates.
        order.select_nth_unstable_by(mid, |&a, &b| {
            let ca = points[a as usize][axis as usize];
            let cb = points[b as usize][axis as usize];
            ca.partial_cmp(&cb)
                .expect("non-finite coordinate in kd-tree")
                .then(a.cmp(&b))
        });
        let point = order[mid];
        let slot = nodes.len();
        nodes.push(Node {
            point,
            axis,
            left: NONE,
            right: NONE,
        });
        let (lo, hi) = order.split_at_mut(mid);
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, &mut hi[1..], depth + 1, nodes);
        nodes[slot].left = left;
        nodes[slot].right = right;
        slot as i32
    }

    /// Exact nearest neighbor: `(index, distance)`. Ties on distance go to
    /// the smaller index. Returns `None` on an empty tree.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        if self.is_empty() {
            return None;
        }
        let mut best = (u32::MAX, f64::INFINITY);
        self.nearest_rec(self.root, query, &mut best);
        Some((best.0 as usize, best.1.sqrt()))
    }

    fn nearest_rec(&self, node: i32, query: &Vec3, best: &mut (u32, f64)) {
        if node == NONE {
            return;
        }
        let n = self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d2 = squared_distance(query, p);
        if d2 < best.1 || (d2 == best.1 && n.point < best.0) {
            *best = (n.point, d2);
        }
        let axis = n.axis as usize;
        let diff = query[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.nearest_rec(near, query, best);
        // Descend into the far side on exact equality too: it may hold an
        // equal-distance point with a smaller index.
        if diff * diff <= best.1 {
            self.nearest_rec(far, query, best);
        }
    }

    /// All points with distance `<= radius`, ascending by index.
    pub fn within_radius(&self, query: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if radius >= 0.0 {
            self.within_rec(self.root, query, radius * radius, radius, &mut out);
            out.sort_unstable();
        }
        out
    }

    fn within_rec(&self, node: i32, query: &Vec3, r2: f64, r: f64, out: &mut Vec<usize>) {
        if node == NONE {
            return;
        }
        let n = self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        if squared_distance(query, p) <= r2 {
            out.push(n.point as usize);
        }
        let axis = n.axis as usize;
        let diff = query[axis] - p[axis];
        if diff <= r {
            self.within_rec(n.left, query, r2, r, out);
        }
        if -diff <= r {
            self.within_rec(n.right, query, r2, r, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn brute_nearest(points: &[Vec3], q: &Vec3) -> Option<(usize, f64)> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, squared_distance(q, p)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
            .map(|(i, d2)| (i, d2.sqrt()))
    }

    fn brute_within(points: &[Vec3], q: &Vec3, r: f64) -> Vec<usize> {
        points
            .iter()
            .enumerate()
            .filter(|(_, p)| squared_distance(q, p) <= r * r)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for n in [1usize, 2, 3, 17, 100, 257] {
            let points: Vec<Vec3> = (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(-10.0..10.0),
                        rng.random_range(-10.0..10.0),
                        rng.random_range(-3.0..3.0),
                    )
                })
                .collect();
            let tree = KdTree3::build(&points);
            for _ in 0..50 {
                let q = Vec3::new(
                    rng.random_range(-12.0..12.0),
                    rng.random_range(-12.0..12.0),
                    rng.random_range(-4.0..4.0),
                );
                assert_eq!(tree.nearest(&q), brute_nearest(&points, &q));
                let r = rng.random_range(0.1..5.0);
                assert_eq!(tree.within_radius(&q, r), brute_within(&points, &q, r));
            }
        }
    }

    #[test]
    fn tie_goes_to_smaller_index() {
        // Two points symmetric about the query; identical distance.
        let points = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)];
        let tree = KdTree3::build(&points);
        let (idx, d) = tree.nearest(&Vec3::zeros()).unwrap();
        assert_eq!(idx, 0);
        assert!((d - 1.0).abs() < 1e-15);

        // Duplicate coordinates.
        let dup = vec![
            Vec3::new(2.0, 2.0, 2.0),
            Vec3::new(2.0, 2.0, 2.0),
            Vec3::new(5.0, 5.0, 5.0),
        ];
        let tree = KdTree3::build(&dup);
        let (idx, _) = tree.nearest(&Vec3::new(2.1, 2.0, 2.0)).unwrap();
        assert_eq!(idx, 0);
    }

    #[test]
    fn empty_tree_yields_nothing() {
        let tree = KdTree3::build(&[]);
        assert!(tree.nearest(&Vec3::zeros()).is_none());
        assert!(tree.within_radius(&Vec3::zeros(), 10.0).is_empty());
    }

    #[test]
    fn radius_boundary_is_inclusive() {
        let points = vec![Vec3::new(1.0, 0.0, 0.0)];
        let tree = KdTree3::build(&points);
        assert_eq!(tree.within_radius(&Vec3::zeros(), 1.0), vec![0]);
        assert!(tree.within_radius(&Vec3::zeros(), 0.999).is_empty());
    }
}
