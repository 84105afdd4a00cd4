//! LiDAR frame preparation: ground removal, intensity split, density
//! clustering and low-intensity reattachment.
//!
//! Ground removal is grid based: within each XY cell, everything within a
//! height tolerance of the cell's lowest point is ground. A single isolated
//! point in a cell is therefore classified as ground, which is the
//! conservative choice: real objects produce multi-point columns.
//!
//! The density clustering follows fixed-radius semantics: a core point has
//! at least `min_pts` neighbors (excluding itself) within `eps`; clusters
//! are the connected components of core points, plus border points attached
//! to their nearest core (ties to the smaller index). Everything else is
//! noise. All rules are deterministic so that a brute-force reference
//! produces the identical partition.

use std::collections::HashMap;

use petgraph::unionfind::UnionFind;

use crate::spatial::{squared_distance, KdTree3};
use crate::types::{LidarPoint, Vec3};

/// Distance slack used when breaking nearest-neighbor ties by point index.
pub const TIE_EPS: f64 = 1e-9;

/// Grid-based ground removal. Returns `(kept, ground)` index sets, each
/// ascending.
pub fn remove_ground(
    points: &[LidarPoint],
    cell_size: f64,
    height_tol: f64,
) -> (Vec<usize>, Vec<usize>) {
    let cell = |p: &Vec3| {
        (
            (p.x / cell_size).floor() as i64,
            (p.y / cell_size).floor() as i64,
        )
    };
    let mut min_z: HashMap<(i64, i64), f64> = HashMap::new();
    for p in points {
        let e = min_z.entry(cell(&p.position)).or_insert(f64::INFINITY);
        if p.position.z < *e {
            *e = p.position.z;
        }
    }
    let mut kept = Vec::new();
    let mut ground = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let base = min_z[&cell(&p.position)];
        if p.position.z - base <= height_tol {
            ground.push(i);
        } else {
            kept.push(i);
        }
    }
    (kept, ground)
}

/// Split the kept points into high and low reflectivity subsets. The
/// threshold is inclusive: `intensity >= delta_intensity` is high.
pub fn split_by_intensity(
    points: &[LidarPoint],
    kept: &[usize],
    delta_intensity: f64,
) -> (Vec<usize>, Vec<usize>) {
    let mut high = Vec::new();
    let mut low = Vec::new();
    for &i in kept {
        if points[i].intensity >= delta_intensity {
            high.push(i);
        } else {
            low.push(i);
        }
    }
    (high, low)
}

/// Result of the density clustering, in local indices over the input slice.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityClustering {
    /// Clusters with sorted members, ordered by smallest member.
    pub clusters: Vec<Vec<usize>>,
    /// Points in no cluster, ascending.
    pub noise: Vec<usize>,
}

/// Fixed-radius density clustering (see the module docs for the exact
/// rules).
pub fn density_cluster(positions: &[Vec3], eps: f64, min_pts: usize) -> DensityClustering {
    let n = positions.len();
    if n == 0 {
        return DensityClustering {
            clusters: Vec::new(),
            noise: Vec::new(),
        };
    }
    let tree = KdTree3::build(positions);
    let neighborhoods: Vec<Vec<usize>> = positions
        .iter()
        .map(|p| tree.within_radius(p, eps))
        .collect();
    // within_radius includes the point itself; core needs min_pts others.
    let is_core: Vec<bool> = neighborhoods
        .iter()
        .enumerate()
        .map(|(i, nb)| nb.iter().filter(|&&j| j != i).count() >= min_pts)
        .collect();

    let mut uf = UnionFind::<u32>::new(n);
    for i in 0..n {
        if !is_core[i] {
            continue;
        }
        for &j in &neighborhoods[i] {
            if j != i && is_core[j] {
                uf.union(i as u32, j as u32);
            }
        }
    }

    let mut assignment: Vec<Option<u32>> = vec![None; n];
    for i in 0..n {
        if is_core[i] {
            assignment[i] = Some(uf.find(i as u32));
        }
    }
    // Border points: nearest core within eps; exact distance ties go to the
    // smaller core index.
    for i in 0..n {
        if is_core[i] {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for &j in &neighborhoods[i] {
            if j == i || !is_core[j] {
                continue;
            }
            let d2 = squared_distance(&positions[i], &positions[j]);
            let better = match best {
                None => true,
                Some((bd, bj)) => d2 < bd || (d2 == bd && j < bj),
            };
            if better {
                best = Some((d2, j));
            }
        }
        if let Some((_, j)) = best {
            assignment[i] = Some(uf.find(j as u32));
        }
    }

    let mut groups: std::collections::BTreeMap<u32, Vec<usize>> = std::collections::BTreeMap::new();
    let mut noise = Vec::new();
    for i in 0..n {
        match assignment[i] {
            Some(root) => groups.entry(root).or_default().push(i),
            None => noise.push(i),
        }
    }
    let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    DensityClustering { clusters, noise }
}

/// Attach low-intensity points to existing clusters.
///
/// Each candidate joins the cluster of its nearest already-clustered point
/// when that point is strictly closer than `delta_neighbor`. The pool is the
/// pre-reattachment membership, so attachments do not chain. Candidates tied
/// within [`TIE_EPS`] go to the member with the smaller point index. Returns
/// the updated clusters and the candidates that stayed unattached.
pub fn reattach_low_intensity(
    clusters: &[Vec<usize>],
    candidates: &[usize],
    positions: &[Vec3],
    delta_neighbor: f64,
) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut pool_points = Vec::new(); // frame index of each pool entry
    let mut pool_cluster = Vec::new();
    for (cid, members) in clusters.iter().enumerate() {
        for &m in members {
            pool_points.push(m);
            pool_cluster.push(cid);
        }
    }
    let mut updated: Vec<Vec<usize>> = clusters.to_vec();
    if pool_points.is_empty() {
        return (updated, candidates.to_vec());
    }
    let pool_positions: Vec<Vec3> = pool_points.iter().map(|&m| positions[m]).collect();
    let tree = KdTree3::build(&pool_positions);

    let mut unattached = Vec::new();
    for &c in candidates {
        let q = positions[c];
        let (_, d) = tree.nearest(&q).expect("pool is non-empty");
        if d >= delta_neighbor {
            unattached.push(c);
            continue;
        }
        let near = tree.within_radius(&q, d + TIE_EPS);
        let chosen = near
            .iter()
            .map(|&e| (pool_points[e], pool_cluster[e]))
            .min_by_key(|&(point_idx, _)| point_idx)
            .expect("radius query contains the nearest point");
        updated[chosen.1].push(c);
    }
    for c in &mut updated {
        c.sort_unstable();
    }
    (updated, unattached)
}

/// A LiDAR frame after ground removal, intensity split and clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedLidarFrame {
    /// Indices surviving ground removal, ascending.
    pub kept: Vec<usize>,
    /// Ground indices, ascending.
    pub ground: Vec<usize>,
    /// High-reflectivity subset of `kept`.
    pub high: Vec<usize>,
    /// Low-reflectivity subset of `kept`.
    pub low: Vec<usize>,
    /// Cluster member sets (frame indices) after reattachment.
    pub clusters: Vec<Vec<usize>>,
    /// Kept points in no cluster, ascending.
    pub unclustered: Vec<usize>,
}

impl PreparedLidarFrame {
    /// Check the partition: every frame index is ground, unclustered or in
    /// exactly one cluster.
    pub fn is_partition(&self, n_points: usize) -> bool {
        let mut seen = vec![0u8; n_points];
        for &i in &self.ground {
            seen[i] += 1;
        }
        for &i in &self.unclustered {
            seen[i] += 1;
        }
        for c in &self.clusters {
            for &i in c {
                seen[i] += 1;
            }
        }
        seen.iter().all(|&c| c == 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn pt(x: f64, y: f64, z: f64) -> LidarPoint {
        LidarPoint {
            position: Vec3::new(x, y, z),
            intensity: 0.5,
            frame_index: 0,
        }
    }

    #[test]
    fn plane_removed_box_kept() {
        let mut points = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                points.push(pt(i as f64 * 0.5, j as f64 * 0.5, 0.0));
            }
        }
        let n_plane = points.len();
        for i in 0..5 {
            for k in 0..4 {
                points.push(pt(3.0 + i as f64 * 0.3, 3.0, 0.5 + k as f64 * 0.5));
            }
        }
        let (kept, ground) = remove_ground(&points, 1.0, 0.3);
        assert_eq!(ground.len(), n_plane);
        assert_eq!(kept.len(), points.len() - n_plane);
        assert!(kept.iter().all(|&i| points[i].position.z >= 0.5));
    }

    #[test]
    fn single_point_cell_is_ground() {
        let points = vec![pt(0.3, 0.3, 1.7)];
        let (kept, ground) = remove_ground(&points, 1.0, 0.3);
        assert!(kept.is_empty());
        assert_eq!(ground, vec![0]);
    }

    #[test]
    fn flat_frame_is_all_ground() {
        let points: Vec<LidarPoint> = (0..50).map(|i| pt(i as f64 * 0.3, 0.0, 0.0)).collect();
        let (kept, ground) = remove_ground(&points, 1.0, 0.3);
        assert!(kept.is_empty());
        assert_eq!(ground.len(), 50);
    }

    #[test]
    fn intensity_threshold_is_inclusive() {
        let mut points = vec![pt(0.0, 0.0, 1.0), pt(1.0, 0.0, 1.0), pt(2.0, 0.0, 1.0)];
        points[0].intensity = 0.008;
        points[1].intensity = 0.0079;
        points[2].intensity = 0.9;
        let kept = vec![0, 1, 2];
        let (high, low) = split_by_intensity(&points, &kept, 0.008);
        assert_eq!(high, vec![0, 2]);
        assert_eq!(low, vec![1]);
    }

    #[test]
    fn all_high_frame_has_empty_low_set() {
        let points = vec![pt(0.0, 0.0, 1.0), pt(1.0, 0.0, 1.0)];
        let (high, low) = split_by_intensity(&points, &[0, 1], 0.008);
        assert_eq!(high.len(), 2);
        assert!(low.is_empty());
    }

    fn box_points(center: Vec3, n_side: usize, spacing: f64) -> Vec<Vec3> {
        let mut out = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                out.push(
                    center
                        + Vec3::new(
                            i as f64 * spacing,
                            j as f64 * spacing,
                            ((i + j) % 3) as f64 * 0.1,
                        ),
                );
            }
        }
        out
    }

    #[test]
    fn two_boxes_make_two_clusters() {
        let mut positions = box_points(Vec3::new(0.0, 0.0, 1.0), 10, 0.3);
        positions.extend(box_points(Vec3::new(10.0, 10.0, 1.0), 10, 0.3));
        let out = density_cluster(&positions, 1.0, 5);
        assert_eq!(out.clusters.len(), 2);
        assert!(out.noise.is_empty());
        assert_eq!(out.clusters[0].len(), 100);
        assert_eq!(out.clusters[1].len(), 100);
    }

    #[test]
    fn isolated_points_are_noise() {
        let positions = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(0.0, 10.0, 0.0),
        ];
        let out = density_cluster(&positions, 1.0, 5);
        assert!(out.clusters.is_empty());
        assert_eq!(out.noise, vec![0, 1, 2]);
    }

    #[test]
    fn single_dense_blob_is_one_cluster() {
        let positions = box_points(Vec3::new(0.0, 0.0, 0.0), 8, 0.2);
        let out = density_cluster(&positions, 1.0, 5);
        assert_eq!(out.clusters.len(), 1);
        assert!(out.noise.is_empty());
    }

    /// Brute-force reference with the same core/border/noise rules.
    fn brute_density(positions: &[Vec3], eps: f64, min_pts: usize) -> DensityClustering {
        let n = positions.len();
        let eps2 = eps * eps;
        let neighbors = |i: usize| -> Vec<usize> {
            (0..n)
                .filter(|&j| j != i && squared_distance(&positions[i], &positions[j]) <= eps2)
                .collect()
        };
        let is_core: Vec<bool> = (0..n).map(|i| neighbors(i).len() >= min_pts).collect();
        // Label core components by repeated sweeps.
        let mut label: Vec<Option<usize>> = vec![None; n];
        let mut next = 0;
        for i in 0..n {
            if !is_core[i] || label[i].is_some() {
                continue;
            }
            let mut stack = vec![i];
            label[i] = Some(next);
            while let Some(k) = stack.pop() {
                for j in neighbors(k) {
                    if is_core[j] && label[j].is_none() {
                        label[j] = Some(next);
                        stack.push(j);
                    }
                }
            }
            next += 1;
        }
        for i in 0..n {
            if is_core[i] {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for j in neighbors(i) {
                if !is_core[j] {
                    continue;
                }
                let d2 = squared_distance(&positions[i], &positions[j]);
                let better = match best {
                    None => true,
                    Some((bd, bj)) => d2 < bd || (d2 == bd && j < bj),
                };
                if better {
                    best = Some((d2, j));
                }
            }
            if let Some((_, j)) = best {
                label[i] = label[j];
            }
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut noise = Vec::new();
        for i in 0..n {
            match label[i] {
                Some(l) => groups.entry(l).or_default().push(i),
                None => noise.push(i),
            }
        }
        let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
        for c in &mut clusters {
            c.sort_unstable();
        }
        clusters.sort_by_key(|c| c[0]);
        DensityClustering { clusters, noise }
    }

    #[test]
    fn density_clustering_matches_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = rng.random_range(5..300usize);
            let positions: Vec<Vec3> = (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(-8.0..8.0),
                        rng.random_range(-8.0..8.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect();
            let eps = rng.random_range(0.3..2.0);
            let min_pts = rng.random_range(2..8usize);
            assert_eq!(
                density_cluster(&positions, eps, min_pts),
                brute_density(&positions, eps, min_pts)
            );
        }
    }

    #[test]
    fn growing_eps_never_creates_noise() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let positions: Vec<Vec3> = (0..200)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    0.0,
                )
            })
            .collect();
        let mut last_noise = usize::MAX;
        for eps in [0.2, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let noise = density_cluster(&positions, eps, 4).noise.len();
            assert!(noise <= last_noise, "noise grew when eps grew");
            last_noise = noise;
        }
    }

    #[test]
    fn reattachment_rules() {
        // Cluster 0 near the origin, cluster 1 at x = 10.
        let positions = vec![
            Vec3::new(0.0, 0.0, 0.0),  // 0: member of cluster 0
            Vec3::new(10.0, 0.0, 0.0), // 1: member of cluster 1
            Vec3::new(0.3, 0.0, 0.0),  // 2: joins cluster 0 (0.3 < 0.5)
            Vec3::new(10.0, 0.6, 0.0), // 3: stays out (0.6 >= 0.5)
            Vec3::new(5.0, 0.0, 0.0),  // 4: exactly equidistant, joins 0
        ];
        let clusters = vec![vec![0], vec![1]];
        let (updated, unattached) =
            reattach_low_intensity(&clusters, &[2, 3], &positions, 0.5);
        assert_eq!(updated[0], vec![0, 2]);
        assert_eq!(updated[1], vec![1]);
        assert_eq!(unattached, vec![3]);

        // Equidistant tie: member 0 and member 1 are both 5.0 away; the
        // smaller point index (0) wins, so the candidate joins cluster 0.
        let (updated, unattached) =
            reattach_low_intensity(&clusters, &[4], &positions, 6.0);
        assert_eq!(updated[0], vec![0, 4]);
        assert!(unattached.is_empty());
    }

    #[test]
    fn clutter_far_from_clusters_is_never_attached() {
        // 30% of points are clutter at least delta_neighbor away from the
        // object; none of them may end up with a cluster id.
        let mut rng = ChaCha12Rng::seed_from_u64(53);
        let object = box_points(Vec3::new(0.0, 0.0, 1.0), 10, 0.3);
        let n_clutter = (object.len() as f64 * 0.3 / 0.7).round() as usize;
        let mut positions = object.clone();
        let mut clutter_idx = Vec::new();
        while clutter_idx.len() < n_clutter {
            let p = Vec3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(0.0..4.0),
            );
            let clear = object.iter().all(|o| (p - o).norm() >= 0.6);
            if clear {
                clutter_idx.push(positions.len());
                positions.push(p);
            }
        }
        let clustering = density_cluster(&positions[..object.len()], 1.0, 5);
        assert_eq!(clustering.clusters.len(), 1);
        let (updated, _) = reattach_low_intensity(
            &clustering.clusters,
            &clutter_idx,
            &positions,
            0.5,
        );
        for c in &updated {
            for &m in c {
                assert!(m < object.len(), "clutter point {m} got a cluster id");
            }
        }
    }
}
