//! Full 3D motion recovery from radial-only Doppler measurements.
//!
//! The stages, each exposed as its own function and composed by
//! [`estimate_radar_motion`]:
//!
//! 1. ego-motion compensation of every radial velocity,
//! 2. dynamic gating on the compensated magnitude,
//! 3. connected-components clustering over a spatial + Doppler-velocity
//!    proximity graph,
//! 4. a bounded least-squares solve per cluster that turns the radial
//!    constraints of its members into one full 3D velocity.
//!
//! The solve assumes each cluster is a rigidly translating object; no
//! rotational rate is estimated and the ego motion itself is treated as a
//! pure translation over one frame interval.

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::solver::solve_bounded;
use crate::spatial::squared_distance;
use crate::types::{EgoState, RadarCluster, RadarPoint, Vec3, MIN_SENSOR_RANGE};

/// A radar point with its ego-motion-compensated Doppler quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensatedRadarPoint {
    pub base: RadarPoint,
    /// Line of sight from the sensor to the point, unit norm, sensor frame.
    pub u: Vec3,
    /// Ego-motion-compensated radial velocity, m/s.
    pub v_comp: f64,
    /// Compensated Doppler velocity vector `v_comp * u` rotated into the ego
    /// frame; this is the node attribute of the clustering graph.
    pub v_comp_vec: Vec3,
}

/// Compensate one radar return for ego motion.
///
/// The line of sight is formed in the sensor frame (position relative to the
/// sensor origin), and the ego velocity is rotated into that frame before
/// projecting: `v_comp = v_meas + u . (R v_ego)`. A static target therefore
/// compensates to exactly zero regardless of the ego speed.
pub fn compensate_doppler(point: &RadarPoint, ego: &EgoState) -> Result<CompensatedRadarPoint> {
    let sensor = ego.sensor(point.sensor_id)?;
    let p_sensor = sensor.to_sensor(&point.position);
    let range = p_sensor.norm();
    if range < MIN_SENSOR_RANGE {
        return Err(Error::AtSensorOrigin { range });
    }
    let u = p_sensor / range;
    let v_comp = point.v_meas + u.dot(&(sensor.rotation * ego.v_ego));
    let u_ego = sensor.rotation.transpose() * u;
    Ok(CompensatedRadarPoint {
        base: *point,
        u,
        v_comp,
        v_comp_vec: v_comp * u_ego,
    })
}

/// Compensate a whole (already validated) radar frame.
pub fn compensate_frame(radar: &[RadarPoint], ego: &EgoState) -> Result<Vec<CompensatedRadarPoint>> {
    radar.iter().map(|p| compensate_doppler(p, ego)).collect()
}

/// Indices of points whose compensated Doppler magnitude is strictly above
/// the threshold. Boundary values are static.
pub fn classify_dynamic(points: &[CompensatedRadarPoint], delta_dyn: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.v_comp.abs() > delta_dyn)
        .map(|(i, _)| i)
        .collect()
}

/// Connected-components clustering of the dynamic points.
///
/// An edge joins two dynamic points when they are close in space and in the
/// Doppler velocity-vector domain (both strict inequalities). Every dynamic
/// point ends up in exactly one component; singletons are allowed. Clusters
/// come out with sorted members, ordered by their smallest member, so the
/// result is invariant under input permutation.
///
/// Edge construction is the plain O(N^2) pairwise scan; dynamic radar
/// returns are sparse enough that this is not a bottleneck.
pub fn ccl_cluster(
    points: &[CompensatedRadarPoint],
    dynamic: &[usize],
    delta_spatial: f64,
    delta_velocity: f64,
) -> Vec<Vec<usize>> {
    let n = dynamic.len();
    let mut uf = UnionFind::<u32>::new(n);
    let ds2 = delta_spatial * delta_spatial;
    let dv2 = delta_velocity * delta_velocity;
    for a in 0..n {
        let pa = &points[dynamic[a]];
        for b in (a + 1)..n {
            let pb = &points[dynamic[b]];
            if squared_distance(&pa.base.position, &pb.base.position) < ds2
                && squared_distance(&pa.v_comp_vec, &pb.v_comp_vec) < dv2
            {
                uf.union(a as u32, b as u32);
            }
        }
    }

    let mut groups: std::collections::BTreeMap<u32, Vec<usize>> = std::collections::BTreeMap::new();
    for a in 0..n {
        groups.entry(uf.find(a as u32)).or_default().push(dynamic[a]);
    }
    let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// Velocity recovered for one cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityEstimate {
    pub v_full: Vec3,
    pub residual_rms: f64,
    pub rank_deficient: bool,
}

/// Recover the full 3D velocity of one cluster from its members' radial
/// constraints: row `j` is `u_j^T R_j`, the right-hand side is `v_comp_j`,
/// solved under the per-axis physical bound. Under-determined clusters are a
/// supported regime and yield the minimum-norm completion with
/// `rank_deficient` set.
pub fn solve_cluster_velocity(
    points: &[CompensatedRadarPoint],
    members: &[usize],
    ego: &EgoState,
    v_bound: f64,
) -> Result<VelocityEstimate> {
    let mut rows = Vec::with_capacity(members.len());
    let mut rhs = Vec::with_capacity(members.len());
    for &m in members {
        let p = &points[m];
        let sensor = ego.sensor(p.base.sensor_id)?;
        rows.push(sensor.rotation.transpose() * p.u);
        rhs.push(p.v_comp);
    }
    let sol = solve_bounded(&rows, &rhs, v_bound);
    Ok(VelocityEstimate {
        v_full: sol.x,
        residual_rms: sol.residual_rms,
        rank_deficient: sol.rank < 3,
    })
}

/// Everything the label-transfer stage needs from the radar frame.
#[derive(Debug, Clone)]
pub struct RadarMotionEstimate {
    /// Compensated points, aligned with the validated radar frame.
    pub compensated: Vec<CompensatedRadarPoint>,
    /// Indices of dynamic points, ascending.
    pub dynamic: Vec<usize>,
    /// Solved clusters of dynamic points.
    pub clusters: Vec<RadarCluster>,
    /// Per radar point: the cluster it belongs to, if dynamic.
    pub point_cluster: Vec<Option<usize>>,
}

/// Run compensation, gating, clustering and the per-cluster velocity solve.
pub fn estimate_radar_motion(
    radar: &[RadarPoint],
    ego: &EgoState,
    config: &PipelineConfig,
) -> Result<RadarMotionEstimate> {
    let compensated = compensate_frame(radar, ego)?;
    let dynamic = classify_dynamic(&compensated, config.delta_dyn);
    let member_sets = ccl_cluster(
        &compensated,
        &dynamic,
        config.delta_spatial,
        config.delta_velocity,
    );

    let estimates: Vec<VelocityEstimate> = member_sets
        .par_iter()
        .map(|members| {
            solve_cluster_velocity(&compensated, members, ego, config.v_bound)
                .expect("sensor ids were validated with the frame")
        })
        .collect();

    let mut point_cluster = vec![None; compensated.len()];
    let mut clusters = Vec::with_capacity(member_sets.len());
    for (id, (members, est)) in member_sets.into_iter().zip(estimates).enumerate() {
        for &m in &members {
            point_cluster[m] = Some(id);
        }
        clusters.push(RadarCluster {
            member_indices: members,
            v_full: est.v_full,
            solve_residual: est.residual_rms,
            rank_deficient: est.rank_deficient,
        });
    }

    Ok(RadarMotionEstimate {
        compensated,
        dynamic,
        clusters,
        point_cluster,
    })
}
