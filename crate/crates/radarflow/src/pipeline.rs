//! End-to-end processing of one frame pair.
//!
//! Data flow for a pair `(t, t+1)`:
//!
//! 1. validate both frames,
//! 2. recover per-cluster velocities from the radar frame at `t`,
//! 3. ground-remove and intensity-split the LiDAR frame at `t`,
//! 4. associate the kept points against the full radar frame,
//! 5. density-cluster the validly associated points and re-attach nearby
//!    low-intensity points,
//! 6. vote each cluster dynamic or static, resolve velocity ambiguity by
//!    forward projection against the ground-removed next frame, and emit the
//!    dense flow field.
//!
//! The next frame is shifted into the current ego frame (pure translation by
//! `v_ego * dt`) before the Chamfer stage so world-relative candidate
//! velocities project correctly.

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::lidar::{
    density_cluster, reattach_low_intensity, remove_ground, split_by_intensity,
    PreparedLidarFrame,
};
use crate::radar::{estimate_radar_motion, RadarMotionEstimate};
use crate::spatial::KdTree3;
use crate::transfer::{associate, propagate_labels, Association, TransferDiagnostics};
use crate::types::{validate_frame, FlowField, Frame, LidarCluster, Vec3};

/// Everything produced while labeling one frame pair.
#[derive(Debug, Clone)]
pub struct FramePairResult {
    pub flow: FlowField,
    pub clusters: Vec<LidarCluster>,
    pub radar: RadarMotionEstimate,
    pub prepared: PreparedLidarFrame,
    pub diagnostics: TransferDiagnostics,
    pub rejected_lidar: usize,
    pub rejected_radar: usize,
}

/// Prepare a LiDAR frame: ground removal, intensity split, association-gated
/// density clustering and low-intensity reattachment.
///
/// `associations` must align with `positions` (one entry per frame point;
/// `None` for points that were never associated, e.g. ground).
pub fn prepare_lidar(
    frame: &Frame,
    associations: &[Option<Association>],
    config: &PipelineConfig,
) -> PreparedLidarFrame {
    let (kept, ground) = remove_ground(
        &frame.lidar,
        config.ground_cell_size,
        config.ground_height_tol,
    );
    let (high, low) = split_by_intensity(&frame.lidar, &kept, config.delta_intensity);

    // Clustering runs on the validly associated points of either intensity;
    // unassociated low-intensity points get a second chance below.
    let assoc_pool: Vec<usize> = kept
        .iter()
        .copied()
        .filter(|&i| associations[i].as_ref().is_some_and(|a| a.valid))
        .collect();
    let pool_positions: Vec<Vec3> = assoc_pool.iter().map(|&i| frame.lidar[i].position).collect();
    let clustering = density_cluster(
        &pool_positions,
        config.density_cluster_eps,
        config.density_cluster_min_pts,
    );
    let clusters: Vec<Vec<usize>> = clustering
        .clusters
        .iter()
        .map(|c| c.iter().map(|&local| assoc_pool[local]).collect())
        .collect();

    let mut in_cluster = vec![false; frame.lidar.len()];
    for c in &clusters {
        for &i in c {
            in_cluster[i] = true;
        }
    }
    let low_candidates: Vec<usize> = low.iter().copied().filter(|&i| !in_cluster[i]).collect();
    let positions: Vec<Vec3> = frame.lidar.iter().map(|p| p.position).collect();
    let (clusters, _) =
        reattach_low_intensity(&clusters, &low_candidates, &positions, config.delta_neighbor);

    let mut in_cluster = vec![false; frame.lidar.len()];
    for c in &clusters {
        for &i in c {
            in_cluster[i] = true;
        }
    }
    let unclustered: Vec<usize> = kept.iter().copied().filter(|&i| !in_cluster[i]).collect();

    PreparedLidarFrame {
        kept,
        ground,
        high,
        low,
        clusters,
        unclustered,
    }
}

/// Label one frame pair.
pub fn run_frame_pair(
    frame_t: &Frame,
    frame_t1: &Frame,
    config: &PipelineConfig,
) -> Result<FramePairResult> {
    config.validate()?;
    let validated_t = validate_frame(
        frame_t.lidar.clone(),
        frame_t.radar.clone(),
        frame_t.ego.clone(),
        frame_t.index,
    )?;
    let validated_t1 = validate_frame(
        frame_t1.lidar.clone(),
        frame_t1.radar.clone(),
        frame_t1.ego.clone(),
        frame_t1.index,
    )?;
    let t = &validated_t.frame;
    let t1 = &validated_t1.frame;

    let radar = estimate_radar_motion(&t.radar, &t.ego, config)?;

    // Associate the ground-removed points against the full radar pool.
    let (kept, _) = remove_ground(&t.lidar, config.ground_cell_size, config.ground_height_tol);
    let kept_positions: Vec<Vec3> = kept.iter().map(|&i| t.lidar[i].position).collect();
    let radar_positions: Vec<Vec3> = radar.compensated.iter().map(|c| c.base.position).collect();
    let mut radar_dynamic = vec![false; radar_positions.len()];
    for &d in &radar.dynamic {
        radar_dynamic[d] = true;
    }
    let kept_assoc = associate(&kept_positions, &radar_positions, &radar_dynamic, config);
    let mut associations: Vec<Option<Association>> = vec![None; t.lidar.len()];
    for (slot, a) in kept.iter().zip(kept_assoc) {
        associations[*slot] = Some(a);
    }

    let prepared = prepare_lidar(t, &associations, config);

    // Ground-removed next frame, shifted into the current ego frame.
    let shift = t.ego.ego_displacement();
    let (next_kept, _) = remove_ground(
        &t1.lidar,
        config.ground_cell_size,
        config.ground_height_tol,
    );
    let next_positions: Vec<Vec3> = next_kept
        .iter()
        .map(|&i| t1.lidar[i].position + shift)
        .collect();
    let next_tree = (!next_positions.is_empty()).then(|| KdTree3::build(&next_positions));

    let positions: Vec<Vec3> = t.lidar.iter().map(|p| p.position).collect();
    let (flow, clusters, diagnostics) = propagate_labels(
        t.lidar.len(),
        &prepared,
        &positions,
        &radar,
        &associations,
        next_tree.as_ref(),
        &t.ego,
    )?;

    Ok(FramePairResult {
        flow,
        clusters,
        radar,
        prepared,
        diagnostics,
        rejected_lidar: validated_t.rejected_lidar,
        rejected_radar: validated_t.rejected_radar,
    })
}
