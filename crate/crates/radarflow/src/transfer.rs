//! Cross-modal label propagation: radar cluster velocities onto LiDAR
//! points.
//!
//! Association runs against the full radar frame, dynamic and static returns
//! alike, with the dynamic flag carried per association. The majority vote
//! that decides whether a LiDAR cluster moves is only meaningful against the
//! full pool: voting over dynamic returns alone would be vacuously true.
//!
//! The Chamfer distance used for velocity disambiguation is one-sided, from
//! the forward-projected cluster into the next full scan. The next scan
//! contains the whole scene, so the reverse direction would penalize
//! unrelated content.

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::lidar::PreparedLidarFrame;
use crate::radar::RadarMotionEstimate;
use crate::spatial::KdTree3;
use crate::types::{EgoState, FlowEntry, FlowField, LidarCluster, Vec3};

/// Velocities within this distance (per axis) count as the same candidate.
pub const VELOCITY_DEDUP_EPS: f64 = 1e-6;

/// Chamfer gaps within this tolerance are ties; the lower candidate index
/// wins.
pub const CHAMFER_TIE_EPS: f64 = 1e-9;

/// Nearest-radar association of one LiDAR point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Association {
    /// Index of the nearest radar point; present only when the association
    /// is valid, so invalid points carry no radar index downstream.
    pub nearest_radar: Option<usize>,
    /// Distance to the nearest radar point (infinite when the radar frame is
    /// empty).
    pub distance: f64,
    /// True when the distance passes the range-adaptive gate.
    pub valid: bool,
    /// True when the associated radar point is dynamic.
    pub radar_is_dynamic: bool,
}

/// Range-adaptive association gate: grows linearly with range and saturates
/// at the reference range.
pub fn range_adaptive_threshold(p: &Vec3, config: &PipelineConfig) -> f64 {
    let ratio = (p.norm() / config.adaptive_range_ref).min(1.0);
    config.delta_adaptive_min + (config.delta_adaptive_max - config.delta_adaptive_min) * ratio
}

/// Associate each query position with its nearest radar point, gated by the
/// range-adaptive threshold (strict inequality). With an empty radar frame
/// every association is invalid and the pipeline degrades to an all-static
/// output.
pub fn associate(
    positions: &[Vec3],
    radar_positions: &[Vec3],
    radar_dynamic: &[bool],
    config: &PipelineConfig,
) -> Vec<Association> {
    assert_eq!(radar_positions.len(), radar_dynamic.len());
    if radar_positions.is_empty() {
        log::warn!("empty radar frame: all associations invalid, output degrades to all-static");
        return positions
            .iter()
            .map(|_| Association {
                nearest_radar: None,
                distance: f64::INFINITY,
                valid: false,
                radar_is_dynamic: false,
            })
            .collect();
    }
    let tree = KdTree3::build(radar_positions);
    positions
        .iter()
        .map(|p| {
            let (idx, distance) = tree.nearest(p).expect("non-empty radar tree");
            let valid = distance < range_adaptive_threshold(p, config);
            Association {
                nearest_radar: valid.then_some(idx),
                distance,
                valid,
                radar_is_dynamic: valid && radar_dynamic[idx],
            }
        })
        .collect()
}

/// Majority vote over a cluster's members: dynamic iff strictly more than
/// half of the validly associated members point at a dynamic radar return.
/// Clusters with no valid association at all are static.
pub fn vote_cluster_dynamic(members: &[usize], associations: &[Option<Association>]) -> bool {
    let mut valid = 0usize;
    let mut dynamic = 0usize;
    for &m in members {
        if let Some(a) = associations[m].as_ref().filter(|a| a.valid) {
            valid += 1;
            if a.radar_is_dynamic {
                dynamic += 1;
            }
        }
    }
    valid > 0 && 2 * dynamic > valid
}

/// One-sided Chamfer distance: mean nearest-neighbor distance from each
/// source point into the target set.
pub fn chamfer_distance(source: &[Vec3], target: &[Vec3]) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::NoReferenceFrame);
    }
    let tree = KdTree3::build(target);
    Ok(chamfer_with_tree(source, &tree))
}

/// Chamfer against a prebuilt (non-empty) target tree.
pub fn chamfer_with_tree(source: &[Vec3], target: &KdTree3) -> f64 {
    if source.is_empty() {
        return 0.0;
    }
    let sum: f64 = source
        .iter()
        .map(|p| target.nearest(p).expect("non-empty target tree").1)
        .sum();
    sum / source.len() as f64
}

/// Pick the candidate velocity whose forward projection of the cluster best
/// matches the next scan. A single candidate is returned directly without
/// touching the reference frame. Returns the chosen index and the Chamfer
/// value per candidate (empty for the single-candidate path).
pub fn resolve_velocity_ambiguity(
    cluster_positions: &[Vec3],
    candidates: &[Vec3],
    next_frame: Option<&KdTree3>,
    dt: f64,
) -> Result<(usize, Vec<f64>)> {
    assert!(!candidates.is_empty(), "ambiguity resolution needs a candidate");
    if candidates.len() == 1 {
        return Ok((0, Vec::new()));
    }
    let tree = match next_frame {
        Some(t) if !t.is_empty() => t,
        _ => return Err(Error::NoReferenceFrame),
    };
    let mut distances = Vec::with_capacity(candidates.len());
    let mut warped = Vec::with_capacity(cluster_positions.len());
    for v in candidates {
        warped.clear();
        warped.extend(cluster_positions.iter().map(|p| p + v * dt));
        distances.push(chamfer_with_tree(&warped, tree));
    }
    let mut best = 0usize;
    for (i, &d) in distances.iter().enumerate().skip(1) {
        if d < distances[best] - CHAMFER_TIE_EPS {
            best = i;
        }
    }
    Ok((best, distances))
}

/// Why a cluster ended up with its label; kept for diagnostics and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDecision {
    pub cluster_id: usize,
    pub dynamic: bool,
    pub valid_associations: usize,
    pub dynamic_associations: usize,
    /// `(radar cluster id, velocity)` candidates after deduplication.
    pub candidates: Vec<(usize, Vec3)>,
    /// Chamfer distance per candidate when arbitration ran.
    pub chamfer: Vec<f64>,
    /// Index into `candidates` of the chosen velocity.
    pub chosen: Option<usize>,
}

/// Per-frame record of the label transfer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferDiagnostics {
    pub decisions: Vec<ClusterDecision>,
}

impl TransferDiagnostics {
    /// Number of clusters whose label required Chamfer arbitration.
    pub fn ambiguous_clusters(&self) -> usize {
        self.decisions
            .iter()
            .filter(|d| d.candidates.len() > 1)
            .count()
    }
}

/// Run the full label propagation for one prepared frame.
///
/// Dynamic clusters get `v_best * dt` on every member; static clusters,
/// ground, noise and unclustered points get zero. `valid` is true exactly
/// for cluster members, so pseudo-label consumers can mask everything the
/// pipeline could not explain.
pub fn propagate_labels(
    n_points: usize,
    prepared: &PreparedLidarFrame,
    positions: &[Vec3],
    radar: &RadarMotionEstimate,
    associations: &[Option<Association>],
    next_frame: Option<&KdTree3>,
    ego: &EgoState,
) -> Result<(FlowField, Vec<LidarCluster>, TransferDiagnostics)> {
    let mut entries = vec![FlowEntry::background(); n_points];
    let mut clusters_out = Vec::with_capacity(prepared.clusters.len());
    let mut diagnostics = TransferDiagnostics::default();

    for (cid, members) in prepared.clusters.iter().enumerate() {
        let mut valid = 0usize;
        let mut dynamic_votes = 0usize;
        let mut source_ids: Vec<usize> = Vec::new();
        for &m in members {
            if let Some(a) = associations[m].as_ref().filter(|a| a.valid) {
                valid += 1;
                if a.radar_is_dynamic {
                    dynamic_votes += 1;
                    let r = a.nearest_radar.expect("valid association has an index");
                    if let Some(rc) = radar.point_cluster[r] {
                        source_ids.push(rc);
                    }
                }
            }
        }
        source_ids.sort_unstable();
        source_ids.dedup();

        let is_dynamic = valid > 0 && 2 * dynamic_votes > valid;
        let mut decision = ClusterDecision {
            cluster_id: cid,
            dynamic: is_dynamic,
            valid_associations: valid,
            dynamic_associations: dynamic_votes,
            candidates: Vec::new(),
            chamfer: Vec::new(),
            chosen: None,
        };

        let mut assigned = None;
        if is_dynamic {
            // Distinct velocities of the reached radar clusters, ordered by
            // radar cluster id, deduplicated per axis.
            let mut candidates: Vec<(usize, Vec3)> = Vec::new();
            for &rc in &source_ids {
                let v = radar.clusters[rc].v_full;
                let dup = candidates
                    .iter()
                    .any(|(_, w)| (v - w).amax() <= VELOCITY_DEDUP_EPS);
                if !dup {
                    candidates.push((rc, v));
                }
            }
            debug_assert!(!candidates.is_empty(), "dynamic vote implies a source cluster");
            let member_positions: Vec<Vec3> = members.iter().map(|&m| positions[m]).collect();
            let velocity_list: Vec<Vec3> = candidates.iter().map(|&(_, v)| v).collect();
            let (chosen, chamfer) = resolve_velocity_ambiguity(
                &member_positions,
                &velocity_list,
                next_frame,
                ego.dt,
            )?;
            assigned = Some(velocity_list[chosen]);
            decision.candidates = candidates;
            decision.chamfer = chamfer;
            decision.chosen = Some(chosen);
        }

        let delta = assigned.map(|v| v * ego.dt).unwrap_or_else(Vec3::zeros);
        for &m in members {
            entries[m] = FlowEntry {
                delta,
                dynamic: is_dynamic,
                valid: true,
                cluster_id: Some(cid),
            };
        }
        clusters_out.push(LidarCluster {
            member_indices: members.clone(),
            dynamic: is_dynamic,
            assigned_velocity: assigned,
            source_radar_clusters: source_ids,
        });
        diagnostics.decisions.push(decision);
    }

    Ok((FlowField { entries }, clusters_out, diagnostics))
}

/// Total per-point displacement: the rigid ego displacement over one frame
/// interval plus the non-ego flow. Under the pure-translation ego model the
/// ego term is `v_ego * dt` for every point.
pub fn assemble_total_flow(flow: &FlowField, ego: &EgoState) -> Vec<Vec3> {
    let shift = ego.ego_displacement();
    flow.entries.iter().map(|e| shift + e.delta).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{RadarCluster, RadarPoint, SensorExtrinsic};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn cfg() -> PipelineConfig {
        PipelineConfig::default()
    }

    #[test]
    fn adaptive_threshold_endpoints_and_midpoint() {
        let c = cfg();
        assert!((range_adaptive_threshold(&Vec3::zeros(), &c) - 0.1).abs() < 1e-12);
        let far = Vec3::new(250.0, 0.0, 0.0);
        assert!((range_adaptive_threshold(&far, &c) - 5.0).abs() < 1e-12);
        let at_ref = Vec3::new(200.0, 0.0, 0.0);
        assert!((range_adaptive_threshold(&at_ref, &c) - 5.0).abs() < 1e-12);
        let mid = Vec3::new(100.0, 0.0, 0.0);
        assert!((range_adaptive_threshold(&mid, &c) - 2.55).abs() < 1e-12);
    }

    #[test]
    fn association_gating() {
        let c = cfg();
        // 0.05 m away at ~10 m range: below the minimum gate already.
        let radar = vec![Vec3::new(10.0, 0.0, 0.0)];
        let out = associate(&[Vec3::new(10.05, 0.0, 0.0)], &radar, &[true], &c);
        assert!(out[0].valid);
        assert!(out[0].radar_is_dynamic);
        assert_eq!(out[0].nearest_radar, Some(0));

        // 3 m away at 20 m range: the gate is about 0.59 m, so invalid.
        let radar = vec![Vec3::new(23.0, 0.0, 0.0)];
        let out = associate(&[Vec3::new(20.0, 0.0, 0.0)], &radar, &[true], &c);
        assert!(!out[0].valid);
        assert_eq!(out[0].nearest_radar, None);
    }

    #[test]
    fn empty_radar_frame_degrades_to_invalid() {
        let out = associate(&[Vec3::new(1.0, 0.0, 0.0)], &[], &[], &cfg());
        assert_eq!(out.len(), 1);
        assert!(!out[0].valid);
        assert!(out[0].distance.is_infinite());
    }

    #[test]
    fn shrinking_the_gate_never_validates_an_association() {
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let radar: Vec<Vec3> = (0..40)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-80.0..80.0),
                    rng.random_range(-80.0..80.0),
                    rng.random_range(0.0..3.0),
                )
            })
            .collect();
        let flags = vec![true; radar.len()];
        let queries: Vec<Vec3> = (0..200)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                    rng.random_range(0.0..3.0),
                )
            })
            .collect();
        let wide = associate(&queries, &radar, &flags, &cfg());
        let narrow_cfg = PipelineConfig {
            delta_adaptive_max: 2.0,
            ..cfg()
        };
        let narrow = associate(&queries, &radar, &flags, &narrow_cfg);
        for (w, n) in wide.iter().zip(&narrow) {
            assert!(!n.valid || w.valid, "shrinking the gate validated a point");
        }
    }

    fn assoc(valid: bool, dynamic: bool) -> Option<Association> {
        Some(Association {
            nearest_radar: valid.then_some(0),
            distance: 0.1,
            valid,
            radar_is_dynamic: dynamic,
        })
    }

    #[test]
    fn vote_majority_rules() {
        // 3 of 4 dynamic: dynamic.
        let assocs = vec![
            assoc(true, true),
            assoc(true, true),
            assoc(true, true),
            assoc(true, false),
        ];
        assert!(vote_cluster_dynamic(&[0, 1, 2, 3], &assocs));
        // 2 of 4: exactly half fails the strict majority.
        let assocs = vec![
            assoc(true, true),
            assoc(true, true),
            assoc(true, false),
            assoc(true, false),
        ];
        assert!(!vote_cluster_dynamic(&[0, 1, 2, 3], &assocs));
        // No valid association at all: static.
        let assocs = vec![assoc(false, false), None];
        assert!(!vote_cluster_dynamic(&[0, 1], &assocs));
    }

    #[test]
    fn chamfer_basics() {
        let a = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);

        let d = chamfer_distance(&[Vec3::zeros()], &[Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        assert!((d - 1.0).abs() < 1e-12);

        let src = vec![
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(10.2, 0.0, 0.0),
            Vec3::new(20.3, 0.0, 0.0),
        ];
        let tgt = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(20.0, 0.0, 0.0),
        ];
        let d = chamfer_distance(&src, &tgt).unwrap();
        assert!((d - 0.2).abs() < 1e-12);

        assert!(matches!(
            chamfer_distance(&a, &[]),
            Err(Error::NoReferenceFrame)
        ));
    }

    #[test]
    fn single_candidate_skips_the_reference_frame() {
        let cluster = vec![Vec3::zeros()];
        let (chosen, chamfer) =
            resolve_velocity_ambiguity(&cluster, &[Vec3::new(3.0, 0.0, 0.0)], None, 0.1).unwrap();
        assert_eq!(chosen, 0);
        assert!(chamfer.is_empty());
    }

    #[test]
    fn forward_projection_picks_the_true_velocity() {
        let cluster: Vec<Vec3> = (0..20)
            .map(|i| Vec3::new(10.0 + (i % 5) as f64 * 0.3, (i / 5) as f64 * 0.3, 1.0))
            .collect();
        let truth = Vec3::new(10.0, 0.0, 0.0);
        let ghost = Vec3::new(-10.0, 0.0, 0.0);
        let dt = 0.1;
        let next: Vec<Vec3> = cluster.iter().map(|p| p + truth * dt).collect();
        let tree = KdTree3::build(&next);
        let (chosen, chamfer) =
            resolve_velocity_ambiguity(&cluster, &[truth, ghost], Some(&tree), dt).unwrap();
        assert_eq!(chosen, 0);
        assert!(chamfer[0] < 1e-12 && chamfer[1] > 1.0);
    }

    #[test]
    fn chamfer_tie_goes_to_the_lower_candidate_index() {
        // Symmetric target: moving left or right fits equally well.
        let cluster = vec![Vec3::zeros()];
        let next = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)];
        let tree = KdTree3::build(&next);
        let c1 = Vec3::new(10.0, 0.0, 0.0);
        let c2 = Vec3::new(-10.0, 0.0, 0.0);
        let (chosen, chamfer) =
            resolve_velocity_ambiguity(&cluster, &[c1, c2], Some(&tree), 0.1).unwrap();
        assert_eq!(chosen, 0);
        assert!((chamfer[0] - chamfer[1]).abs() <= CHAMFER_TIE_EPS);
    }

    #[test]
    fn ambiguity_resolution_correctness_over_randomized_trials() {
        // One true velocity, one ghost at least 2 m/s away, noise-free
        // geometry: the true candidate must win in at least 99% of trials.
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        let dt = 0.1;
        let mut correct = 0usize;
        let trials = 1000;
        for _ in 0..trials {
            let n = rng.random_range(10..60);
            let center = Vec3::new(
                rng.random_range(-40.0..40.0),
                rng.random_range(-40.0..40.0),
                rng.random_range(0.5..2.0),
            );
            let cluster: Vec<Vec3> = (0..n)
                .map(|_| {
                    center
                        + Vec3::new(
                            rng.random_range(-2.0..2.0),
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-0.7..0.7),
                        )
                })
                .collect();
            let truth = Vec3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                0.0,
            );
            let ghost = loop {
                let g = Vec3::new(
                    rng.random_range(-25.0..25.0),
                    rng.random_range(-25.0..25.0),
                    0.0,
                );
                if (g - truth).norm() >= 2.0 {
                    break g;
                }
            };
            let next: Vec<Vec3> = cluster.iter().map(|p| p + truth * dt).collect();
            let tree = KdTree3::build(&next);
            // Candidate order randomized so index ties cannot help.
            let (candidates, truth_idx) = if rng.random_bool(0.5) {
                (vec![truth, ghost], 0)
            } else {
                (vec![ghost, truth], 1)
            };
            let (chosen, _) =
                resolve_velocity_ambiguity(&cluster, &candidates, Some(&tree), dt).unwrap();
            if chosen == truth_idx {
                correct += 1;
            }
        }
        assert!(
            correct as f64 >= 0.99 * trials as f64,
            "only {correct}/{trials} trials chose the true velocity"
        );
    }

    #[test]
    fn total_flow_adds_ego_displacement() {
        let ego = EgoState {
            v_ego: Vec3::new(10.0, 0.0, 0.0),
            dt: 0.1,
            sensors: vec![SensorExtrinsic::identity()],
        };
        let mut flow = FlowField::all_static(2);
        flow.entries[1].delta = Vec3::new(1.5, 0.0, 0.0);
        flow.entries[1].dynamic = true;
        let total = assemble_total_flow(&flow, &ego);
        assert_eq!(total[0], Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(total[1], Vec3::new(2.5, 0.0, 0.0));

        let parked = EgoState {
            v_ego: Vec3::zeros(),
            dt: 0.1,
            sensors: vec![],
        };
        let total = assemble_total_flow(&flow, &parked);
        assert_eq!(total[1], Vec3::new(1.5, 0.0, 0.0));
    }

    /// Minimal hand-built scene exercising propagate_labels end to end.
    #[test]
    fn propagation_assigns_rigid_deltas_and_masks() {
        let ego = EgoState {
            v_ego: Vec3::zeros(),
            dt: 0.1,
            sensors: vec![SensorExtrinsic::identity()],
        };
        // Four LiDAR points: 0,1 belong to a moving cluster, 2 is an
        // unclustered point, 3 is ground.
        let positions = vec![
            Vec3::new(10.0, 0.0, 1.0),
            Vec3::new(10.3, 0.0, 1.0),
            Vec3::new(30.0, 5.0, 1.0),
            Vec3::new(5.0, 0.0, 0.0),
        ];
        let prepared = PreparedLidarFrame {
            kept: vec![0, 1, 2],
            ground: vec![3],
            high: vec![0, 1, 2],
            low: vec![],
            clusters: vec![vec![0, 1]],
            unclustered: vec![2],
        };
        let truth = Vec3::new(15.0, 0.0, 0.0);
        let radar_pt = RadarPoint {
            position: Vec3::new(10.1, 0.05, 1.0),
            v_meas: 0.0,
            sensor_id: 0,
            frame_index: 0,
        };
        let radar = RadarMotionEstimate {
            compensated: vec![crate::radar::compensate_doppler(&radar_pt, &ego).unwrap()],
            dynamic: vec![0],
            clusters: vec![RadarCluster {
                member_indices: vec![0],
                v_full: truth,
                solve_residual: 0.0,
                rank_deficient: true,
            }],
            point_cluster: vec![Some(0)],
        };
        let a = Association {
            nearest_radar: Some(0),
            distance: 0.05,
            valid: true,
            radar_is_dynamic: true,
        };
        let associations = vec![Some(a), Some(a), None, None];
        let (flow, clusters, _) = propagate_labels(
            4,
            &prepared,
            &positions,
            &radar,
            &associations,
            None,
            &ego,
        )
        .unwrap();

        let delta = Vec3::new(1.5, 0.0, 0.0);
        assert_eq!(flow.entries[0].delta, delta);
        assert_eq!(flow.entries[1].delta, delta);
        // Rigidity: identical bits on every member.
        assert_eq!(flow.entries[0].delta, flow.entries[1].delta);
        assert!(flow.entries[0].valid && flow.entries[1].valid);
        assert_eq!(flow.entries[0].cluster_id, Some(0));
        // Unclustered and ground points: zero flow, masked out.
        for i in [2usize, 3] {
            assert_eq!(flow.entries[i].delta, Vec3::zeros());
            assert!(!flow.entries[i].dynamic);
            assert!(!flow.entries[i].valid);
            assert_eq!(flow.entries[i].cluster_id, None);
        }
        assert_eq!(clusters[0].assigned_velocity, Some(truth));
        assert_eq!(clusters[0].source_radar_clusters, vec![0]);
    }
}
