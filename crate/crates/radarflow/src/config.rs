//! Pipeline thresholds.
//!
//! Every tunable of the pipeline lives here with its default value. The CLI
//! reads the same structure from a TOML file and snapshots the effective
//! values into the run manifest, so a config file plus a seed reproduces any
//! run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All pipeline thresholds. Distances in meters, velocities in m/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Doppler magnitude above which a compensated radar point counts as
    /// dynamic (strict inequality).
    pub delta_dyn: f64,
    /// Spatial edge threshold for connected-components clustering of dynamic
    /// radar points.
    pub delta_spatial: f64,
    /// Doppler-velocity-vector edge threshold for the same graph.
    pub delta_velocity: f64,
    /// Reflectivity splitting LiDAR points into high/low subsets
    /// (`intensity >= delta_intensity` is high).
    pub delta_intensity: f64,
    /// Maximum distance for re-attaching a low-intensity point to an
    /// existing cluster (strict inequality).
    pub delta_neighbor: f64,
    /// Radar-LiDAR association gate at zero range.
    pub delta_adaptive_min: f64,
    /// Radar-LiDAR association gate at `adaptive_range_ref` and beyond.
    pub delta_adaptive_max: f64,
    /// Range at which the association gate saturates at its maximum.
    pub adaptive_range_ref: f64,
    /// Per-axis physical bound for the cluster velocity solver.
    pub v_bound: f64,
    /// Half extent of the evaluation grid centered on the ego vehicle.
    pub grid_half_extent: f64,
    /// Neighborhood radius of the density clustering of LiDAR points.
    pub density_cluster_eps: f64,
    /// Minimum neighbor count (excluding the point itself) for a density
    /// core point.
    pub density_cluster_min_pts: usize,
    /// Flow magnitude above which a point counts as dynamic in evaluation
    /// (strict inequality).
    pub dynamic_flow_threshold: f64,
    /// XY cell size of the grid-based ground removal.
    pub ground_cell_size: f64,
    /// Height band above the per-cell lowest point classified as ground.
    pub ground_height_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            delta_dyn: 0.05,
            delta_spatial: 3.0,
            delta_velocity: 1.5,
            delta_intensity: 0.008,
            delta_neighbor: 0.5,
            delta_adaptive_min: 0.1,
            delta_adaptive_max: 5.0,
            adaptive_range_ref: 200.0,
            v_bound: 60.0,
            grid_half_extent: 204.8,
            density_cluster_eps: 1.0,
            density_cluster_min_pts: 5,
            dynamic_flow_threshold: 0.05,
            ground_cell_size: 1.0,
            ground_height_tol: 0.3,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("delta_dyn", self.delta_dyn),
            ("delta_spatial", self.delta_spatial),
            ("delta_velocity", self.delta_velocity),
            ("delta_intensity", self.delta_intensity),
            ("delta_neighbor", self.delta_neighbor),
            ("delta_adaptive_min", self.delta_adaptive_min),
            ("delta_adaptive_max", self.delta_adaptive_max),
            ("adaptive_range_ref", self.adaptive_range_ref),
            ("v_bound", self.v_bound),
            ("grid_half_extent", self.grid_half_extent),
            ("density_cluster_eps", self.density_cluster_eps),
            ("dynamic_flow_threshold", self.dynamic_flow_threshold),
            ("ground_cell_size", self.ground_cell_size),
            ("ground_height_tol", self.ground_height_tol),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        if self.density_cluster_min_pts == 0 {
            return Err(Error::InvalidConfig(
                "density_cluster_min_pts must be at least 1".into(),
            ));
        }
        if self.delta_adaptive_min >= self.delta_adaptive_max {
            return Err(Error::InvalidConfig(format!(
                "delta_adaptive_min ({}) must be < delta_adaptive_max ({})",
                self.delta_adaptive_min, self.delta_adaptive_max
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("config serialization failed: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_nonpositive_threshold() {
        let cfg = PipelineConfig {
            delta_dyn: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_inverted_adaptive_band() {
        let cfg = PipelineConfig {
            delta_adaptive_min: 6.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
