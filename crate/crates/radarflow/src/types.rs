//! Shared domain types and frame conventions.
//!
//! All pipeline math happens in the ego frame at time `t`. Radar returns are
//! stored in ego coordinates on ingest; the line-of-sight direction used by
//! the Doppler math lives in the sensor frame and is recovered through the
//! sensor extrinsics (see [`crate::radar`]).
//!
//! Doppler sign convention: positive `v_meas` means the target is receding
//! from the sensor. Radar datasheets are not consistent on this point, so the
//! convention is stated here once and assumed everywhere else.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// 3-vector of f64, used for positions (m), velocities (m/s) and flow (m).
pub type Vec3 = Vector3<f64>;
/// 3x3 rotation / linear map.
pub type Mat3 = Matrix3<f64>;

/// Tolerance used when checking extrinsic rotations for orthonormality.
pub const ROTATION_TOL: f64 = 1e-9;

/// Minimum sensor-relative range for a radar return to be usable: anything
/// closer has no well-defined line of sight.
pub const MIN_SENSOR_RANGE: f64 = 1e-6;

/// A single radar return in the ego frame at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarPoint {
    /// Position in the ego frame, meters.
    pub position: Vec3,
    /// Measured radial velocity, m/s. Positive = receding from the sensor.
    pub v_meas: f64,
    /// Index into the [`EgoState::sensors`] extrinsics table.
    pub sensor_id: usize,
    /// Index of the frame this point was observed in.
    pub frame_index: i64,
}

/// A single LiDAR return in the ego frame at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    /// Position in the ego frame, meters.
    pub position: Vec3,
    /// Calibrated reflectivity in `[0, 1]`.
    pub intensity: f64,
    /// Index of the frame this point was observed in.
    pub frame_index: i64,
}

/// Rigid transform mapping ego-frame coordinates into a sensor frame:
/// `x_sensor = rotation * x_ego + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorExtrinsic {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl SensorExtrinsic {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Sensor origin expressed in the ego frame.
    pub fn origin_in_ego(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Map an ego-frame point into the sensor frame.
    pub fn to_sensor(&self, p_ego: &Vec3) -> Vec3 {
        self.rotation * p_ego + self.translation
    }

    fn check(&self, sensor: usize) -> Result<()> {
        let gram = self.rotation.transpose() * self.rotation;
        let deviation = (gram - Mat3::identity()).abs().max();
        if deviation > ROTATION_TOL {
            return Err(Error::NotOrthonormal { sensor, deviation });
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::ImproperRotation { sensor, det });
        }
        if !self.translation.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidEgoState(format!(
                "sensor {sensor} translation is not finite"
            )));
        }
        Ok(())
    }
}

/// Ego motion and sensor calibration for one frame interval.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoState {
    /// Ego linear velocity in the ego frame, m/s. The frame-to-frame ego
    /// transform is modeled as a pure translation by `v_ego * dt`.
    pub v_ego: Vec3,
    /// Frame interval, seconds. Strictly positive.
    pub dt: f64,
    /// Per-sensor extrinsics, indexed by `RadarPoint::sensor_id`.
    pub sensors: Vec<SensorExtrinsic>,
}

impl EgoState {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidEgoState(format!("dt must be > 0, got {}", self.dt)));
        }
        if !self.v_ego.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidEgoState("v_ego is not finite".into()));
        }
        for (i, s) in self.sensors.iter().enumerate() {
            s.check(i)?;
        }
        Ok(())
    }

    pub fn sensor(&self, id: usize) -> Result<&SensorExtrinsic> {
        self.sensors.get(id).ok_or(Error::UnknownSensor(id))
    }

    /// Rigid displacement of the ego over one frame interval. Under the pure
    /// translation model this is the same for every point.
    pub fn ego_displacement(&self) -> Vec3 {
        self.v_ego * self.dt
    }
}

/// A cluster of dynamic radar points with its recovered full 3D velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarCluster {
    /// Indices into the radar frame. Non-empty, sorted, duplicate-free.
    pub member_indices: Vec<usize>,
    /// Estimated full 3D velocity, m/s, ego frame. Bounded per axis by the
    /// solver bound.
    pub v_full: Vec3,
    /// RMS of the per-point radial residuals of the least-squares fit, m/s.
    pub solve_residual: f64,
    /// True when the constraint matrix was rank deficient and the returned
    /// velocity is the minimum-norm completion.
    pub rank_deficient: bool,
}

/// A cluster of LiDAR points after label propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarCluster {
    /// Indices into the LiDAR frame. Non-empty, sorted, duplicate-free and
    /// disjoint across the clusters of one frame.
    pub member_indices: Vec<usize>,
    /// Majority-vote motion label.
    pub dynamic: bool,
    /// Velocity transferred from radar; present iff `dynamic`.
    pub assigned_velocity: Option<Vec3>,
    /// Ids of the radar clusters reached by the members' valid associations.
    pub source_radar_clusters: Vec<usize>,
}

/// Per-point scene flow label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowEntry {
    /// Non-ego displacement over one frame interval, meters.
    pub delta: Vec3,
    /// Motion label. Static points always carry `delta == 0`.
    pub dynamic: bool,
    /// True when the point participated in association and clustering, i.e.
    /// it is a member of some LiDAR cluster. Unassociated and noise points
    /// carry `valid == false` so downstream consumers can mask them.
    pub valid: bool,
    /// Id of the LiDAR cluster the point belongs to, if any.
    pub cluster_id: Option<usize>,
}

impl FlowEntry {
    pub fn background() -> Self {
        Self {
            delta: Vec3::zeros(),
            dynamic: false,
            valid: false,
            cluster_id: None,
        }
    }
}

/// Dense non-ego flow over one LiDAR frame; entry `i` labels point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub entries: Vec<FlowEntry>,
}

impl FlowField {
    /// All-static field for a frame of `n` points (degenerate-input contract).
    pub fn all_static(n: usize) -> Self {
        Self {
            entries: vec![FlowEntry::background(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-point non-ego displacement vectors.
    pub fn deltas(&self) -> Vec<Vec3> {
        self.entries.iter().map(|e| e.delta).collect()
    }
}

/// Ground-truth motion class of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionClass {
    /// Background static (ground, buildings, clutter).
    BackgroundStatic,
    /// Foreground static (parked objects).
    ForegroundStatic,
    /// Foreground dynamic (moving objects).
    ForegroundDynamic,
}

impl MotionClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            MotionClass::BackgroundStatic => "BS",
            MotionClass::ForegroundStatic => "FS",
            MotionClass::ForegroundDynamic => "FD",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "BS" => Some(MotionClass::BackgroundStatic),
            "FS" => Some(MotionClass::ForegroundStatic),
            "FD" => Some(MotionClass::ForegroundDynamic),
            _ => None,
        }
    }
}

impl std::fmt::Display for MotionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One time step of sensor data.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: i64,
    pub lidar: Vec<LidarPoint>,
    pub radar: Vec<RadarPoint>,
    pub ego: EgoState,
}

/// A frame that passed ingest validation, plus reject counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedFrame {
    pub frame: Frame,
    pub rejected_lidar: usize,
    pub rejected_radar: usize,
}

/// Validate one frame of sensor data.
///
/// Non-finite points, out-of-range intensities and radar returns at a sensor
/// origin are dropped and counted. An empty LiDAR frame and an unregistered
/// `sensor_id` are hard errors, as is any malformed extrinsic.
pub fn validate_frame(
    lidar: Vec<LidarPoint>,
    radar: Vec<RadarPoint>,
    ego: EgoState,
    frame_index: i64,
) -> Result<ValidatedFrame> {
    ego.validate()?;

    let n_lidar = lidar.len();
    let kept_lidar: Vec<LidarPoint> = lidar
        .into_iter()
        .filter(|p| {
            p.position.iter().all(|c| c.is_finite())
                && p.intensity.is_finite()
                && (0.0..=1.0).contains(&p.intensity)
        })
        .collect();
    if kept_lidar.is_empty() {
        return Err(Error::EmptyLidarFrame);
    }

    let mut kept_radar = Vec::with_capacity(radar.len());
    let n_radar = radar.len();
    for p in radar {
        let sensor = ego.sensor(p.sensor_id)?;
        if !p.position.iter().all(|c| c.is_finite()) || !p.v_meas.is_finite() {
            continue;
        }
        if sensor.to_sensor(&p.position).norm() < MIN_SENSOR_RANGE {
            continue;
        }
        kept_radar.push(p);
    }

    let rejected_lidar = n_lidar - kept_lidar.len();
    let rejected_radar = n_radar - kept_radar.len();
    Ok(ValidatedFrame {
        frame: Frame {
            index: frame_index,
            lidar: kept_lidar,
            radar: kept_radar,
            ego,
        },
        rejected_lidar,
        rejected_radar,
    })
}
