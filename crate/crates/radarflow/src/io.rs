//! On-disk formats.
//!
//! A frame lives in a directory named by its zero-padded index:
//!
//! ```text
//! 000042/
//!   lidar.csv   x,y,z,intensity
//!   radar.csv   x,y,z,v_meas,sensor_id      (optional; absence = no radar)
//!   ego.json    {"v_ego": [...], "dt": ..., "extrinsics": [...]}
//!   gt.csv      dx,dy,dz,class              (optional; class in {BS,FS,FD})
//!   frame.bin   compact little-endian container of the same schema
//! ```
//!
//! When `frame.bin` exists it is preferred; it round-trips positions
//! bit-exactly. The text files print floats in shortest round-trip form, so
//! they also reparse exactly (well inside the 1e-6 relative contract).
//!
//! Flow labels are one row per LiDAR point, `dx,dy,dz,dynamic,valid,
//! cluster_id`, as CSV or the equivalent binary container.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::synth::{GeneratedFrame, SceneSpec};
use crate::types::{
    EgoState, FlowEntry, FlowField, Frame, LidarPoint, Mat3, MotionClass, RadarPoint,
    SensorExtrinsic, Vec3,
};

const FRAME_MAGIC: &[u8; 16] = b"RADARFLOWFRAME01";
const FLOW_MAGIC: &[u8; 16] = b"RADARFLOWFLOW001";
const FORMAT_VERSION: u32 = 1;

/// Output format of frames and flow files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Text,
    Binary,
}

// ---------------------------------------------------------------------------
// CSV row types
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LidarRow {
    x: f64,
    y: f64,
    z: f64,
    intensity: f64,
}

#[derive(Serialize, Deserialize)]
struct RadarRow {
    x: f64,
    y: f64,
    z: f64,
    v_meas: f64,
    sensor_id: u32,
}

#[derive(Serialize, Deserialize)]
struct GtRow {
    dx: f64,
    dy: f64,
    dz: f64,
    class: String,
}

#[derive(Serialize, Deserialize)]
struct FlowRow {
    dx: f64,
    dy: f64,
    dz: f64,
    dynamic: u8,
    valid: u8,
    cluster_id: i64,
}

#[derive(Serialize, Deserialize)]
struct EgoJson {
    v_ego: [f64; 3],
    dt: f64,
    extrinsics: Vec<ExtrinsicJson>,
}

#[derive(Serialize, Deserialize)]
struct ExtrinsicJson {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<&SensorExtrinsic> for ExtrinsicJson {
    fn from(e: &SensorExtrinsic) -> Self {
        let r = &e.rotation;
        ExtrinsicJson {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [e.translation.x, e.translation.y, e.translation.z],
        }
    }
}

impl ExtrinsicJson {
    fn to_extrinsic(&self) -> SensorExtrinsic {
        let r = &self.rotation;
        SensorExtrinsic {
            rotation: Mat3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            translation: Vec3::from(self.translation),
        }
    }
}

// ---------------------------------------------------------------------------
// Frame directories
// ---------------------------------------------------------------------------

/// Frame index from a directory name like `000042`.
pub fn frame_index_of(path: &Path) -> Option<i64> {
    path.file_name()?.to_str()?.parse::<i64>().ok()
}

/// All numeric-named frame directories under `root`, sorted by index.
pub fn list_frame_dirs(root: &Path) -> Result<Vec<(i64, PathBuf)>> {
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            if let Some(idx) = frame_index_of(&path) {
                frames.push((idx, path));
            }
        }
    }
    frames.sort_by_key(|(i, _)| *i);
    Ok(frames)
}

/// Frame data plus optional ground truth, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredFrame {
    pub frame: Frame,
    pub gt: Option<(Vec<Vec3>, Vec<MotionClass>)>,
}

/// Read one frame directory (binary container preferred).
pub fn read_frame_dir(dir: &Path) -> Result<StoredFrame> {
    let bin = dir.join("frame.bin");
    if bin.is_file() {
        return read_frame_binary(&bin);
    }
    let index = frame_index_of(dir).unwrap_or(0);

    let ego = read_ego_json(&dir.join("ego.json"))?;

    let lidar_path = dir.join("lidar.csv");
    let mut lidar = Vec::new();
    let mut reader = csv::Reader::from_path(&lidar_path)
        .map_err(|e| Error::parse(&lidar_path, e.to_string()))?;
    for row in reader.deserialize() {
        let row: LidarRow = row.map_err(|e| Error::parse(&lidar_path, e.to_string()))?;
        lidar.push(LidarPoint {
            position: Vec3::new(row.x, row.y, row.z),
            intensity: row.intensity,
            frame_index: index,
        });
    }

    let radar_path = dir.join("radar.csv");
    let mut radar = Vec::new();
    if radar_path.is_file() {
        let mut reader = csv::Reader::from_path(&radar_path)
            .map_err(|e| Error::parse(&radar_path, e.to_string()))?;
        for row in reader.deserialize() {
            let row: RadarRow = row.map_err(|e| Error::parse(&radar_path, e.to_string()))?;
            radar.push(RadarPoint {
                position: Vec3::new(row.x, row.y, row.z),
                v_meas: row.v_meas,
                sensor_id: row.sensor_id as usize,
                frame_index: index,
            });
        }
    } else {
        log::warn!("{}: no radar.csv, continuing with an empty radar frame", dir.display());
    }

    let gt = read_gt_csv(&dir.join("gt.csv"))?;

    Ok(StoredFrame {
        frame: Frame {
            index,
            lidar,
            radar,
            ego,
        },
        gt,
    })
}

fn read_ego_json(path: &Path) -> Result<EgoState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: EgoJson =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(EgoState {
        v_ego: Vec3::from(parsed.v_ego),
        dt: parsed.dt,
        sensors: parsed.extrinsics.iter().map(|e| e.to_extrinsic()).collect(),
    })
}

fn read_gt_csv(path: &Path) -> Result<Option<(Vec<Vec3>, Vec<MotionClass>)>> {
    if !path.is_file() {
        return Ok(None);
    }
    let mut flow = Vec::new();
    let mut classes = Vec::new();
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    for row in reader.deserialize() {
        let row: GtRow = row.map_err(|e| Error::parse(path, e.to_string()))?;
        let class = MotionClass::parse(&row.class)
            .ok_or_else(|| Error::parse(path, format!("unknown class '{}'", row.class)))?;
        flow.push(Vec3::new(row.dx, row.dy, row.dz));
        classes.push(class);
    }
    Ok(Some((flow, classes)))
}

/// Write one generated frame as a directory. `gt` is written for frames that
/// carry it.
pub fn write_frame_dir(root: &Path, frame: &GeneratedFrame, format: FileFormat, with_gt: bool) -> Result<PathBuf> {
    let dir = root.join(format!("{:06}", frame.index));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    match format {
        FileFormat::Binary => {
            write_frame_binary(&dir.join("frame.bin"), frame, with_gt)?;
        }
        FileFormat::Text => {
            let lidar_path = dir.join("lidar.csv");
            let mut w = csv::Writer::from_path(&lidar_path)
                .map_err(|e| Error::parse(&lidar_path, e.to_string()))?;
            for p in &frame.lidar {
                w.serialize(LidarRow {
                    x: p.position.x,
                    y: p.position.y,
                    z: p.position.z,
                    intensity: p.intensity,
                })
                .map_err(|e| Error::parse(&lidar_path, e.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(&lidar_path, e))?;

            let radar_path = dir.join("radar.csv");
            let mut w = csv::Writer::from_path(&radar_path)
                .map_err(|e| Error::parse(&radar_path, e.to_string()))?;
            for p in &frame.radar {
                w.serialize(RadarRow {
                    x: p.position.x,
                    y: p.position.y,
                    z: p.position.z,
                    v_meas: p.v_meas,
                    sensor_id: p.sensor_id as u32,
                })
                .map_err(|e| Error::parse(&radar_path, e.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(&radar_path, e))?;

            let ego_path = dir.join("ego.json");
            let ego = EgoJson {
                v_ego: [frame.ego.v_ego.x, frame.ego.v_ego.y, frame.ego.v_ego.z],
                dt: frame.ego.dt,
                extrinsics: frame.ego.sensors.iter().map(ExtrinsicJson::from).collect(),
            };
            let text = serde_json::to_string_pretty(&ego)
                .map_err(|e| Error::parse(&ego_path, e.to_string()))?;
            std::fs::write(&ego_path, text).map_err(|e| Error::io(&ego_path, e))?;

            if with_gt {
                let gt_path = dir.join("gt.csv");
                let mut w = csv::Writer::from_path(&gt_path)
                    .map_err(|e| Error::parse(&gt_path, e.to_string()))?;
                for (f, c) in frame.gt_flow.iter().zip(&frame.gt_class) {
                    w.serialize(GtRow {
                        dx: f.x,
                        dy: f.y,
                        dz: f.z,
                        class: c.as_str().to_string(),
                    })
                    .map_err(|e| Error::parse(&gt_path, e.to_string()))?;
                }
                w.flush().map_err(|e| Error::io(&gt_path, e))?;
            }
        }
    }
    Ok(dir)
}

// ---------------------------------------------------------------------------
// Binary container
// ---------------------------------------------------------------------------

struct BinWriter<W: Write> {
    inner: W,
    path: PathBuf,
}

impl<W: Write> BinWriter<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn i64(&mut self, v: i64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn vec3(&mut self, v: &Vec3) -> Result<()> {
        self.f64(v.x)?;
        self.f64(v.y)?;
        self.f64(v.z)
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner
            .write_all(b)
            .map_err(|e| Error::io(&self.path, e))
    }
}

struct BinReader<R: Read> {
    inner: R,
    path: PathBuf,
}

impl<R: Read> BinReader<R> {
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes::<8>()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.bytes::<8>()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes::<8>()?))
    }
    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::io(&self.path, e))?;
        Ok(buf)
    }
}

fn write_frame_binary(path: &Path, frame: &GeneratedFrame, with_gt: bool) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BinWriter {
        inner: BufWriter::new(file),
        path: path.to_path_buf(),
    };
    w.bytes(FRAME_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.i64(frame.index)?;
    w.f64(frame.ego.dt)?;
    w.vec3(&frame.ego.v_ego)?;
    w.u32(frame.ego.sensors.len() as u32)?;
    for s in &frame.ego.sensors {
        for r in 0..3 {
            for c in 0..3 {
                w.f64(s.rotation[(r, c)])?;
            }
        }
        w.vec3(&s.translation)?;
    }
    w.u64(frame.lidar.len() as u64)?;
    for p in &frame.lidar {
        w.vec3(&p.position)?;
        w.f64(p.intensity)?;
    }
    w.u64(frame.radar.len() as u64)?;
    for p in &frame.radar {
        w.vec3(&p.position)?;
        w.f64(p.v_meas)?;
        w.u32(p.sensor_id as u32)?;
    }
    let has_gt = with_gt && frame.gt_flow.len() == frame.lidar.len();
    w.u8(has_gt as u8)?;
    if has_gt {
        for (f, c) in frame.gt_flow.iter().zip(&frame.gt_class) {
            w.vec3(f)?;
            w.u8(match c {
                MotionClass::BackgroundStatic => 0,
                MotionClass::ForegroundStatic => 1,
                MotionClass::ForegroundDynamic => 2,
            })?;
        }
    }
    w.inner.flush().map_err(|e| Error::io(path, e))
}

fn read_frame_binary(path: &Path) -> Result<StoredFrame> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BinReader {
        inner: BufReader::new(file),
        path: path.to_path_buf(),
    };
    let magic = r.bytes::<16>()?;
    if &magic != FRAME_MAGIC {
        return Err(Error::parse(path, "bad magic: not a frame container"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::parse(path, format!("unsupported version {version}")));
    }
    let index = r.i64()?;
    let dt = r.f64()?;
    let v_ego = r.vec3()?;
    let n_sensors = r.u32()? as usize;
    let mut sensors = Vec::with_capacity(n_sensors);
    for _ in 0..n_sensors {
        let mut rotation = Mat3::zeros();
        for row in 0..3 {
            for col in 0..3 {
                rotation[(row, col)] = r.f64()?;
            }
        }
        let translation = r.vec3()?;
        sensors.push(SensorExtrinsic {
            rotation,
            translation,
        });
    }
    let n_lidar = r.u64()? as usize;
    let mut lidar = Vec::with_capacity(n_lidar);
    for _ in 0..n_lidar {
        let position = r.vec3()?;
        let intensity = r.f64()?;
        lidar.push(LidarPoint {
            position,
            intensity,
            frame_index: index,
        });
    }
    let n_radar = r.u64()? as usize;
    let mut radar = Vec::with_capacity(n_radar);
    for _ in 0..n_radar {
        let position = r.vec3()?;
        let v_meas = r.f64()?;
        let sensor_id = r.u32()? as usize;
        radar.push(RadarPoint {
            position,
            v_meas,
            sensor_id,
            frame_index: index,
        });
    }
    let gt = if r.u8()? == 1 {
        let mut flow = Vec::with_capacity(n_lidar);
        let mut classes = Vec::with_capacity(n_lidar);
        for _ in 0..n_lidar {
            flow.push(r.vec3()?);
            classes.push(match r.u8()? {
                0 => MotionClass::BackgroundStatic,
                1 => MotionClass::ForegroundStatic,
                2 => MotionClass::ForegroundDynamic,
                other => {
                    return Err(Error::parse(path, format!("unknown class tag {other}")));
                }
            });
        }
        Some((flow, classes))
    } else {
        None
    };
    Ok(StoredFrame {
        frame: Frame {
            index,
            lidar,
            radar,
            ego: EgoState {
                v_ego,
                dt,
                sensors,
            },
        },
        gt,
    })
}

// ---------------------------------------------------------------------------
// Flow files
// ---------------------------------------------------------------------------

pub fn write_flow(path: &Path, flow: &FlowField, format: FileFormat) -> Result<()> {
    match format {
        FileFormat::Text => {
            let mut w =
                csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
            for e in &flow.entries {
                w.serialize(FlowRow {
                    dx: e.delta.x,
                    dy: e.delta.y,
                    dz: e.delta.z,
                    dynamic: e.dynamic as u8,
                    valid: e.valid as u8,
                    cluster_id: e.cluster_id.map(|c| c as i64).unwrap_or(-1),
                })
                .map_err(|e| Error::parse(path, e.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        FileFormat::Binary => {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BinWriter {
                inner: BufWriter::new(file),
                path: path.to_path_buf(),
            };
            w.bytes(FLOW_MAGIC)?;
            w.u32(FORMAT_VERSION)?;
            w.u64(flow.entries.len() as u64)?;
            for e in &flow.entries {
                w.vec3(&e.delta)?;
                w.u8(e.dynamic as u8)?;
                w.u8(e.valid as u8)?;
                w.i64(e.cluster_id.map(|c| c as i64).unwrap_or(-1))?;
            }
            w.inner.flush().map_err(|e| Error::io(path, e))
        }
    }
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let mut head = [0u8; 16];
    {
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let n = f.read(&mut head).map_err(|e| Error::io(path, e))?;
        if n == 16 && &head == FLOW_MAGIC {
            drop(f);
            return read_flow_binary(path);
        }
    }
    let mut entries = Vec::new();
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    for row in reader.deserialize() {
        let row: FlowRow = row.map_err(|e| Error::parse(path, e.to_string()))?;
        entries.push(FlowEntry {
            delta: Vec3::new(row.dx, row.dy, row.dz),
            dynamic: row.dynamic != 0,
            valid: row.valid != 0,
            cluster_id: (row.cluster_id >= 0).then_some(row.cluster_id as usize),
        });
    }
    Ok(FlowField { entries })
}

fn read_flow_binary(path: &Path) -> Result<FlowField> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BinReader {
        inner: BufReader::new(file),
        path: path.to_path_buf(),
    };
    let magic = r.bytes::<16>()?;
    if &magic != FLOW_MAGIC {
        return Err(Error::parse(path, "bad magic: not a flow container"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::parse(path, format!("unsupported version {version}")));
    }
    let n = r.u64()? as usize;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let delta = r.vec3()?;
        let dynamic = r.u8()? != 0;
        let valid = r.u8()? != 0;
        let cluster_id = r.i64()?;
        entries.push(FlowEntry {
            delta,
            dynamic,
            valid,
            cluster_id: (cluster_id >= 0).then_some(cluster_id as usize),
        });
    }
    Ok(FlowField { entries })
}

// ---------------------------------------------------------------------------
// Manifests and debug dumps
// ---------------------------------------------------------------------------

/// Reproducibility record written next to every command output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub config: PipelineConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
    /// Wall time per processed frame pair, milliseconds.
    pub frame_timings_ms: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        Self {
            command: command.to_string(),
            inputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            config: config.clone(),
            scene: None,
            frame_timings_ms: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("manifest serialization failed: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

#[derive(Serialize)]
struct ClusterDump<'a> {
    members: &'a [usize],
    v_full: [f64; 3],
    residual: f64,
    rank_deficient: bool,
}

/// Per-frame JSON dump of the solved radar clusters.
pub fn write_cluster_dump(path: &Path, clusters: &[crate::types::RadarCluster]) -> Result<()> {
    let dump: Vec<ClusterDump> = clusters
        .iter()
        .map(|c| ClusterDump {
            members: &c.member_indices,
            v_full: [c.v_full.x, c.v_full.y, c.v_full.z],
            residual: c.solve_residual,
            rank_deficient: c.rank_deficient,
        })
        .collect();
    let text = serde_json::to_string_pretty(&dump)
        .map_err(|e| Error::Data(format!("cluster dump serialization failed: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Cluster-colored point dump, one `x y z cluster_id` line per kept point.
pub fn write_prep_dump(
    path: &Path,
    positions: &[Vec3],
    prepared: &crate::lidar::PreparedLidarFrame,
) -> Result<()> {
    let mut cluster_of = vec![-1i64; positions.len()];
    for (cid, members) in prepared.clusters.iter().enumerate() {
        for &m in members {
            cluster_of[m] = cid as i64;
        }
    }
    let mut out = String::new();
    for &i in &prepared.kept {
        let p = positions[i];
        out.push_str(&format!("{} {} {} {}\n", p.x, p.y, p.z, cluster_of[i]));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
