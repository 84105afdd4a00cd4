//! Training-free scene flow labels for LiDAR point clouds from 4D radar
//! Doppler.
//!
//! Modern 4D radar measures a radial velocity per return. This crate turns
//! those one-dimensional measurements into full 3D object velocities and
//! propagates them onto the co-mounted LiDAR's point cloud as dense motion
//! labels, with no training involved:
//!
//! 1. [`radar`] compensates every Doppler measurement for ego motion, gates
//!    dynamic returns, clusters them over a spatial + velocity proximity
//!    graph, and recovers one rigid velocity per cluster with a bounded
//!    least-squares solve.
//! 2. [`lidar`] prepares the LiDAR frame: grid-based ground removal, an
//!    intensity split that keeps weather clutter out of clustering, density
//!    clustering and re-attachment of nearby low-intensity points.
//! 3. [`transfer`] associates LiDAR points to radar through a
//!    range-adaptive gate, votes each cluster dynamic or static, resolves
//!    conflicting velocity candidates by forward projection and Chamfer
//!    distance, and emits the per-point flow field.
//! 4. [`metrics`] scores a flow field against ground truth; [`synth`]
//!    builds synthetic rigid-body scenes whose exact ground truth makes the
//!    whole pipeline verifiable to numerical precision.
//!
//! The [`pipeline`] module binds the stages together for one frame pair and
//! [`cli`] exposes them as the `radarflow` command-line tool. A narrative
//! guide lives in `book/`; its code snippets compile and run as doc-tests
//! of this crate.
//!
//! ```
//! use radarflow::config::PipelineConfig;
//! use radarflow::pipeline::run_frame_pair;
//! use radarflow::synth::{generate_frame_pair, preset};
//!
//! let scene = preset("ghost-alley")?;
//! let (frame_t, frame_t1) = generate_frame_pair(&scene)?;
//! let result = run_frame_pair(
//!     &frame_t.to_frame(),
//!     &frame_t1.to_frame(),
//!     &PipelineConfig::default(),
//! )?;
//! assert_eq!(result.flow.len(), frame_t.lidar.len());
//! # Ok::<(), radarflow::Error>(())
//! ```

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod lidar;
pub mod metrics;
pub mod pipeline;
pub mod radar;
pub mod solver;
pub mod spatial;
pub mod synth;
pub mod transfer;
pub mod types;

pub use crate::config::PipelineConfig;
pub use crate::error::{Error, Result};
pub use crate::pipeline::{run_frame_pair, FramePairResult};
pub use crate::types::{
    EgoState, FlowEntry, FlowField, Frame, LidarCluster, LidarPoint, MotionClass, RadarCluster,
    RadarPoint, SensorExtrinsic, Vec3,
};

// The guide's chapters double as doc-tests so the book and the library
// cannot drift apart.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            #[allow(dead_code)]
            struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(RadarVelocity, "../../../book/src/radar-velocity.md");
    chapter!(LidarPreparation, "../../../book/src/lidar-preparation.md");
    chapter!(LabelPropagation, "../../../book/src/label-propagation.md");
    chapter!(Evaluation, "../../../book/src/evaluation.md");
    chapter!(SyntheticScenes, "../../../book/src/synthetic-scenes.md");
    chapter!(CommandLine, "../../../book/src/cli.md");
}
