//! Command-line front end: `synth`, `flow`, `batch`, `eval`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 evaluation
//! threshold violated.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io::{
    self, read_frame_dir, write_cluster_dump, write_flow, write_frame_dir, FileFormat,
    RunManifest,
};
use crate::metrics;
use crate::pipeline::run_frame_pair;
use crate::synth::{self, SceneSpec};
use crate::types::Vec3;

#[derive(Parser)]
#[command(
    name = "radarflow",
    version,
    about = "Scene flow labels for LiDAR point clouds from 4D radar Doppler"
)]
struct Cli {
    /// Pipeline config TOML; built-in defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for frame-pair parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Scene seed override for `synth`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Verbose logging.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Text,
    Binary,
}

impl From<FormatArg> for FileFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => FileFormat::Text,
            FormatArg::Binary => FileFormat::Binary,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene sequence with ground truth.
    Synth {
        /// Named preset (see the catalog in the docs).
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// Scene spec TOML file.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of frames to write.
        #[arg(long, default_value_t = 2)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
    },
    /// Estimate flow labels for one frame pair.
    Flow {
        frame_t: PathBuf,
        frame_t1: PathBuf,
        /// Output flow file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
        /// Also dump the solved radar clusters as JSON.
        #[arg(long)]
        dump_clusters: Option<PathBuf>,
        /// Also dump cluster-colored kept points as text.
        #[arg(long)]
        dump_prep: Option<PathBuf>,
    },
    /// Label every consecutive pair of a frame sequence.
    Batch {
        sequence: PathBuf,
        /// Output directory for the flow files and the manifest.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
    },
    /// Evaluate flow files against stored ground truth.
    Eval {
        /// Flow files, one per frame pair, named by the first frame index.
        #[arg(long, required = true, num_args = 1..)]
        flows: Vec<PathBuf>,
        /// Directory of frame dirs holding lidar.csv and gt.csv.
        #[arg(long)]
        frames: PathBuf,
        /// Comma-separated radial bin edges in meters.
        #[arg(long, default_value = "0,35")]
        bins: String,
        /// Write the report JSON here (printed as a table regardless).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit 3 when the mean three-way EPE exceeds this bound.
        #[arg(long)]
        max_mean_epe: Option<f64>,
        /// Exit 3 when any reported bin IoU falls below this bound.
        #[arg(long)]
        min_dynamic_iou: Option<f64>,
    },
}

fn init_logging(verbose: bool) {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        let level = if verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Warn
        };
        let _ = env_logger::Builder::new().filter_level(level).try_init();
    });
}

/// Run the CLI on the given argument vector and return the process exit
/// code. The binary is a thin wrapper around this so tests can drive the
/// full command surface in process.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);

    let config = match &cli.config {
        Some(path) => match PipelineConfig::load(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        },
        None => PipelineConfig::default(),
    };

    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: failed to build thread pool: {e}");
            return 2;
        }
    };

    let outcome = pool.install(|| execute(&cli, &config));
    match outcome {
        Ok(code) => code,
        Err(Error::UnknownPreset { name, catalog }) => {
            eprintln!("error: unknown preset '{name}'");
            eprintln!("available presets: {catalog}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn execute(cli: &Cli, config: &PipelineConfig) -> Result<i32> {
    config.validate()?;
    match &cli.command {
        Command::Synth {
            preset,
            spec,
            frames,
            out,
            format,
        } => cmd_synth(
            preset.as_deref(),
            spec.as_deref(),
            *frames,
            out,
            (*format).into(),
            cli.seed,
            config,
        ),
        Command::Flow {
            frame_t,
            frame_t1,
            out,
            format,
            dump_clusters,
            dump_prep,
        } => cmd_flow(
            frame_t,
            frame_t1,
            out,
            (*format).into(),
            dump_clusters.as_deref(),
            dump_prep.as_deref(),
            config,
        ),
        Command::Batch {
            sequence,
            out,
            format,
        } => cmd_batch(sequence, out, (*format).into(), config),
        Command::Eval {
            flows,
            frames,
            bins,
            out,
            max_mean_epe,
            min_dynamic_iou,
        } => cmd_eval(
            flows,
            frames,
            bins,
            out.as_deref(),
            *max_mean_epe,
            *min_dynamic_iou,
            config,
        ),
    }
}

fn cmd_synth(
    preset: Option<&str>,
    spec_path: Option<&Path>,
    frames: usize,
    out: &Path,
    format: FileFormat,
    seed_override: Option<u64>,
    config: &PipelineConfig,
) -> Result<i32> {
    let mut scene: SceneSpec = match (preset, spec_path) {
        (Some(name), None) => synth::preset(name)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?
        }
        _ => {
            return Err(Error::Data(
                "synth needs exactly one of --preset or --spec".into(),
            ))
        }
    };
    if let Some(seed) = seed_override {
        scene.seed = seed;
    }
    if frames < 2 {
        return Err(Error::NeedTwoFrames(frames));
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let generated = synth::generate_sequence(&scene, frames)?;
    for frame in &generated {
        write_frame_dir(out, frame, format, true)?;
    }

    let mut manifest = RunManifest::new("synth", config);
    manifest.inputs = vec![preset
        .map(str::to_string)
        .or_else(|| spec_path.map(|p| p.display().to_string()))
        .unwrap_or_default()];
    manifest.seed = Some(scene.seed);
    manifest.scene = Some(scene);
    manifest.write(&out.join("manifest.json"))?;
    println!("wrote {} frames to {}", generated.len(), out.display());
    Ok(0)
}

fn cmd_flow(
    frame_t: &Path,
    frame_t1: &Path,
    out: &Path,
    format: FileFormat,
    dump_clusters: Option<&Path>,
    dump_prep: Option<&Path>,
    config: &PipelineConfig,
) -> Result<i32> {
    let stored_t = read_frame_dir(frame_t)?;
    let stored_t1 = read_frame_dir(frame_t1)?;

    let start = Instant::now();
    let result = run_frame_pair(&stored_t.frame, &stored_t1.frame, config)?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;

    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_flow(out, &result.flow, format)?;

    if let Some(path) = dump_clusters {
        write_cluster_dump(path, &result.radar.clusters)?;
    }
    if let Some(path) = dump_prep {
        let positions: Vec<Vec3> = stored_t.frame.lidar.iter().map(|p| p.position).collect();
        io::write_prep_dump(path, &positions, &result.prepared)?;
    }

    let mut manifest = RunManifest::new("flow", config);
    manifest.inputs = vec![
        frame_t.display().to_string(),
        frame_t1.display().to_string(),
    ];
    manifest.frame_timings_ms = vec![(format!("{:06}", stored_t.frame.index), elapsed_ms)];
    manifest.write(&out.with_extension("manifest.json"))?;
    println!(
        "labeled {} points in {elapsed_ms:.1} ms ({} dynamic clusters)",
        result.flow.len(),
        result.clusters.iter().filter(|c| c.dynamic).count()
    );
    Ok(0)
}

fn flow_file_name(index: i64, format: FileFormat) -> String {
    match format {
        FileFormat::Text => format!("{index:06}.flow.csv"),
        FileFormat::Binary => format!("{index:06}.flow.bin"),
    }
}

fn cmd_batch(
    sequence: &Path,
    out: &Path,
    format: FileFormat,
    config: &PipelineConfig,
) -> Result<i32> {
    let frames = io::list_frame_dirs(sequence)?;
    if frames.len() < 2 {
        return Err(Error::NeedTwoFrames(frames.len()));
    }
    for window in frames.windows(2) {
        if window[1].0 != window[0].0 + 1 {
            log::warn!(
                "gap in frame numbering between {} and {}; only consecutive pairs are labeled",
                window[0].0,
                window[1].0
            );
        }
    }
    let pairs: Vec<(&(i64, PathBuf), &(i64, PathBuf))> = frames
        .windows(2)
        .filter(|w| w[1].0 == w[0].0 + 1)
        .map(|w| (&w[0], &w[1]))
        .collect();

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let timings: Result<Vec<(String, f64)>> = pairs
        .par_iter()
        .map(|((idx, dir_t), (_, dir_t1))| {
            let stored_t = read_frame_dir(dir_t)?;
            let stored_t1 = read_frame_dir(dir_t1)?;
            let start = Instant::now();
            let result = run_frame_pair(&stored_t.frame, &stored_t1.frame, config)?;
            let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
            write_flow(&out.join(flow_file_name(*idx, format)), &result.flow, format)?;
            Ok((format!("{idx:06}"), elapsed_ms))
        })
        .collect();
    let mut timings = timings?;
    timings.sort_by(|a, b| a.0.cmp(&b.0));

    let mut manifest = RunManifest::new("batch", config);
    manifest.inputs = vec![sequence.display().to_string()];
    manifest.frame_timings_ms = timings;
    manifest.write(&out.join("manifest.json"))?;
    println!("labeled {} frame pairs into {}", pairs.len(), out.display());
    Ok(0)
}

fn leading_index(path: &Path) -> Option<i64> {
    let name = path.file_name()?.to_str()?;
    let digits: String = name.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

fn cmd_eval(
    flows: &[PathBuf],
    frames: &Path,
    bins: &str,
    out: Option<&Path>,
    max_mean_epe: Option<f64>,
    min_dynamic_iou: Option<f64>,
    config: &PipelineConfig,
) -> Result<i32> {
    let edges: Vec<f64> = bins
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("bad bin edge '{s}' in --bins")))
        })
        .collect::<Result<_>>()?;
    if edges.is_empty() || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Data("--bins must be strictly ascending".into()));
    }

    let mut positions = Vec::new();
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    let mut classes = Vec::new();
    for flow_path in flows {
        let index = leading_index(flow_path).ok_or_else(|| {
            Error::Data(format!(
                "cannot infer a frame index from flow file {}",
                flow_path.display()
            ))
        })?;
        let frame_dir = frames.join(format!("{index:06}"));
        let stored = read_frame_dir(&frame_dir)?;
        let flow = io::read_flow(flow_path)?;
        let (gt_flow, gt_class) = stored.gt.ok_or_else(|| {
            Error::Data(format!("{}: no ground truth (gt.csv)", frame_dir.display()))
        })?;
        if flow.len() != stored.frame.lidar.len() || gt_flow.len() != stored.frame.lidar.len() {
            return Err(Error::CountMismatch {
                context: format!("frame {index:06}"),
                expected: stored.frame.lidar.len(),
                actual: flow.len().min(gt_flow.len()),
            });
        }
        positions.extend(stored.frame.lidar.iter().map(|p| p.position));
        pred.extend(flow.entries.iter().map(|e| e.delta));
        gt.extend(gt_flow);
        classes.extend(gt_class);
    }

    let report = metrics::evaluate(
        &positions,
        &pred,
        &gt,
        Some(&classes),
        &edges,
        config.dynamic_flow_threshold,
        config.grid_half_extent,
    )?;
    print!("{}", report.to_table());
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Data(format!("report serialization failed: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }

    let mut violated = false;
    if let (Some(bound), Some(tw)) = (max_mean_epe, report.three_way.as_ref()) {
        if let Some(mean) = tw.mean {
            if mean > bound {
                eprintln!("threshold violated: mean three-way EPE {mean:.4} > {bound}");
                violated = true;
            }
        }
    }
    if let Some(bound) = min_dynamic_iou {
        for bin in &report.bins {
            if let Some(iou) = bin.dynamic_iou {
                if iou < bound {
                    eprintln!(
                        "threshold violated: bin {} IoU {iou:.4} < {bound}",
                        bin.label
                    );
                    violated = true;
                }
            }
        }
    }
    Ok(if violated { 3 } else { 0 })
}
