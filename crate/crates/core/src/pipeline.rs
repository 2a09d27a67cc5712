//! Dataset ingestion and the full odometry loop: per-frame data association,
//! direct tracking against the newest keyframe, keyframe admission with
//! windowed bundle adjustment and marginalization, and transform integration
//! for ordinary frames.
//!
//! # Dataset layout
//!
//! ```text
//! dataset/
//!   calibration.txt            # rig + LiDAR extrinsic (see the rig module)
//!   index                      # manifest, see below
//!   frames/000000_1.pgm ...    # binary 8-bit PGM, one per view
//!   scans/000000.xyz           # ASCII x y z per line, LiDAR frame, meters
//! ```
//!
//! The `index` manifest holds one line per record, `#` comments allowed:
//!
//! ```text
//! frame <timestamp> <view1.pgm> <view2.pgm> <view3.pgm> <view4.pgm> <view5.pgm>
//! scan  <timestamp> <scan.xyz>
//! ```
//!
//! Frame timestamps must be strictly increasing; each frame is paired with
//! the nearest scan within 0.02 s.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::association::{build_sparse_depth, AssociationError, LidarScan, DEFAULT_CELL_SIZE};
use crate::evaluation::Trajectory;
use crate::geometry::{Image, PgmError, Pose};
use crate::keypoints::{select_keypoints, Keypoint, KeypointConfig};
use crate::rig::{load_calibration_file, format_calibration, RigCalibration, RigError, VIEW_COUNT};
use crate::simworld::{render_frame, simulate_lidar, Scene, SimConfig};
use crate::tracking::{track_frame, MultiViewFrame, TrackError, TrackingConfig};
use crate::window::{
    keyframe_decision, marginalize_oldest, optimize_window, Keyframe, KeyframeWindow, WindowConfig, WindowError,
};

/// Frames pair with the nearest scan within this many seconds.
pub const SCAN_ASSOCIATION_TOLERANCE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("dataset contains no frames")]
    EmptyDataset,
    #[error("frame {frame_index} is missing view {view}")]
    MissingView { frame_index: usize, view: usize },
    #[error("frame {frame_index} has no scan within {SCAN_ASSOCIATION_TOLERANCE} s")]
    MissingScan { frame_index: usize },
    #[error("frame timestamps not strictly increasing at record {frame_index}")]
    NonMonotoneTimestamps { frame_index: usize },
    #[error("index parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("calibration: {0}")]
    Rig(#[from] RigError),
    #[error("image: {0}")]
    Image(#[from] PgmError),
    #[error("scan: {0}")]
    Scan(#[from] AssociationError),
    #[error("bundle adjustment failed: {0}")]
    Window(#[from] WindowError),
    #[error("tracking lost at frame {frame_index}: {source}")]
    TrackingLost {
        frame_index: usize,
        source: TrackError,
        /// Poses estimated before the failure.
        partial: Trajectory,
    },
}

/// One dataset record: a timestamp, five image paths and the associated scan.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub image_paths: [PathBuf; VIEW_COUNT],
    pub scan_path: PathBuf,
    pub scan_timestamp: f64,
}

/// A validated dataset: calibration plus the ordered record list.
#[derive(Debug)]
pub struct DatasetStream {
    pub rig: RigCalibration,
    pub body_from_lidar: Pose,
    pub records: Vec<FrameRecord>,
}

/// Parses and validates a dataset directory.
pub fn ingest_dataset(path: &Path) -> Result<DatasetStream, PipelineError> {
    let calibration = load_calibration_file(&path.join("calibration.txt"))?;
    let index_text = std::fs::read_to_string(path.join("index"))?;

    struct FrameLine {
        timestamp: f64,
        paths: [PathBuf; VIEW_COUNT],
    }
    let mut frames: Vec<FrameLine> = Vec::new();
    let mut scans: Vec<(f64, PathBuf)> = Vec::new();

    for (lineno, raw) in index_text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content.split_whitespace();
        let kind = parts.next().unwrap();
        let t: f64 = parts
            .next()
            .ok_or_else(|| PipelineError::Parse { line, msg: "missing timestamp".into() })?
            .parse()
            .map_err(|_| PipelineError::Parse { line, msg: "bad timestamp".into() })?;
        match kind {
            "frame" => {
                let rest: Vec<&str> = parts.collect();
                if rest.len() != VIEW_COUNT {
                    return Err(PipelineError::Parse {
                        line,
                        msg: format!("frame line needs {VIEW_COUNT} image paths, got {}", rest.len()),
                    });
                }
                let mut paths: [PathBuf; VIEW_COUNT] = Default::default();
                for (slot, rel) in paths.iter_mut().zip(&rest) {
                    *slot = path.join(rel);
                }
                frames.push(FrameLine { timestamp: t, paths });
            }
            "scan" => {
                let rel = parts
                    .next()
                    .ok_or_else(|| PipelineError::Parse { line, msg: "missing scan path".into() })?;
                scans.push((t, path.join(rel)));
            }
            other => {
                return Err(PipelineError::Parse { line, msg: format!("unknown record kind {other:?}") });
            }
        }
    }

    for (i, pair) in frames.windows(2).enumerate() {
        if pair[1].timestamp <= pair[0].timestamp {
            return Err(PipelineError::NonMonotoneTimestamps { frame_index: i + 1 });
        }
    }

    let mut records = Vec::with_capacity(frames.len());
    for (frame_index, frame) in frames.iter().enumerate() {
        for (v, image_path) in frame.paths.iter().enumerate() {
            if !image_path.is_file() {
                return Err(PipelineError::MissingView { frame_index, view: v + 1 });
            }
        }
        let nearest = scans
            .iter()
            .min_by(|a, b| {
                (a.0 - frame.timestamp).abs().total_cmp(&(b.0 - frame.timestamp).abs())
            })
            .filter(|(t, p)| (t - frame.timestamp).abs() <= SCAN_ASSOCIATION_TOLERANCE && p.is_file());
        let Some((scan_t, scan_path)) = nearest else {
            return Err(PipelineError::MissingScan { frame_index });
        };
        records.push(FrameRecord {
            timestamp: frame.timestamp,
            image_paths: frame.paths.clone(),
            scan_path: scan_path.clone(),
            scan_timestamp: *scan_t,
        });
    }

    Ok(DatasetStream {
        rig: calibration.rig,
        body_from_lidar: calibration.body_from_lidar,
        records,
    })
}

/// Full pipeline configuration; the ablation toggles (active views,
/// cross-view constraints) live inside [`TrackingConfig`].
#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub tracking: TrackingConfig,
    pub window: WindowConfig,
    pub keypoints: KeypointConfig,
    pub sim: SimConfig,
    pub cell_size: u32,
}

impl PipelineConfig {
    pub fn new() -> Self {
        Self {
            tracking: TrackingConfig::default(),
            window: WindowConfig::default(),
            keypoints: KeypointConfig::default(),
            sim: SimConfig::default(),
            cell_size: DEFAULT_CELL_SIZE,
        }
    }

    /// Applies a key-value config file: `[section]` headers with `key = value`
    /// lines, sections `tracking`, `window`, `keypoints` and `association`.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                section = name
                    .strip_suffix(']')
                    .ok_or_else(|| PipelineError::Parse { line, msg: "unterminated section".into() })?
                    .trim()
                    .to_string();
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| PipelineError::Parse { line, msg: "expected key = value".into() })?;
            let (key, value) = (key.trim(), value.trim());
            self.apply_key(&section, key, value)
                .map_err(|msg| PipelineError::Parse { line, msg })?;
        }
        Ok(())
    }

    fn apply_key(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("bad value {value:?}"))
        }
        match (section, key) {
            ("tracking", "huber_gamma") => self.tracking.huber_gamma = num(value)?,
            ("tracking", "pyramid_levels") => self.tracking.pyramid_levels = num(value)?,
            ("tracking", "max_iterations") => self.tracking.max_iterations = num(value)?,
            ("tracking", "convergence_step_norm") => self.tracking.convergence_step_norm = num(value)?,
            ("tracking", "min_valid_residuals") => self.tracking.min_valid_residuals = num(value)?,
            ("tracking", "cross_view_enabled") => self.tracking.cross_view_enabled = num(value)?,
            ("tracking", "active_views") => {
                let views: Result<Vec<usize>, _> = value.split(',').map(|v| v.trim().parse()).collect();
                let views = views.map_err(|_| format!("bad view list {value:?}"))?;
                if views.is_empty() || views.iter().any(|v| !(1..=VIEW_COUNT).contains(v)) {
                    return Err(format!("invalid view list {value:?}"));
                }
                self.tracking.active_views = views;
            }
            ("window", "huber_gamma") => self.window.huber_gamma = num(value)?,
            ("window", "max_iterations") => self.window.max_iterations = num(value)?,
            ("window", "convergence_step_norm") => self.window.convergence_step_norm = num(value)?,
            ("window", "flow_threshold") => self.window.flow_threshold = num(value)?,
            ("window", "min_ratio") => self.window.min_ratio = num(value)?,
            ("window", "max_keyframes") => self.window.max_keyframes = num(value)?,
            ("keypoints", "block_size") => self.keypoints.block_size = num(value)?,
            ("keypoints", "gradient_offset") => self.keypoints.gradient_offset = num(value)?,
            ("keypoints", "depth_radius") => self.keypoints.depth_radius = num(value)?,
            ("keypoints", "max_points") => self.keypoints.max_points = num(value)?,
            ("association", "cell_size") => self.cell_size = num(value)?,
            _ => return Err(format!("unknown key {section}.{key}")),
        }
        Ok(())
    }
}

/// Composes a tracked relative pose with the latest keyframe's world pose:
/// `rel` maps keyframe-body to current-body coordinates, so the current body
/// pose in the world is `world_from_keyframe * rel^-1`.
pub fn transform_integration(world_from_keyframe: &Pose, rel: &Pose) -> Pose {
    world_from_keyframe * &rel.inverse()
}

fn load_frame(record: &FrameRecord, pyramid_levels: usize) -> Result<MultiViewFrame, PipelineError> {
    let mut images = Vec::with_capacity(VIEW_COUNT);
    for path in &record.image_paths {
        images.push(Image::load_pgm(path)?);
    }
    Ok(MultiViewFrame::new(record.timestamp, images, pyramid_levels))
}

fn extract_keypoints(
    frame: &MultiViewFrame,
    scan: &LidarScan,
    stream: &DatasetStream,
    cfg: &PipelineConfig,
) -> Result<Vec<Vec<Keypoint>>, PipelineError> {
    let mut keypoints = Vec::with_capacity(VIEW_COUNT);
    for view in 1..=VIEW_COUNT {
        if cfg.tracking.active_views.contains(&view) {
            let depth = build_sparse_depth(scan, &stream.rig, view, &stream.body_from_lidar, cfg.cell_size)?;
            keypoints.push(select_keypoints(frame.view(view).level(0), &depth, &cfg.keypoints));
        } else {
            keypoints.push(Vec::new());
        }
    }
    Ok(keypoints)
}

/// Runs odometry over a dataset: the first frame becomes the origin keyframe;
/// each later frame is tracked against the newest keyframe and either
/// admitted as a keyframe (followed by bundle adjustment and, at capacity,
/// marginalization) or integrated as an ordinary frame. One output pose per
/// input frame; deterministic for fixed inputs and configuration.
pub fn run_odometry(stream: &DatasetStream, cfg: &PipelineConfig) -> Result<Trajectory, PipelineError> {
    if stream.records.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let levels = cfg.tracking.pyramid_levels;
    let mut window = KeyframeWindow::new(cfg.window.max_keyframes);
    let mut outputs: Vec<(f64, Pose)> = Vec::with_capacity(stream.records.len());
    let mut next_keyframe_id = 0u64;

    for (frame_index, record) in stream.records.iter().enumerate() {
        let frame = load_frame(record, levels)?;
        let scan = LidarScan::load_xyz(&record.scan_path, record.scan_timestamp)?;

        if window.is_empty() {
            // World frame coincides with the body frame at the initial time.
            let pose = Pose::identity();
            let keypoints = extract_keypoints(&frame, &scan, stream, cfg)?;
            window.push(Keyframe::new(next_keyframe_id, record.timestamp, pose, frame, keypoints));
            next_keyframe_id += 1;
            outputs.push((record.timestamp, pose));
            continue;
        }

        let (kf_world, kf_ref) = {
            let kf = window.newest().expect("window non-empty");
            (kf.world_from_body, kf)
        };

        // Constant-velocity initialization from the two previous outputs.
        let rel_init = match outputs.len() {
            0 => Pose::identity(),
            1 => outputs[0].1.inverse() * kf_world,
            n => {
                let w_prev = &outputs[n - 1].1;
                let w_prev2 = &outputs[n - 2].1;
                let step = &w_prev2.inverse() * w_prev;
                let predicted = w_prev * &step;
                predicted.inverse() * kf_world
            }
        };

        let track = match track_frame(kf_ref, &frame, &rel_init, &stream.rig, &cfg.tracking) {
            Ok(tr) => tr,
            Err(source) => {
                let partial = Trajectory::new(outputs).expect("at least the first frame was output");
                return Err(PipelineError::TrackingLost { frame_index, source, partial });
            }
        };

        let world = transform_integration(&kf_world, &track.rel_pose);
        outputs.push((record.timestamp, world));

        if keyframe_decision(&track, &cfg.window) {
            let keypoints = extract_keypoints(&frame, &scan, stream, cfg)?;
            window.push(Keyframe::new(next_keyframe_id, record.timestamp, world, frame, keypoints));
            next_keyframe_id += 1;
            if window.len() >= 2 {
                optimize_window(&mut window, &stream.rig, &cfg.window)?;
                let refined = window.newest().expect("just pushed").world_from_body;
                if let Some(last) = outputs.last_mut() {
                    last.1 = refined;
                }
            }
            if window.is_full() {
                marginalize_oldest(&mut window, &stream.rig, &cfg.window)?;
            }
        }
    }

    Ok(Trajectory::new(outputs).expect("monotone timestamps validated at ingest"))
}

/// Writes a complete synthetic dataset (calibration, frames, scans, index)
/// plus the ground-truth trajectory as `gt.txt`. Timestamps advance by
/// `cfg.frame_dt` per frame.
pub fn write_dataset(
    dir: &Path,
    scene: &Scene,
    rig: &RigCalibration,
    body_from_lidar: &Pose,
    trajectory: &[Pose],
    cfg: &SimConfig,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir.join("frames"))?;
    std::fs::create_dir_all(dir.join("scans"))?;
    std::fs::write(dir.join("calibration.txt"), format_calibration(rig, body_from_lidar))?;

    let lidar_from_body = body_from_lidar.inverse();
    let mut index = String::from("# panoramic dataset index\n");
    let mut gt_entries = Vec::with_capacity(trajectory.len());
    for (i, pose) in trajectory.iter().enumerate() {
        let t = i as f64 * cfg.frame_dt;
        let images = render_frame(scene, rig, pose, cfg);
        let mut frame_line = format!("frame {t:.6}");
        for (v, img) in images.iter().enumerate() {
            let rel = format!("frames/{i:06}_{}.pgm", v + 1);
            img.save_pgm(&dir.join(&rel))?;
            frame_line.push(' ');
            frame_line.push_str(&rel);
        }
        index.push_str(&frame_line);
        index.push('\n');

        let scan_body = simulate_lidar(scene, pose, cfg, t);
        let scan = LidarScan::new(
            scan_body.points.iter().map(|p| lidar_from_body.transform(p)).collect(),
            t,
        );
        let rel = format!("scans/{i:06}.xyz");
        scan.save_xyz(&dir.join(&rel))?;
        index.push_str(&format!("scan {t:.6} {rel}\n"));

        gt_entries.push((t, *pose));
    }
    std::fs::write(dir.join("index"), index)?;
    Trajectory::new(gt_entries)
        .expect("frame_dt > 0 yields monotone timestamps")
        .save(&dir.join("gt.txt"))
        .map_err(|e| match e {
            crate::evaluation::EvalError::Io(io) => PipelineError::Io(io),
            other => PipelineError::Parse { line: 0, msg: other.to_string() },
        })?;
    Ok(())
}
