//! Panoramic direct LiDAR-assisted visual odometry.
//!
//! `panovo` estimates the trajectory of a five-camera surround rig by
//! minimizing photometric error against LiDAR-supplied depths. The crate is
//! organized as a library; the `examples/` directory shows one runnable
//! program per major capability and a single thin `panovo` binary exposes the
//! `simulate`, `run` and `evaluate` subcommands.
//!
//! Module map:
//!
//! - [`geometry`]: SE(3) poses, pinhole projection, pixel warping, sub-pixel
//!   image sampling and PGM I/O.
//! - [`rig`]: the five-camera calibration, its file format and the extrinsic
//!   chaining identities used by tracking and bundle adjustment.
//! - [`association`]: projecting a LiDAR scan into each view and assigning
//!   sparse depths to pixels with occlusion handling.
//! - [`keypoints`]: gradient-based keypoint selection with attached depths.
//! - [`tracking`]: direct coarse-to-fine pose estimation of the current frame
//!   against the newest keyframe over all view pairs.
//! - [`window`]: sliding-window photometric bundle adjustment over keyframe
//!   poses with Schur-complement marginalization.
//! - [`simworld`]: a deterministic synthetic world (textured patches, rendered
//!   views, simulated LiDAR, ground-truth trajectories).
//! - [`evaluation`]: trajectory alignment and ATE RMSE.
//! - [`pipeline`]: dataset ingestion and the full odometry loop.
//! - [`cli`]: the argument parsing behind the `panovo` binary.

pub mod association;
pub mod cli;
pub mod evaluation;
pub mod geometry;
pub mod keypoints;
pub mod pipeline;
pub mod rig;
pub mod simworld;
pub mod tracking;
pub mod window;

pub use association::{build_sparse_depth, LidarScan, SparseDepthMap};
pub use evaluation::{ate_rmse, umeyama_align, Trajectory};
pub use geometry::{se3_exp, se3_log, warp_pixel, CameraModel, Image, ImagePyramid, Pixel, Pose, Twist};
pub use keypoints::{select_keypoints, Keypoint, KeypointConfig};
pub use pipeline::{ingest_dataset, run_odometry, transform_integration, DatasetStream, PipelineConfig};
pub use rig::{chain_tracking, chain_world, load_rig, RigCalibration};
pub use simworld::{make_scene, make_trajectory, render_frame, simulate_lidar, Scene, SimConfig, TrajectoryKind};
pub use tracking::{evaluate_energy, track_frame, MultiViewFrame, TrackResult, TrackingConfig};
pub use window::{ba_energy, keyframe_decision, marginalize_oldest, optimize_window, Keyframe, KeyframeWindow, WindowConfig};
