//! Panoramic rig calibration: the five camera extrinsics, the body frame
//! convention (body coincides with camera 1) and the extrinsic chaining used
//! by tracking and bundle adjustment.
//!
//! View indices are 1-based everywhere, matching the camera numbering of the
//! physical rig. Since all five views are captured synchronously by one
//! device, inter-view transforms on the keyframe side are the static rig
//! extrinsics; there is no online extrinsic refinement.
//!
//! # Calibration file format
//!
//! Plain text, `#` starts a comment, one section per camera:
//!
//! ```text
//! [camera 1]
//! fx = 190.0
//! fy = 190.0
//! cx = 160.0
//! cy = 120.0
//! width = 320
//! height = 240
//! extrinsic = 1 0 0 0  0 1 0 0  0 0 1 0  0 0 0 1
//! ```
//!
//! `extrinsic` is the row-major 4x4 matrix of `cam_from_body` (it maps body
//! coordinates into that camera's coordinates). Exactly five `[camera N]`
//! sections with N in 1..=5 are required and camera 1's extrinsic must be the
//! identity. An optional `[lidar]` section carries `extrinsic` as the
//! row-major 4x4 of `body_from_lidar` (defaults to identity).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix4;
use thiserror::Error;

use crate::geometry::{CameraModel, Pose};

pub const VIEW_COUNT: usize = 5;

#[derive(Debug, Error)]
pub enum RigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("expected {VIEW_COUNT} cameras, found {0}")]
    WrongCameraCount(usize),
    #[error("camera-1 extrinsic deviates from identity by {0:.3e} (body must coincide with camera 1)")]
    NonIdentityBodyFrame(f64),
    #[error("view index {0} out of range 1..={VIEW_COUNT}")]
    IndexOutOfRange(usize),
}

/// The five (intrinsics, extrinsic) pairs of the panoramic rig.
#[derive(Debug, Clone)]
pub struct RigCalibration {
    cameras: Vec<(CameraModel, Pose)>,
}

impl RigCalibration {
    /// Builds a rig from five `(camera, cam_from_body)` pairs in view order
    /// 1..=5. Camera 1's extrinsic must be the identity within 1e-6.
    pub fn new(cameras: Vec<(CameraModel, Pose)>) -> Result<Self, RigError> {
        if cameras.len() != VIEW_COUNT {
            return Err(RigError::WrongCameraCount(cameras.len()));
        }
        let dev = identity_deviation(&cameras[0].1);
        if dev > 1e-6 {
            return Err(RigError::NonIdentityBodyFrame(dev));
        }
        Ok(Self { cameras })
    }

    /// Intrinsics of view `view` (1-based). Panics on an invalid index.
    pub fn camera(&self, view: usize) -> &CameraModel {
        &self.cameras[view - 1].0
    }

    /// Extrinsic `cam_from_body` of view `view` (1-based).
    pub fn cam_from_body(&self, view: usize) -> &Pose {
        &self.cameras[view - 1].1
    }

    fn check_view(&self, view: usize) -> Result<(), RigError> {
        if view == 0 || view > VIEW_COUNT {
            return Err(RigError::IndexOutOfRange(view));
        }
        Ok(())
    }
}

fn identity_deviation(p: &Pose) -> f64 {
    let m = p.to_matrix();
    let mut dev: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((m[(i, j)] - target).abs());
        }
    }
    dev
}

/// Per-pair pose for tracking: maps keyframe-view-`j` camera coordinates into
/// current-view-`l` camera coordinates, derived from the single body unknown.
///
/// `rel_body` is the current-body-from-keyframe-body pose; the chain is the
/// product extrinsic(l) * rel_body * extrinsic(j)^-1 so that
/// `chain_tracking(rig, t, 1, 1) == t`.
pub fn chain_tracking(
    rig: &RigCalibration,
    rel_body: &Pose,
    j: usize,
    l: usize,
) -> Result<Pose, RigError> {
    rig.check_view(j)?;
    rig.check_view(l)?;
    let to_target = rig.cam_from_body(l);
    let from_host = rig.cam_from_body(j).inverse();
    Ok((to_target * rel_body) * from_host)
}

/// Per-view world pose for bundle adjustment: the world pose of view `l` of a
/// keyframe whose body pose is `world_from_body`, i.e. the product
/// world_from_body * extrinsic(l)^-1, so that `chain_world(rig, w, 1) == w`.
pub fn chain_world(rig: &RigCalibration, world_from_body: &Pose, l: usize) -> Result<Pose, RigError> {
    rig.check_view(l)?;
    Ok(world_from_body * &rig.cam_from_body(l).inverse())
}

/// A parsed calibration file: the rig plus the LiDAR mounting pose.
#[derive(Debug, Clone)]
pub struct CalibrationFile {
    pub rig: RigCalibration,
    pub body_from_lidar: Pose,
}

/// Loads just the rig from a calibration file.
pub fn load_rig(path: &Path) -> Result<RigCalibration, RigError> {
    Ok(load_calibration_file(path)?.rig)
}

/// Loads the full calibration file (rig and LiDAR extrinsic).
pub fn load_calibration_file(path: &Path) -> Result<CalibrationFile, RigError> {
    let text = std::fs::read_to_string(path)?;
    parse_calibration(&text)
}

#[derive(Default, Clone)]
struct Section {
    fx: Option<f64>,
    fy: Option<f64>,
    cx: Option<f64>,
    cy: Option<f64>,
    width: Option<u32>,
    height: Option<u32>,
    extrinsic: Option<Matrix4<f64>>,
    declared_at: usize,
}

fn parse_calibration(text: &str) -> Result<CalibrationFile, RigError> {
    let mut cameras: Vec<Option<Section>> = vec![None; VIEW_COUNT];
    let mut lidar: Option<Section> = None;
    let mut current: Option<(Option<usize>, Section)> = None; // None index = lidar

    let commit = |slot: &mut Option<(Option<usize>, Section)>,
                      cameras: &mut Vec<Option<Section>>,
                      lidar: &mut Option<Section>|
     -> Result<(), RigError> {
        if let Some((idx, section)) = slot.take() {
            match idx {
                Some(i) => {
                    if cameras[i].is_some() {
                        return Err(RigError::Parse {
                            line: section.declared_at,
                            msg: format!("duplicate section [camera {}]", i + 1),
                        });
                    }
                    cameras[i] = Some(section);
                }
                None => {
                    if lidar.is_some() {
                        return Err(RigError::Parse {
                            line: section.declared_at,
                            msg: "duplicate section [lidar]".into(),
                        });
                    }
                    *lidar = Some(section);
                }
            }
        }
        Ok(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| RigError::Parse { line, msg: format!("unterminated section header {content:?}") })?
                .trim();
            commit(&mut current, &mut cameras, &mut lidar)?;
            let section = Section { declared_at: line, ..Section::default() };
            if name == "lidar" {
                current = Some((None, section));
            } else if let Some(num) = name.strip_prefix("camera ") {
                let view: usize = num.trim().parse().map_err(|_| RigError::Parse {
                    line,
                    msg: format!("bad camera index {num:?}"),
                })?;
                if view == 0 || view > VIEW_COUNT {
                    return Err(RigError::Parse {
                        line,
                        msg: format!("camera index {view} out of range 1..={VIEW_COUNT}"),
                    });
                }
                current = Some((Some(view - 1), section));
            } else {
                return Err(RigError::Parse { line, msg: format!("unknown section {name:?}") });
            }
            continue;
        }

        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| RigError::Parse { line, msg: format!("expected `key = value`, got {content:?}") })?;
        let (key, value) = (key.trim(), value.trim());
        let section = &mut current
            .as_mut()
            .ok_or_else(|| RigError::Parse { line, msg: "key outside of any section".into() })?
            .1;

        let parse_f64 = |v: &str| -> Result<f64, RigError> {
            v.parse().map_err(|_| RigError::Parse { line, msg: format!("bad number {v:?}") })
        };
        match key {
            "fx" => section.fx = Some(parse_f64(value)?),
            "fy" => section.fy = Some(parse_f64(value)?),
            "cx" => section.cx = Some(parse_f64(value)?),
            "cy" => section.cy = Some(parse_f64(value)?),
            "width" | "height" => {
                let n: u32 = value
                    .parse()
                    .map_err(|_| RigError::Parse { line, msg: format!("bad integer {value:?}") })?;
                if key == "width" {
                    section.width = Some(n);
                } else {
                    section.height = Some(n);
                }
            }
            "extrinsic" => {
                let nums: Result<Vec<f64>, _> = value.split_whitespace().map(parse_f64).collect();
                let nums = nums?;
                if nums.len() != 16 {
                    return Err(RigError::Parse {
                        line,
                        msg: format!("extrinsic needs 16 numbers, got {}", nums.len()),
                    });
                }
                section.extrinsic = Some(Matrix4::from_row_slice(&nums));
            }
            other => return Err(RigError::Parse { line, msg: format!("unknown key {other:?}") }),
        }
    }
    commit(&mut current, &mut cameras, &mut lidar)?;

    let found = cameras.iter().filter(|c| c.is_some()).count();
    if found != VIEW_COUNT {
        return Err(RigError::WrongCameraCount(found));
    }

    let mut pairs = Vec::with_capacity(VIEW_COUNT);
    for (i, section) in cameras.into_iter().enumerate() {
        let s = section.unwrap();
        let line = s.declared_at;
        let missing = |what: &str| RigError::Parse {
            line,
            msg: format!("camera {} missing {what}", i + 1),
        };
        let cam = CameraModel::new(
            s.fx.ok_or_else(|| missing("fx"))?,
            s.fy.ok_or_else(|| missing("fy"))?,
            s.cx.ok_or_else(|| missing("cx"))?,
            s.cy.ok_or_else(|| missing("cy"))?,
            s.width.ok_or_else(|| missing("width"))?,
            s.height.ok_or_else(|| missing("height"))?,
        )
        .map_err(|e| RigError::Parse { line, msg: e.to_string() })?;
        let extrinsic = Pose::from_matrix(&s.extrinsic.ok_or_else(|| missing("extrinsic"))?);
        pairs.push((cam, extrinsic));
    }

    let body_from_lidar = match lidar {
        Some(s) => Pose::from_matrix(&s.extrinsic.ok_or(RigError::Parse {
            line: s.declared_at,
            msg: "[lidar] section missing extrinsic".into(),
        })?),
        None => Pose::identity(),
    };

    Ok(CalibrationFile { rig: RigCalibration::new(pairs)?, body_from_lidar })
}

/// Renders a calibration file in the format accepted by [`load_rig`].
pub fn format_calibration(rig: &RigCalibration, body_from_lidar: &Pose) -> String {
    let mut out = String::new();
    out.push_str("# panoramic rig calibration\n");
    out.push_str("# extrinsic: row-major 4x4 cam_from_body ([lidar]: body_from_lidar)\n");
    for view in 1..=VIEW_COUNT {
        let cam = rig.camera(view);
        let _ = writeln!(out, "\n[camera {view}]");
        let _ = writeln!(out, "fx = {}", cam.fx);
        let _ = writeln!(out, "fy = {}", cam.fy);
        let _ = writeln!(out, "cx = {}", cam.cx);
        let _ = writeln!(out, "cy = {}", cam.cy);
        let _ = writeln!(out, "width = {}", cam.width);
        let _ = writeln!(out, "height = {}", cam.height);
        let _ = writeln!(out, "extrinsic = {}", matrix_row_major(&rig.cam_from_body(view).to_matrix()));
    }
    out.push_str("\n[lidar]\n");
    let _ = writeln!(out, "extrinsic = {}", matrix_row_major(&body_from_lidar.to_matrix()));
    out
}

fn matrix_row_major(m: &Matrix4<f64>) -> String {
    let mut parts = Vec::with_capacity(16);
    for r in 0..4 {
        for c in 0..4 {
            parts.push(format!("{}", m[(r, c)]));
        }
    }
    parts.join(" ")
}
