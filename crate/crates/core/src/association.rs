//! LiDAR-to-image data association: project a 360-degree scan into each
//! surround view and keep one depth per grid cell, nearest point winning,
//! followed by a boundary pass that drops samples occluded by a much nearer
//! neighbor (see [`build_sparse_depth`]).
//!
//! Depths are raw LiDAR assignments; no interpolation between samples is
//! performed and scans are treated as motion-free.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{Pixel, Pose};
use crate::rig::RigCalibration;

/// Default occlusion-grid cell size in pixels.
pub const DEFAULT_CELL_SIZE: u32 = 2;

#[derive(Debug, Error)]
pub enum AssociationError {
    #[error("scan contains no points")]
    EmptyScan,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scan parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// One LiDAR sweep: points in the LiDAR frame, meters.
#[derive(Debug, Clone)]
pub struct LidarScan {
    pub points: Vec<Vector3<f64>>,
    pub timestamp: f64,
}

impl LidarScan {
    pub fn new(points: Vec<Vector3<f64>>, timestamp: f64) -> Self {
        Self { points, timestamp }
    }

    /// Reads an ASCII scan file: one `x y z` triple per line (meters, LiDAR
    /// frame); blank lines and `#` comments are skipped.
    pub fn load_xyz(path: &Path, timestamp: f64) -> Result<Self, AssociationError> {
        let text = std::fs::read_to_string(path)?;
        let mut points = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut coords = [0.0f64; 3];
            let mut parts = content.split_whitespace();
            for slot in coords.iter_mut() {
                let tok = parts.next().ok_or_else(|| AssociationError::Parse {
                    line,
                    msg: "expected three coordinates".into(),
                })?;
                *slot = tok.parse().map_err(|_| AssociationError::Parse {
                    line,
                    msg: format!("bad coordinate {tok:?}"),
                })?;
            }
            if parts.next().is_some() {
                return Err(AssociationError::Parse { line, msg: "trailing tokens after x y z".into() });
            }
            points.push(Vector3::new(coords[0], coords[1], coords[2]));
        }
        Ok(Self::new(points, timestamp))
    }

    pub fn save_xyz(&self, path: &Path) -> Result<(), AssociationError> {
        let mut out = String::with_capacity(self.points.len() * 24);
        for p in &self.points {
            out.push_str(&format!("{:.4} {:.4} {:.4}\n", p.x, p.y, p.z));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// One stored depth sample: the exact sub-pixel projection and its depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    pub pixel: Pixel,
    pub depth: f64,
}

/// Sparse per-view pixel-to-depth assignments from one scan.
///
/// Backed by a grid of `cell_size` pixels holding at most one sample per
/// cell; of all scan points falling into a cell, the nearest survives.
#[derive(Debug, Clone)]
pub struct SparseDepthMap {
    view: usize,
    cell_size: u32,
    cells: BTreeMap<(i64, i64), DepthSample>,
}

impl SparseDepthMap {
    pub fn view(&self) -> usize {
        self.view
    }

    pub fn cell_size(&self) -> u32 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &DepthSample> {
        self.cells.values()
    }

    fn cell_of(&self, u: f64, v: f64) -> (i64, i64) {
        let s = self.cell_size as f64;
        ((v / s).floor() as i64, (u / s).floor() as i64)
    }

    /// Depth of the nearest stored sample within `radius` pixels of `u`, or
    /// `None`; absence is a value, not an error.
    pub fn depth_lookup(&self, u: &Pixel, radius: f64) -> Option<f64> {
        let (row_lo, col_lo) = self.cell_of(u.u - radius, u.v - radius);
        let (row_hi, col_hi) = self.cell_of(u.u + radius, u.v + radius);
        let mut best: Option<(f64, f64)> = None;
        for row in row_lo..=row_hi {
            for (_, sample) in self.cells.range((row, col_lo)..=(row, col_hi)) {
                let d = sample.pixel.distance(u);
                if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, sample.depth));
                }
            }
        }
        best.map(|(_, depth)| depth)
    }
}

/// Neighborhood (in cells) scanned by the occlusion-boundary rejection pass.
const BOUNDARY_CELL_RADIUS: i64 = 2;

fn occludes(near: f64, far: f64) -> bool {
    far - near > (0.05 * far).max(0.3)
}

/// Projects a scan into view `view` and assigns sparse depths with occlusion
/// handling in two passes: per grid cell only the smallest-depth candidate
/// survives, and samples with a significantly nearer sample in their cell
/// neighborhood are then dropped. The second pass removes far-surface points
/// that bleed through next to a foreground edge, which would otherwise attach
/// background depths to silhouette pixels. Points behind the camera or
/// projecting outside the image are dropped silently.
pub fn build_sparse_depth(
    scan: &LidarScan,
    rig: &RigCalibration,
    view: usize,
    body_from_lidar: &Pose,
    cell_size: u32,
) -> Result<SparseDepthMap, AssociationError> {
    if scan.points.is_empty() {
        return Err(AssociationError::EmptyScan);
    }
    let cam = rig.camera(view);
    let cam_from_lidar = rig.cam_from_body(view) * body_from_lidar;
    let mut map = SparseDepthMap { view, cell_size, cells: BTreeMap::new() };
    for point in &scan.points {
        let p_cam = cam_from_lidar.transform(point);
        if p_cam.z <= 0.0 {
            continue;
        }
        let pixel = match cam.project(&p_cam) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if !cam.contains(&pixel, 0.0) {
            continue;
        }
        let key = map.cell_of(pixel.u, pixel.v);
        let sample = DepthSample { pixel, depth: p_cam.z };
        match map.cells.get_mut(&key) {
            Some(existing) if existing.depth <= sample.depth => {}
            Some(existing) => *existing = sample,
            None => {
                map.cells.insert(key, sample);
            }
        }
    }

    let occluded: Vec<(i64, i64)> = map
        .cells
        .iter()
        .filter(|((row, col), sample)| {
            for dr in -BOUNDARY_CELL_RADIUS..=BOUNDARY_CELL_RADIUS {
                for (_, neighbor) in map
                    .cells
                    .range((row + dr, col - BOUNDARY_CELL_RADIUS)..=(row + dr, col + BOUNDARY_CELL_RADIUS))
                {
                    if occludes(neighbor.depth, sample.depth) {
                        return true;
                    }
                }
            }
            false
        })
        .map(|(key, _)| *key)
        .collect();
    for key in occluded {
        map.cells.remove(&key);
    }
    Ok(map)
}
