//! Trajectory comparison: timestamp association, closed-form SE(3) alignment
//! and ATE RMSE. Alignment is rigid without scale, since LiDAR depths make
//! the trajectories metric.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::Pose;

/// Default timestamp association tolerance, seconds.
pub const DEFAULT_ASSOCIATION_TOLERANCE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no pose pairs associate within the timestamp tolerance")]
    NoAssociations,
    #[error("alignment is degenerate: {0}")]
    DegenerateAlignment(&'static str),
    #[error("trajectory timestamps must be strictly increasing (entry {0})")]
    NonMonotone(usize),
    #[error("a trajectory needs at least one entry")]
    Empty,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("trajectory parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Timestamped body-in-world poses, strictly increasing in time.
#[derive(Debug, Clone)]
pub struct Trajectory {
    entries: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        if entries.is_empty() {
            return Err(EvalError::Empty);
        }
        for (i, pair) in entries.windows(2).enumerate() {
            if pair[1].0 <= pair[0].0 {
                return Err(EvalError::NonMonotone(i + 1));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(f64, Pose)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total path length (sum of consecutive translation steps), meters.
    pub fn path_length(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|pair| (pair[1].1.translation - pair[0].1.translation).norm())
            .sum()
    }

    /// Reads "timestamp tx ty tz qx qy qz qw" lines (Hamilton quaternion,
    /// w last); '#' comments and blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(EvalError::Parse {
                    line,
                    msg: format!("expected 8 fields, got {}", fields.len()),
                });
            }
            let mut nums = [0.0f64; 8];
            for (slot, tok) in nums.iter_mut().zip(&fields) {
                *slot = tok
                    .parse()
                    .map_err(|_| EvalError::Parse { line, msg: format!("bad number {tok:?}") })?;
            }
            let quat = UnitQuaternion::from_quaternion(Quaternion::new(nums[7], nums[4], nums[5], nums[6]));
            let pose = Pose::new(*quat.to_rotation_matrix().matrix(), Vector3::new(nums[1], nums[2], nums[3]));
            entries.push((nums[0], pose));
        }
        Self::new(entries)
    }

    /// Writes the format read by [`Trajectory::load`], with fixed 9-decimal
    /// formatting so identical trajectories produce identical files.
    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let mut out = String::new();
        out.push_str("# timestamp tx ty tz qx qy qz qw\n");
        for (t, pose) in &self.entries {
            let rot = Rotation3::from_matrix_unchecked(pose.rotation);
            let q = UnitQuaternion::from_rotation_matrix(&rot);
            let tr = pose.translation;
            let _ = writeln!(
                out,
                "{t:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
                tr.x, tr.y, tr.z, q.i, q.j, q.k, q.w
            );
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Pairs est/gt positions by nearest timestamp within `tolerance`.
fn associate(est: &Trajectory, gt: &Trajectory, tolerance: f64) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let gt_entries = gt.entries();
    let mut pairs = Vec::new();
    let mut cursor = 0usize;
    for (t, pose) in est.entries() {
        while cursor + 1 < gt_entries.len()
            && (gt_entries[cursor + 1].0 - t).abs() <= (gt_entries[cursor].0 - t).abs()
        {
            cursor += 1;
        }
        let (gt_t, gt_pose) = &gt_entries[cursor];
        if (gt_t - t).abs() <= tolerance {
            pairs.push((pose.translation, gt_pose.translation));
        }
    }
    pairs
}

fn umeyama_from_pairs(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<Pose, EvalError> {
    if pairs.len() < 3 {
        return Err(EvalError::DegenerateAlignment("fewer than 3 associated pose pairs"));
    }
    let n = pairs.len() as f64;
    let mean_est: Vector3<f64> = pairs.iter().map(|(e, _)| e).sum::<Vector3<f64>>() / n;
    let mean_gt: Vector3<f64> = pairs.iter().map(|(_, g)| g).sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    for (e, g) in pairs {
        cov += (g - mean_gt) * (e - mean_est).transpose();
    }
    cov /= n;

    let svd = cov.svd(true, true);
    // Collinear point sets leave the rotation about the line unconstrained.
    let scale = svd.singular_values[0].max(1e-30);
    if svd.singular_values[1] / scale < 1e-9 {
        return Err(EvalError::DegenerateAlignment("associated positions are collinear"));
    }
    let u = svd.u.expect("3x3 svd");
    let v_t = svd.v_t.expect("3x3 svd");
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let translation = mean_gt - rotation * mean_est;
    Ok(Pose::new(rotation, translation))
}

/// Closed-form rigid alignment: the pose minimizing
/// `sum || R p_est + t - p_gt ||^2` over timestamp-associated positions.
/// No scale is estimated.
pub fn umeyama_align(est: &Trajectory, gt: &Trajectory) -> Result<Pose, EvalError> {
    let pairs = associate(est, gt, DEFAULT_ASSOCIATION_TOLERANCE);
    if pairs.is_empty() {
        return Err(EvalError::NoAssociations);
    }
    umeyama_from_pairs(&pairs)
}

/// RMSE of translational residuals after rigid alignment, meters.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory) -> Result<f64, EvalError> {
    let pairs = associate(est, gt, DEFAULT_ASSOCIATION_TOLERANCE);
    if pairs.is_empty() {
        return Err(EvalError::NoAssociations);
    }
    let alignment = umeyama_from_pairs(&pairs)?;
    let sum_sq: f64 = pairs
        .iter()
        .map(|(e, g)| (alignment.transform(e) - g).norm_squared())
        .sum();
    Ok((sum_sq / pairs.len() as f64).sqrt())
}

/// Writes a top-down (x, z) SVG plot of the given trajectories.
pub fn write_topdown_svg(paths: &[(&str, &Trajectory)], out: &Path) -> Result<(), EvalError> {
    const COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];
    let (mut min_x, mut max_x, mut min_z, mut max_z) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (_, traj) in paths {
        for (_, pose) in traj.entries() {
            min_x = min_x.min(pose.translation.x);
            max_x = max_x.max(pose.translation.x);
            min_z = min_z.min(pose.translation.z);
            max_z = max_z.max(pose.translation.z);
        }
    }
    let span = (max_x - min_x).max(max_z - min_z).max(1e-6);
    let size = 640.0;
    let margin = 40.0;
    let scale = (size - 2.0 * margin) / span;
    let map = |x: f64, z: f64| {
        (
            margin + (x - min_x) * scale,
            size - margin - (z - min_z) * scale,
        )
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>");
    for (i, (label, traj)) in paths.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut points = String::new();
        for (_, pose) in traj.entries() {
            let (px, py) = map(pose.translation.x, pose.translation.z);
            let _ = write!(points, "{px:.2},{py:.2} ");
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{points}\"/>"
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\" font-size=\"14\">{label}</text>",
            margin,
            margin + 18.0 * i as f64
        );
    }
    let _ = writeln!(svg, "</svg>");
    std::fs::write(out, svg)?;
    Ok(())
}
