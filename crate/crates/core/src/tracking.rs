//! Direct pose estimation of the current frame against the newest keyframe.
//!
//! Keypoints of every keyframe view are warped into every current view
//! (cross-view constraints included), each contributing a small pattern of
//! Huber-robust photometric residuals. There is a single 6-dof unknown, the
//! relative body pose; all 25 view-pair poses are derived from it through the
//! static rig extrinsics. Optimization is iteratively reweighted Gauss-Newton
//! over a coarse-to-fine pyramid with step halving, so accepted steps never
//! increase the energy.

use nalgebra::{Matrix6, RowVector3, Vector3, Vector6};
use thiserror::Error;

use crate::geometry::{se3_exp, CameraModel, Image, ImagePyramid, Pixel, Pose, Twist};
use crate::keypoints::PATTERN;
use crate::rig::{chain_tracking, RigCalibration, VIEW_COUNT};
use crate::window::Keyframe;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("only {valid} valid residuals, need at least {required}")]
    InsufficientResiduals { valid: usize, required: usize },
    #[error("diverged: final energy {final_energy:.3} exceeds 4x initial energy {initial_energy:.3}")]
    Diverged { initial_energy: f64, final_energy: f64 },
}

#[derive(Debug, Clone)]
pub struct TrackingConfig {
    /// Huber threshold, intensity units.
    pub huber_gamma: f64,
    /// Pyramid levels (factor 2 per level).
    pub pyramid_levels: usize,
    /// Gauss-Newton iteration cap per level.
    pub max_iterations: usize,
    /// Step norm below which a level is converged.
    pub convergence_step_norm: f64,
    /// Minimum valid residual blocks per evaluation.
    pub min_valid_residuals: usize,
    /// When false only same-view (j = l) pairs contribute.
    pub cross_view_enabled: bool,
    /// Views participating on both the host and target side, 1-based.
    pub active_views: Vec<usize>,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            huber_gamma: 9.0,
            pyramid_levels: 4,
            max_iterations: 20,
            convergence_step_norm: 1e-6,
            min_valid_residuals: 50,
            cross_view_enabled: true,
            active_views: vec![1, 2, 3, 4, 5],
        }
    }
}

impl TrackingConfig {
    fn validate(&self) {
        assert!(self.huber_gamma > 0.0, "huber gamma must be positive");
        assert!(self.pyramid_levels >= 1, "need at least one pyramid level");
        assert!(!self.active_views.is_empty(), "active view set must be non-empty");
        for &v in &self.active_views {
            assert!((1..=VIEW_COUNT).contains(&v), "view index {v} out of range");
        }
    }
}

/// The five images of one panoramic frame, pyramid form.
#[derive(Debug, Clone)]
pub struct MultiViewFrame {
    pub timestamp: f64,
    views: Vec<ImagePyramid>,
}

impl MultiViewFrame {
    pub fn new(timestamp: f64, images: Vec<Image>, pyramid_levels: usize) -> Self {
        assert_eq!(images.len(), VIEW_COUNT, "a panoramic frame has exactly {VIEW_COUNT} views");
        Self {
            timestamp,
            views: images.into_iter().map(|img| ImagePyramid::build(img, pyramid_levels)).collect(),
        }
    }

    /// Pyramid of view `view` (1-based).
    pub fn view(&self, view: usize) -> &ImagePyramid {
        &self.views[view - 1]
    }

    pub fn pyramid_levels(&self) -> usize {
        self.views[0].num_levels()
    }
}

/// Robust loss: `r^2` inside the threshold, `gamma (2|r| - gamma)` outside.
pub fn huber(r: f64, gamma: f64) -> f64 {
    let a = r.abs();
    if a <= gamma {
        r * r
    } else {
        gamma * (2.0 * a - gamma)
    }
}

/// IRLS weight of [`huber`]: 1 inside the threshold, `gamma / |r|` outside.
pub fn huber_weight(r: f64, gamma: f64) -> f64 {
    let a = r.abs();
    if a <= gamma {
        1.0
    } else {
        gamma / a
    }
}

/// Result of tracking one frame against the newest keyframe.
#[derive(Debug, Clone)]
pub struct TrackResult {
    /// Current-body-from-keyframe-body pose.
    pub rel_pose: Pose,
    /// Robust energy at the final pose, finest level.
    pub final_energy: f64,
    /// Valid residual blocks at the finest level.
    pub valid_residuals: usize,
    /// Residual blocks attempted at the finest level.
    pub attempted_residuals: usize,
    /// Keyframe keypoints with at least one valid block, finest level.
    pub tracked_keypoints: usize,
    /// Keyframe keypoints hosted by active views.
    pub total_keypoints: usize,
    /// Valid blocks per (host view, target view), finest level.
    pub pair_counts: [[usize; VIEW_COUNT]; VIEW_COUNT],
    /// Mean same-view pixel displacement of keypoint centers, finest level.
    pub mean_flow: f64,
    /// Whether the finest level met the step-norm criterion.
    pub converged: bool,
    /// Accepted per-block mean energies, one trace per level, coarse first.
    pub energy_traces: Vec<Vec<f64>>,
}

impl TrackResult {
    /// Fraction of keyframe keypoints still tracked in the current frame.
    pub fn valid_ratio(&self) -> f64 {
        if self.total_keypoints == 0 {
            0.0
        } else {
            self.tracked_keypoints as f64 / self.total_keypoints as f64
        }
    }
}

/// Energy and diagnostics of one evaluation (finest pyramid level).
#[derive(Debug, Clone)]
pub struct EnergyEval {
    pub energy: f64,
    pub valid_residuals: usize,
    pub attempted_residuals: usize,
    pub pair_counts: [[usize; VIEW_COUNT]; VIEW_COUNT],
    pub mean_flow: f64,
}

/// One scalar residual with its Jacobian w.r.t. the left-multiplied body
/// twist, in a stable enumeration for finite-difference checks.
#[derive(Debug, Clone)]
pub struct ResidualRecord {
    pub host_view: usize,
    pub target_view: usize,
    pub keypoint_index: usize,
    pub pattern_index: usize,
    pub residual: f64,
    pub jacobian: Vector6<f64>,
    pub warped: Pixel,
}

pub(crate) const PATTERN_LEN: usize = PATTERN.len();

/// Per-pattern evaluation of one keypoint against one target image.
pub(crate) struct PatternBlock {
    pub residuals: [f64; PATTERN_LEN],
    pub warped: [Pixel; PATTERN_LEN],
    /// Points in the target camera frame.
    pub target_points: [Vector3<f64>; PATTERN_LEN],
    /// d(residual) / d(target-camera point), one row each.
    pub dres_dtarget: [RowVector3<f64>; PATTERN_LEN],
}

/// Warps every pattern point of a keypoint into the target image and
/// evaluates residuals against the host values. `None` when any pattern
/// point fails to warp or sample (partially valid blocks are dropped whole)
/// or when the target samples carry no gradient at all, in which case the
/// block holds no pose information.
pub(crate) fn evaluate_pattern_block(
    host_points: &[Vector3<f64>; PATTERN_LEN],
    host_values: &[f64; PATTERN_LEN],
    target_cam: &CameraModel,
    target_img: &Image,
    target_from_host: &Pose,
) -> Option<PatternBlock> {
    let mut residuals = [0.0; PATTERN_LEN];
    let mut warped = [Pixel::new(0.0, 0.0); PATTERN_LEN];
    let mut target_points = [Vector3::zeros(); PATTERN_LEN];
    let mut rows = [RowVector3::zeros(); PATTERN_LEN];
    let mut grad_sum = 0.0;
    for k in 0..PATTERN_LEN {
        let y = target_from_host.transform(&host_points[k]);
        if y.z <= 0.0 {
            return None;
        }
        let u = target_cam.project(&y).ok()?;
        let (value, grad) = target_img.sample_bilinear(&u).ok()?;
        residuals[k] = host_values[k] - value;
        warped[k] = u;
        target_points[k] = y;
        grad_sum += grad.norm();
        let inv_z = 1.0 / y.z;
        let gfx = grad.x * target_cam.fx * inv_z;
        let gfy = grad.y * target_cam.fy * inv_z;
        // d r / d y = -(grad^T dpi/dy).
        rows[k] = RowVector3::new(-gfx, -gfy, (gfx * y.x + gfy * y.y) * inv_z);
    }
    if grad_sum < 1e-12 {
        return None;
    }
    Some(PatternBlock { residuals, warped, target_points, dres_dtarget: rows })
}

/// Level-scaled pixel coordinate (pixel centers at integers on every level).
pub(crate) fn scale_pixel(u: &Pixel, level: usize) -> Pixel {
    let s = 0.5f64.powi(level as i32);
    Pixel::new((u.u + 0.5) * s - 0.5, (u.v + 0.5) * s - 0.5)
}

struct BlockVisit<'a> {
    host_view: usize,
    target_view: usize,
    keypoint_index: usize,
    scaled_center: Pixel,
    block: &'a PatternBlock,
    jacobians: &'a [Vector6<f64>; PATTERN_LEN],
}

/// Walks every (keypoint, target view) pair at one pyramid level, invoking
/// `visit` for fully valid blocks. Returns the attempted pair count. This is
/// the single evaluation path behind energies, normal equations and residual
/// collection.
fn sweep_blocks(
    keyframe: &Keyframe,
    frame: &MultiViewFrame,
    rel_body: &Pose,
    rig: &RigCalibration,
    cfg: &TrackingConfig,
    level: usize,
    visit: &mut dyn FnMut(BlockVisit),
) -> usize {
    let mut attempted = 0usize;
    for &j in &cfg.active_views {
        let keypoints = keyframe.keypoints(j);
        if keypoints.is_empty() {
            continue;
        }
        let host_cam = rig.camera(j).at_level(level);
        let host_img = keyframe.frame.view(j).level(level);

        // Targets and their chained poses are fixed per (j, l).
        let mut targets = Vec::new();
        for &l in &cfg.active_views {
            if !cfg.cross_view_enabled && l != j {
                continue;
            }
            let pair_pose = chain_tracking(rig, rel_body, j, l).expect("validated view index");
            let rot_target = rig.cam_from_body(l).rotation;
            let body_from_target = rig.cam_from_body(l).inverse();
            targets.push((l, pair_pose, rot_target, body_from_target));
        }

        for (kp_idx, kp) in keypoints.iter().enumerate() {
            let scaled = scale_pixel(&kp.pixel, level);

            // Host geometry and intensities for the whole pattern.
            let mut host_points = [Vector3::zeros(); PATTERN_LEN];
            let mut host_values = [0.0; PATTERN_LEN];
            let mut host_ok = true;
            for k in 0..PATTERN_LEN {
                let u = Pixel::new(scaled.u + PATTERN[k][0], scaled.v + PATTERN[k][1]);
                match host_cam.unproject(&u, kp.depth) {
                    Ok(p) => host_points[k] = p,
                    Err(_) => {
                        host_ok = false;
                        break;
                    }
                }
                if level == 0 {
                    host_values[k] = kp.intensities[k];
                } else {
                    match host_img.sample_bilinear(&u) {
                        Ok((value, _)) => host_values[k] = value,
                        Err(_) => {
                            host_ok = false;
                            break;
                        }
                    }
                }
            }

            for (l, pair_pose, rot_target, body_from_target) in &targets {
                attempted += 1;
                if !host_ok {
                    continue;
                }
                let target_img = frame.view(*l).level(level);
                let target_cam = rig.camera(*l).at_level(level);
                let Some(block) =
                    evaluate_pattern_block(&host_points, &host_values, &target_cam, target_img, pair_pose)
                else {
                    continue;
                };

                // Jacobian w.r.t. the left-multiplied twist of the body pose:
                // y = E_l exp(delta) q with q the current-body point.
                let mut jacobians = [Vector6::zeros(); PATTERN_LEN];
                for k in 0..PATTERN_LEN {
                    let q = body_from_target.transform(&block.target_points[k]);
                    let row_cam = block.dres_dtarget[k] * rot_target;
                    // Rotation part: row_cam * (-skew(q)); translation: row_cam.
                    let jac_rot = Vector3::new(
                        row_cam[1] * q.z - row_cam[2] * q.y,
                        row_cam[2] * q.x - row_cam[0] * q.z,
                        row_cam[0] * q.y - row_cam[1] * q.x,
                    );
                    jacobians[k] = Vector6::new(
                        -jac_rot.x, -jac_rot.y, -jac_rot.z, row_cam[0], row_cam[1], row_cam[2],
                    );
                }
                visit(BlockVisit {
                    host_view: j,
                    target_view: *l,
                    keypoint_index: kp_idx,
                    scaled_center: scaled,
                    block: &block,
                    jacobians: &jacobians,
                });
            }
        }
    }
    attempted
}

/// One full evaluation at a level: energy, counts, flow and normal equations.
struct LevelPass {
    energy: f64,
    valid_blocks: usize,
    attempted_blocks: usize,
    tracked_keypoints: usize,
    pair_counts: [[usize; VIEW_COUNT]; VIEW_COUNT],
    flow_sum: f64,
    flow_count: usize,
    h: Matrix6<f64>,
    g: Vector6<f64>,
}

impl LevelPass {
    fn mean_energy(&self) -> f64 {
        if self.valid_blocks == 0 {
            0.0
        } else {
            self.energy / self.valid_blocks as f64
        }
    }

    fn mean_flow(&self) -> f64 {
        if self.flow_count == 0 {
            0.0
        } else {
            self.flow_sum / self.flow_count as f64
        }
    }
}

fn level_pass(
    keyframe: &Keyframe,
    frame: &MultiViewFrame,
    rel_body: &Pose,
    rig: &RigCalibration,
    cfg: &TrackingConfig,
    level: usize,
) -> LevelPass {
    let mut pass = LevelPass {
        energy: 0.0,
        valid_blocks: 0,
        attempted_blocks: 0,
        tracked_keypoints: 0,
        pair_counts: [[0; VIEW_COUNT]; VIEW_COUNT],
        flow_sum: 0.0,
        flow_count: 0,
        h: Matrix6::zeros(),
        g: Vector6::zeros(),
    };
    let gamma = cfg.huber_gamma;
    // Blocks of one keypoint arrive consecutively from the sweep.
    let mut last_keypoint: Option<(usize, usize)> = None;
    pass.attempted_blocks = sweep_blocks(keyframe, frame, rel_body, rig, cfg, level, &mut |v| {
        pass.valid_blocks += 1;
        pass.pair_counts[v.host_view - 1][v.target_view - 1] += 1;
        if last_keypoint != Some((v.host_view, v.keypoint_index)) {
            last_keypoint = Some((v.host_view, v.keypoint_index));
            pass.tracked_keypoints += 1;
        }
        for k in 0..PATTERN_LEN {
            let r = v.block.residuals[k];
            pass.energy += huber(r, gamma);
            let w = huber_weight(r, gamma);
            let jac = &v.jacobians[k];
            pass.h.syger(w, jac, jac, 1.0);
            pass.g += jac * (w * r);
        }
        if v.host_view == v.target_view {
            pass.flow_sum += v.block.warped[0].distance(&v.scaled_center);
            pass.flow_count += 1;
        }
    });
    // syger fills the lower triangle; mirror it.
    pass.h.fill_upper_triangle_with_lower_triangle();
    pass
}

/// Photometric energy of the current frame against a keyframe at the finest
/// pyramid level, with residual diagnostics.
pub fn evaluate_energy(
    keyframe: &Keyframe,
    frame: &MultiViewFrame,
    rel_body: &Pose,
    rig: &RigCalibration,
    cfg: &TrackingConfig,
) -> Result<EnergyEval, TrackError> {
    cfg.validate();
    let pass = level_pass(keyframe, frame, rel_body, rig, cfg, 0);
    if pass.valid_blocks < cfg.min_valid_residuals {
        return Err(TrackError::InsufficientResiduals {
            valid: pass.valid_blocks,
            required: cfg.min_valid_residuals,
        });
    }
    Ok(EnergyEval {
        energy: pass.energy,
        valid_residuals: pass.valid_blocks,
        attempted_residuals: pass.attempted_blocks,
        pair_counts: pass.pair_counts,
        mean_flow: pass.mean_flow(),
    })
}

/// Every scalar residual with its analytic Jacobian at one pyramid level;
/// records carry stable indices so finite-difference probes can re-associate
/// them across perturbed evaluations.
pub fn collect_residuals(
    keyframe: &Keyframe,
    frame: &MultiViewFrame,
    rel_body: &Pose,
    rig: &RigCalibration,
    cfg: &TrackingConfig,
    level: usize,
) -> Vec<ResidualRecord> {
    cfg.validate();
    let mut records = Vec::new();
    sweep_blocks(keyframe, frame, rel_body, rig, cfg, level, &mut |v| {
        for k in 0..PATTERN_LEN {
            records.push(ResidualRecord {
                host_view: v.host_view,
                target_view: v.target_view,
                keypoint_index: v.keypoint_index,
                pattern_index: k,
                residual: v.block.residuals[k],
                jacobian: v.jacobians[k],
                warped: v.block.warped[k],
            });
        }
    });
    records
}

fn solve_normal_equations(h: &Matrix6<f64>, g: &Vector6<f64>) -> Option<Vector6<f64>> {
    if let Some(chol) = h.cholesky() {
        return Some(chol.solve(&(-g)));
    }
    let jitter = 1e-9 * (1.0 + h.trace().abs());
    (h + Matrix6::identity() * jitter).cholesky().map(|c| c.solve(&(-g)))
}

fn twist_from_vector(v: &Vector6<f64>) -> Twist {
    Twist::new(
        Vector3::new(v[0], v[1], v[2]),
        Vector3::new(v[3], v[4], v[5]),
    )
}

/// Tracks the current frame against the newest keyframe: iteratively
/// reweighted Gauss-Newton, coarse-to-fine, step halving on rejection.
pub fn track_frame(
    keyframe: &Keyframe,
    frame: &MultiViewFrame,
    rel_init: &Pose,
    rig: &RigCalibration,
    cfg: &TrackingConfig,
) -> Result<TrackResult, TrackError> {
    cfg.validate();
    let levels = cfg.pyramid_levels.min(frame.pyramid_levels());

    let init_finest = level_pass(keyframe, frame, rel_init, rig, cfg, 0);
    let init_finest_mean = (init_finest.valid_blocks >= cfg.min_valid_residuals).then(|| init_finest.mean_energy());

    let mut rel = *rel_init;
    let mut energy_traces = Vec::with_capacity(levels);
    let mut converged_finest = false;
    let mut finest_pass: Option<LevelPass> = None;

    for level in (0..levels).rev() {
        let mut cur = level_pass(keyframe, frame, &rel, rig, cfg, level);
        if cur.valid_blocks < cfg.min_valid_residuals {
            return Err(TrackError::InsufficientResiduals {
                valid: cur.valid_blocks,
                required: cfg.min_valid_residuals,
            });
        }
        let mut trace = vec![cur.mean_energy()];
        let mut converged = false;

        for _ in 0..cfg.max_iterations {
            let Some(step) = solve_normal_equations(&cur.h, &cur.g) else { break };
            let mut accepted = false;
            let mut applied_norm = 0.0;
            let mut scale = 1.0;
            for _ in 0..=10 {
                let scaled = step * scale;
                let candidate = (se3_exp(&twist_from_vector(&scaled)) * rel).orthonormalized();
                let cand_pass = level_pass(keyframe, frame, &candidate, rig, cfg, level);
                if cand_pass.valid_blocks >= cfg.min_valid_residuals
                    && cand_pass.mean_energy() <= cur.mean_energy()
                {
                    rel = candidate;
                    cur = cand_pass;
                    applied_norm = scaled.norm();
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                break;
            }
            trace.push(cur.mean_energy());
            if applied_norm < cfg.convergence_step_norm {
                converged = true;
                break;
            }
        }

        if level == 0 {
            converged_finest = converged;
            finest_pass = Some(cur);
        }
        energy_traces.push(trace);
    }

    let final_pass = finest_pass.expect("finest level always runs");
    if let Some(init_mean) = init_finest_mean {
        let final_mean = final_pass.mean_energy();
        if final_mean > 4.0 * init_mean + 1e-12 {
            return Err(TrackError::Diverged {
                initial_energy: init_mean,
                final_energy: final_mean,
            });
        }
    }

    let total_keypoints = cfg.active_views.iter().map(|&j| keyframe.keypoints(j).len()).sum();
    Ok(TrackResult {
        rel_pose: rel,
        final_energy: final_pass.energy,
        valid_residuals: final_pass.valid_blocks,
        attempted_residuals: final_pass.attempted_blocks,
        tracked_keypoints: final_pass.tracked_keypoints,
        total_keypoints,
        pair_counts: final_pass.pair_counts,
        mean_flow: final_pass.mean_flow(),
        converged: converged_finest,
        energy_traces,
    })
}
