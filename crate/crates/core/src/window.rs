//! Sliding-window photometric bundle adjustment over keyframe body poses,
//! keyframe admission policy and Schur-complement marginalization.
//!
//! Bundle adjustment only pairs keyframes through the same view index on both
//! sides; cross-view terms exist solely in tracking. Keypoint depths come
//! from LiDAR and are never optimized, so the unknowns are exactly the
//! keyframe body poses. The oldest in-window pose is gauge-fixed, and evicted
//! keyframes leave a quadratic prior behind (first-estimate linearization,
//! frozen at marginalization time).

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use thiserror::Error;

use crate::geometry::{se3_exp, se3_log, Pixel, Pose, Twist};
use crate::keypoints::{Keypoint, PATTERN};
use crate::rig::{chain_world, RigCalibration, VIEW_COUNT};
use crate::tracking::{evaluate_pattern_block, huber, huber_weight, MultiViewFrame, TrackResult, PATTERN_LEN};

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("bundle adjustment needs at least 2 keyframes")]
    WindowTooSmall,
    #[error("marginalization requires the window to be at capacity")]
    WindowNotFull,
    #[error("diverged: final energy {final_energy:.3} exceeds 4x initial energy {initial_energy:.3}")]
    Diverged { initial_energy: f64, final_energy: f64 },
}

#[derive(Debug, Clone)]
pub struct WindowConfig {
    /// Huber threshold shared with tracking, intensity units.
    pub huber_gamma: f64,
    /// Gauss-Newton iteration cap per bundle adjustment run.
    pub max_iterations: usize,
    /// Step norm below which bundle adjustment stops.
    pub convergence_step_norm: f64,
    /// Mean-flow threshold for keyframe admission, pixels.
    pub flow_threshold: f64,
    /// Minimum tracked valid-residual ratio before forcing a keyframe.
    pub min_ratio: f64,
    /// Window capacity, typically 5 to 7 keyframes.
    pub max_keyframes: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            huber_gamma: 9.0,
            max_iterations: 8,
            convergence_step_norm: 1e-6,
            flow_threshold: 8.0,
            min_ratio: 0.6,
            max_keyframes: 7,
        }
    }
}

/// A retained frame: body pose in the world, the five image pyramids and the
/// per-view keypoints with their fixed depths.
#[derive(Debug, Clone)]
pub struct Keyframe {
    pub id: u64,
    pub timestamp: f64,
    pub world_from_body: Pose,
    pub frame: MultiViewFrame,
    keypoints: Vec<Vec<Keypoint>>,
}

impl Keyframe {
    pub fn new(
        id: u64,
        timestamp: f64,
        world_from_body: Pose,
        frame: MultiViewFrame,
        keypoints: Vec<Vec<Keypoint>>,
    ) -> Self {
        assert_eq!(keypoints.len(), VIEW_COUNT, "one keypoint list per view");
        Self { id, timestamp, world_from_body, frame, keypoints }
    }

    /// Keypoints hosted by view `view` (1-based).
    pub fn keypoints(&self, view: usize) -> &[Keypoint] {
        &self.keypoints[view - 1]
    }

    pub fn total_keypoints(&self) -> usize {
        self.keypoints.iter().map(Vec::len).sum()
    }
}

/// Quadratic prior left behind by marginalized keyframes: energy
/// `d^T H d + 2 b^T d` over the stacked right-multiplied twists `d` of the
/// covered keyframes, measured from the frozen linearization poses.
#[derive(Debug, Clone)]
pub struct MarginalPrior {
    pub hessian: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// (keyframe id, linearization pose), in block order.
    pub lin_points: Vec<(u64, Pose)>,
}

/// The keyframe set with its capacity and marginalization prior.
#[derive(Debug)]
pub struct KeyframeWindow {
    keyframes: Vec<Keyframe>,
    max_size: usize,
    prior: Option<MarginalPrior>,
}

impl KeyframeWindow {
    pub fn new(max_size: usize) -> Self {
        assert!((5..=16).contains(&max_size), "window capacity outside the supported range");
        Self { keyframes: Vec::new(), max_size, prior: None }
    }

    pub fn push(&mut self, keyframe: Keyframe) {
        assert!(self.keyframes.len() < self.max_size, "window already at capacity");
        self.keyframes.push(keyframe);
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.keyframes.len() == self.max_size
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn newest(&self) -> Option<&Keyframe> {
        self.keyframes.last()
    }

    pub fn prior(&self) -> Option<&MarginalPrior> {
        self.prior.as_ref()
    }
}

/// Should the tracked frame become a keyframe? True when the mean pixel flow
/// exceeds the threshold or too few residuals stayed valid.
pub fn keyframe_decision(tr: &TrackResult, cfg: &WindowConfig) -> bool {
    tr.mean_flow > cfg.flow_threshold || tr.valid_ratio() < cfg.min_ratio
}

/// Right-multiplied local coordinates of `pose` relative to `lin`.
fn local_twist(lin: &Pose, pose: &Pose) -> Vector6<f64> {
    let delta = se3_log(&(&lin.inverse() * pose)).expect("window poses stay far from the pi singularity");
    Vector6::new(
        delta.rotation.x, delta.rotation.y, delta.rotation.z,
        delta.translation.x, delta.translation.y, delta.translation.z,
    )
}

struct SystemEval {
    h: DMatrix<f64>,
    g: DVector<f64>,
    photometric_energy: f64,
    prior_energy: f64,
    valid_blocks: usize,
}

impl SystemEval {
    fn total_energy(&self) -> f64 {
        self.photometric_energy + self.prior_energy
    }
}

/// Builds the Gauss-Newton system over all keyframe body poses (6 per frame,
/// rotation first), photometric terms plus the marginalization prior.
fn build_system(
    keyframes: &[Keyframe],
    poses: &[Pose],
    prior: Option<&MarginalPrior>,
    rig: &RigCalibration,
    cfg: &WindowConfig,
) -> SystemEval {
    let n = keyframes.len();
    let dim = 6 * n;
    let mut eval = SystemEval {
        h: DMatrix::zeros(dim, dim),
        g: DVector::zeros(dim),
        photometric_energy: 0.0,
        prior_energy: 0.0,
        valid_blocks: 0,
    };
    let gamma = cfg.huber_gamma;

    for s in 0..n {
        for l in 0..n {
            if s == l {
                continue;
            }
            for j in 1..=VIEW_COUNT {
                let host_kps = keyframes[s].keypoints(j);
                if host_kps.is_empty() {
                    continue;
                }
                let host_cam = rig.camera(j);
                let target_cam = rig.camera(j);
                let target_img = keyframes[l].frame.view(j).level(0);

                // Same-view pair pose via the world chains of both keyframes.
                let host_world = chain_world(rig, &poses[s], j).expect("valid view");
                let target_world = chain_world(rig, &poses[l], j).expect("valid view");
                let pair_pose = target_world.inverse() * host_world;

                let extrinsic = rig.cam_from_body(j);
                let body_from_cam = extrinsic.inverse();
                // y = E_j exp(-delta_l) W_l^-1 W_s exp(delta_s) E_j^-1 p.
                let m_rot = extrinsic.rotation * poses[l].rotation.transpose() * poses[s].rotation;

                for kp in host_kps {
                    let mut host_points = [Vector3::zeros(); PATTERN_LEN];
                    let mut ok = true;
                    for k in 0..PATTERN_LEN {
                        let u = Pixel::new(kp.pixel.u + PATTERN[k][0], kp.pixel.v + PATTERN[k][1]);
                        match host_cam.unproject(&u, kp.depth) {
                            Ok(p) => host_points[k] = p,
                            Err(_) => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    if !ok {
                        continue;
                    }
                    let Some(block) =
                        evaluate_pattern_block(&host_points, &kp.intensities, target_cam, target_img, &pair_pose)
                    else {
                        continue;
                    };
                    eval.valid_blocks += 1;

                    for k in 0..PATTERN_LEN {
                        let r = block.residuals[k];
                        eval.photometric_energy += huber(r, gamma);
                        let w = huber_weight(r, gamma);
                        let row = &block.dres_dtarget[k];

                        // Host-side twist: lever arm is the host body point.
                        let a = body_from_cam.transform(&host_points[k]);
                        let row_s = row * m_rot;
                        let jac_s = Vector6::new(
                            -(row_s[1] * a.z - row_s[2] * a.y),
                            -(row_s[2] * a.x - row_s[0] * a.z),
                            -(row_s[0] * a.y - row_s[1] * a.x),
                            row_s[0], row_s[1], row_s[2],
                        );
                        // Target-side twist: lever arm is the target body point.
                        let b = body_from_cam.transform(&block.target_points[k]);
                        let row_l = row * extrinsic.rotation;
                        let jac_l = Vector6::new(
                            row_l[1] * b.z - row_l[2] * b.y,
                            row_l[2] * b.x - row_l[0] * b.z,
                            row_l[0] * b.y - row_l[1] * b.x,
                            -row_l[0], -row_l[1], -row_l[2],
                        );

                        scatter(&mut eval.h, &mut eval.g, s, &jac_s, l, &jac_l, w, r);
                    }
                }
            }
        }
    }

    if let Some(prior) = prior {
        let m = prior.lin_points.len();
        let mut delta = DVector::zeros(6 * m);
        let mut index_of = Vec::with_capacity(m);
        for (slot, (id, lin)) in prior.lin_points.iter().enumerate() {
            let idx = keyframes
                .iter()
                .position(|kf| kf.id == *id)
                .expect("prior references a keyframe still in the window");
            index_of.push(idx);
            delta.fixed_rows_mut::<6>(6 * slot).copy_from(&local_twist(lin, &poses[idx]));
        }
        eval.prior_energy = (delta.transpose() * &prior.hessian * &delta)[(0, 0)]
            + 2.0 * prior.rhs.dot(&delta);
        let grad = &prior.hessian * &delta + &prior.rhs;
        for (slot_a, &idx_a) in index_of.iter().enumerate() {
            for row in 0..6 {
                eval.g[6 * idx_a + row] += grad[6 * slot_a + row];
            }
            for (slot_b, &idx_b) in index_of.iter().enumerate() {
                for row in 0..6 {
                    for col in 0..6 {
                        eval.h[(6 * idx_a + row, 6 * idx_b + col)] +=
                            prior.hessian[(6 * slot_a + row, 6 * slot_b + col)];
                    }
                }
            }
        }
    }

    eval
}

fn scatter(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    s: usize,
    jac_s: &Vector6<f64>,
    l: usize,
    jac_l: &Vector6<f64>,
    w: f64,
    r: f64,
) {
    let blocks = [(s, jac_s), (l, jac_l)];
    for (idx_a, jac_a) in blocks {
        for row in 0..6 {
            g[6 * idx_a + row] += w * jac_a[row] * r;
        }
        for (idx_b, jac_b) in blocks {
            for row in 0..6 {
                for col in 0..6 {
                    h[(6 * idx_a + row, 6 * idx_b + col)] += w * jac_a[row] * jac_b[col];
                }
            }
        }
    }
}

/// Photometric bundle-adjustment energy over all ordered same-view keyframe
/// pairs (the marginalization prior is not included).
pub fn ba_energy(window: &KeyframeWindow, rig: &RigCalibration, cfg: &WindowConfig) -> Result<f64, WindowError> {
    if window.len() < 2 {
        return Err(WindowError::WindowTooSmall);
    }
    let poses: Vec<Pose> = window.keyframes.iter().map(|kf| kf.world_from_body).collect();
    Ok(build_system(&window.keyframes, &poses, None, rig, cfg).photometric_energy)
}

/// Report of one bundle-adjustment run; energies include the prior term.
#[derive(Debug, Clone)]
pub struct BaReport {
    pub initial_energy: f64,
    pub final_energy: f64,
    pub iterations: usize,
    /// Accepted total energies, starting with the initial one.
    pub energy_trace: Vec<f64>,
}

fn solve_reduced(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let neg = -g;
    if let Some(chol) = h.clone().cholesky() {
        return Some(chol.solve(&neg));
    }
    let jitter = 1e-9 * (1.0 + h.trace().abs());
    let damped = h + DMatrix::identity(h.nrows(), h.ncols()) * jitter;
    damped.cholesky().map(|c| c.solve(&neg))
}

/// Gauss-Newton over all keyframe body poses except the oldest (gauge-fixed),
/// including the marginalization prior. Accepted steps never increase the
/// total energy; rejected steps are halved up to 10 times.
pub fn optimize_window(
    window: &mut KeyframeWindow,
    rig: &RigCalibration,
    cfg: &WindowConfig,
) -> Result<BaReport, WindowError> {
    let n = window.len();
    if n < 2 {
        return Err(WindowError::WindowTooSmall);
    }
    let keyframes = &window.keyframes;
    let mut poses: Vec<Pose> = keyframes.iter().map(|kf| kf.world_from_body).collect();
    let mut cur = build_system(keyframes, &poses, window.prior.as_ref(), rig, cfg);
    let initial_energy = cur.total_energy();
    let mut trace = vec![initial_energy];
    let mut iterations = 0usize;

    let free = 6 * (n - 1);
    for _ in 0..cfg.max_iterations {
        // Drop the gauge-fixed oldest pose (block 0).
        let h_red = cur.h.view((6, 6), (free, free)).into_owned();
        let g_red = cur.g.rows(6, free).into_owned();
        let Some(step) = solve_reduced(&h_red, &g_red) else { break };
        iterations += 1;

        let mut accepted = false;
        let mut applied_norm = 0.0;
        let mut scale = 1.0;
        for _ in 0..=10 {
            let mut cand_poses = poses.clone();
            for i in 1..n {
                let seg = step.rows(6 * (i - 1), 6) * scale;
                let twist = Twist::new(
                    Vector3::new(seg[0], seg[1], seg[2]),
                    Vector3::new(seg[3], seg[4], seg[5]),
                );
                cand_poses[i] = (cand_poses[i] * se3_exp(&twist)).orthonormalized();
            }
            let cand = build_system(keyframes, &cand_poses, window.prior.as_ref(), rig, cfg);
            if cand.total_energy() <= cur.total_energy() {
                poses = cand_poses;
                cur = cand;
                applied_norm = (step.norm()) * scale;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(cur.total_energy());
        if applied_norm < cfg.convergence_step_norm {
            break;
        }
    }

    let final_energy = cur.total_energy();
    if final_energy > 4.0 * initial_energy.abs() + 1e-12 && final_energy > initial_energy {
        return Err(WindowError::Diverged { initial_energy, final_energy });
    }
    for (kf, pose) in window.keyframes.iter_mut().zip(poses) {
        kf.world_from_body = pose;
    }
    Ok(BaReport { initial_energy, final_energy, iterations, energy_trace: trace })
}

/// Eliminates the block `start..start+len` of the quadratic system
/// `E(x) = x^T H x + 2 b^T x` by Schur complement, returning the marginal
/// system over the remaining variables (in their original order).
pub fn schur_marginalize(h: &DMatrix<f64>, b: &DVector<f64>, start: usize, len: usize) -> (DMatrix<f64>, DVector<f64>) {
    let dim = h.nrows();
    assert_eq!(h.ncols(), dim);
    assert_eq!(b.len(), dim);
    assert!(start + len <= dim);
    let keep: Vec<usize> = (0..dim).filter(|i| *i < start || *i >= start + len).collect();

    let h_mm = h.view((start, start), (len, len)).into_owned();
    let mut h_mo = DMatrix::zeros(len, keep.len());
    let mut h_om = DMatrix::zeros(keep.len(), len);
    let mut h_oo = DMatrix::zeros(keep.len(), keep.len());
    let mut b_m = DVector::zeros(len);
    let mut b_o = DVector::zeros(keep.len());
    for (ri, &row) in keep.iter().enumerate() {
        b_o[ri] = b[row];
        for (ci, &col) in keep.iter().enumerate() {
            h_oo[(ri, ci)] = h[(row, col)];
        }
        for k in 0..len {
            h_om[(ri, k)] = h[(row, start + k)];
            h_mo[(k, ri)] = h[(start + k, row)];
        }
    }
    for k in 0..len {
        b_m[k] = b[start + k];
    }

    let chol = h_mm
        .clone()
        .cholesky()
        .or_else(|| {
            let jitter = 1e-12 * (1.0 + h_mm.trace().abs());
            (h_mm + DMatrix::identity(len, len) * jitter).cholesky()
        })
        .expect("marginal block must be positive definite");
    let x = chol.solve(&h_mo);
    let y = chol.solve(&b_m);

    let mut h_marg = h_oo - &h_om * x;
    let b_marg = b_o - &h_om * y;
    // Exact symmetry despite rounding.
    let h_t = h_marg.transpose();
    h_marg = (h_marg + h_t) * 0.5;
    (h_marg, b_marg)
}

/// Marginalizes the oldest keyframe out of a full window: the Gauss-Newton
/// system is linearized at the current estimates, the evicted pose block is
/// eliminated by Schur complement and the result replaces the prior, with
/// linearization points frozen at the survivors' current poses.
pub fn marginalize_oldest(
    window: &mut KeyframeWindow,
    rig: &RigCalibration,
    cfg: &WindowConfig,
) -> Result<(), WindowError> {
    if !window.is_full() {
        return Err(WindowError::WindowNotFull);
    }
    let poses: Vec<Pose> = window.keyframes.iter().map(|kf| kf.world_from_body).collect();
    let eval = build_system(&window.keyframes, &poses, window.prior.as_ref(), rig, cfg);
    let (h_marg, b_marg) = schur_marginalize(&eval.h, &eval.g, 0, 6);

    let lin_points = window
        .keyframes
        .iter()
        .skip(1)
        .map(|kf| (kf.id, kf.world_from_body))
        .collect();
    window.prior = Some(MarginalPrior { hessian: h_marg, rhs: b_marg, lin_points });
    window.keyframes.remove(0);
    Ok(())
}
