//! Renders two frames of the synthetic world a small motion apart and runs
//! direct tracking between them, printing the recovered pose against the
//! ground truth.
//!
//! ```bash
//! cargo run --release -p panovo --example track_two_frames
//! ```

use nalgebra::Vector3;
use panovo::association::build_sparse_depth;
use panovo::geometry::{se3_log, Pose};
use panovo::keypoints::{select_keypoints, KeypointConfig};
use panovo::simworld::{make_scene, render_frame, simulate_lidar, synthetic_rig, SimConfig};
use panovo::tracking::{track_frame, MultiViewFrame, TrackingConfig};
use panovo::window::Keyframe;

fn main() {
    let sim = SimConfig {
        image_noise: 0.0,
        lidar_range_noise: 0.0,
        ..SimConfig::default()
    };
    let rig = synthetic_rig(320, 240, 80.0);
    let scene = make_scene(21, &sim);
    let tracking = TrackingConfig::default();
    let kp_cfg = KeypointConfig::default();

    // Keyframe at the origin: render, associate LiDAR depth, pick keypoints.
    let kf_pose = Pose::identity();
    let images = render_frame(&scene, &rig, &kf_pose, &sim);
    let scan = simulate_lidar(&scene, &kf_pose, &sim, 0.0);
    let frame0 = MultiViewFrame::new(0.0, images, tracking.pyramid_levels);
    let mut keypoints = Vec::new();
    for view in 1..=5 {
        let depth = build_sparse_depth(&scan, &rig, view, &Pose::identity(), 2).unwrap();
        let kps = select_keypoints(frame0.view(view).level(0), &depth, &kp_cfg);
        println!("view {view}: {} keypoints", kps.len());
        keypoints.push(kps);
    }
    let keyframe = Keyframe::new(0, 0.0, kf_pose, frame0, keypoints);

    // Current frame: 10 cm forward with a touch of yaw.
    let truth = Pose::new(
        nalgebra::Rotation3::from_euler_angles(0.0, 0.01, 0.0).into_inner(),
        Vector3::new(0.0, 0.0, 0.10),
    );
    let images = render_frame(&scene, &rig, &truth, &sim);
    let frame1 = MultiViewFrame::new(0.2, images, tracking.pyramid_levels);

    let result = track_frame(&keyframe, &frame1, &Pose::identity(), &rig, &tracking).unwrap();
    let recovered = result.rel_pose.inverse();
    let err = se3_log(&(truth.inverse() * recovered)).unwrap();

    println!(
        "converged: {}, valid residuals: {}/{}",
        result.converged, result.valid_residuals, result.attempted_residuals
    );
    println!("mean flow: {:.2} px, final energy: {:.1}", result.mean_flow, result.final_energy);
    println!("true    translation: {:?}", truth.translation.as_slice());
    println!("tracked translation: {:?}", recovered.translation.as_slice());
    println!(
        "pose error: rot {:.3e} rad, trans {:.3e} m",
        err.rotation.norm(),
        err.translation.norm()
    );
    let mut pairs = String::new();
    for j in 0..5 {
        for l in 0..5 {
            pairs.push_str(&format!("{:5}", result.pair_counts[j][l]));
        }
        pairs.push('\n');
    }
    println!("valid blocks per (host view row, target view column):\n{pairs}");
}
