//! Builds a keyframe window at ground truth, perturbs the poses, then runs
//! windowed bundle adjustment followed by marginalization of the oldest
//! keyframe, printing recovery errors and the prior left behind.
//!
//! ```bash
//! cargo run --release -p panovo --example sliding_window_ba
//! ```

use nalgebra::Vector3;
use panovo::association::build_sparse_depth;
use panovo::geometry::{se3_exp, se3_log, Pose, Twist};
use panovo::keypoints::{select_keypoints, KeypointConfig};
use panovo::simworld::{make_room_scene, make_trajectory, render_frame, simulate_lidar, synthetic_rig, SimConfig, TrajectoryKind};
use panovo::tracking::MultiViewFrame;
use panovo::window::{ba_energy, marginalize_oldest, optimize_window, Keyframe, KeyframeWindow, WindowConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let sim = SimConfig {
        image_noise: 0.0,
        lidar_range_noise: 0.0,
        texture_contrast: 130.0,
        texture_min_freq: 0.8,
        texture_max_freq: 1.8,
        step_length: 0.25,
        ..SimConfig::default()
    };
    let rig = synthetic_rig(160, 120, 80.0);
    let scene = make_room_scene(9, &sim, 11.0);
    let kp_cfg = KeypointConfig { block_size: 24, gradient_offset: 2.0, ..KeypointConfig::default() };

    let truth = make_trajectory(TrajectoryKind::Arc, 5, &sim).unwrap();
    let mut window = KeyframeWindow::new(5);
    for (i, pose) in truth.iter().enumerate() {
        let images = render_frame(&scene, &rig, pose, &sim);
        let scan = simulate_lidar(&scene, pose, &sim, i as f64 * 0.2);
        let frame = MultiViewFrame::new(i as f64 * 0.2, images, 4);
        let mut keypoints = Vec::new();
        for view in 1..=5 {
            let depth = build_sparse_depth(&scan, &rig, view, &Pose::identity(), 2).unwrap();
            keypoints.push(select_keypoints(frame.view(view).level(0), &depth, &kp_cfg));
        }
        window.push(Keyframe::new(i as u64, i as f64 * 0.2, *pose, frame, keypoints));
    }

    // Perturb every pose except the gauge-fixed oldest one.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut noise = || {
        let v: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0) * 0.01).collect();
        se3_exp(&Twist::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5])))
    };
    let perturbed: Vec<Pose> = window
        .keyframes()
        .iter()
        .enumerate()
        .map(|(i, kf)| if i == 0 { kf.world_from_body } else { kf.world_from_body * noise() })
        .collect();
    // Rebuild the window with the noisy poses.
    let mut noisy = KeyframeWindow::new(5);
    for (kf, pose) in window.keyframes().iter().zip(&perturbed) {
        let mut kf = kf.clone();
        kf.world_from_body = *pose;
        noisy.push(kf);
    }
    let mut window = noisy;

    let cfg = WindowConfig { max_iterations: 20, ..WindowConfig::default() };
    println!("energy before optimization: {:.1}", ba_energy(&window, &rig, &cfg).unwrap());
    let report = optimize_window(&mut window, &rig, &cfg).unwrap();
    println!(
        "optimized in {} iterations: total energy {:.1} -> {:.1}",
        report.iterations, report.initial_energy, report.final_energy
    );
    for (kf, gt) in window.keyframes().iter().zip(&truth) {
        let err = se3_log(&(gt.inverse() * kf.world_from_body)).unwrap();
        println!(
            "keyframe {}: rot error {:.2e} rad, trans error {:.2e} m",
            kf.id,
            err.rotation.norm(),
            err.translation.norm()
        );
    }

    marginalize_oldest(&mut window, &rig, &cfg).unwrap();
    let prior = window.prior().unwrap();
    println!(
        "marginalized oldest: window size {}, prior over {} poses ({}x{} hessian)",
        window.len(),
        prior.lin_points.len(),
        prior.hessian.nrows(),
        prior.hessian.ncols()
    );
}
