//! Rigid trajectory alignment and ATE: constructs a ground-truth path, a
//! noisy rigidly-displaced estimate, aligns them and writes a top-down SVG.
//!
//! ```bash
//! cargo run --release -p panovo --example evaluate_trajectories
//! ```

use nalgebra::Vector3;
use panovo::evaluation::{ate_rmse, umeyama_align, write_topdown_svg, Trajectory};
use panovo::geometry::{se3_exp, Pose, Twist};
use panovo::simworld::{make_trajectory, SimConfig, TrajectoryKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let sim = SimConfig { step_length: 0.1, ..SimConfig::default() };
    let poses = make_trajectory(TrajectoryKind::IndoorLoop, 120, &sim).unwrap();
    let gt = Trajectory::new(
        poses.iter().enumerate().map(|(i, p)| (i as f64 * 0.2, *p)).collect(),
    )
    .unwrap();

    // Estimate = ground truth under a global rigid offset plus 2 cm jitter.
    let offset = se3_exp(&Twist::new(
        Vector3::new(0.0, 0.8, 0.0),
        Vector3::new(5.0, -1.0, 2.0),
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let est = Trajectory::new(
        gt.entries()
            .iter()
            .map(|(t, p)| {
                let jitter = Pose::new(
                    nalgebra::Matrix3::identity(),
                    Vector3::new(
                        rng.gen_range(-0.02..0.02),
                        rng.gen_range(-0.02..0.02),
                        rng.gen_range(-0.02..0.02),
                    ),
                );
                (*t, (&offset * p) * jitter)
            })
            .collect(),
    )
    .unwrap();

    let alignment = umeyama_align(&est, &gt).unwrap();
    println!("recovered alignment translation: {:?}", alignment.translation.as_slice());
    let rmse = ate_rmse(&est, &gt).unwrap();
    println!("ATE RMSE after alignment: {rmse:.4} m (jitter was +-0.02 m per axis)");

    let out = std::env::temp_dir().join("panovo_trajectories.svg");
    write_topdown_svg(&[("estimate", &est), ("ground truth", &gt)], &out).unwrap();
    println!("wrote top-down plot to {}", out.display());
}
