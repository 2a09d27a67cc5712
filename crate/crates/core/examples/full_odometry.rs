//! End-to-end run: simulate a dataset, run the odometry pipeline over it and
//! evaluate the trajectory against ground truth.
//!
//! ```bash
//! cargo run --release -p panovo --example full_odometry
//! ```

use panovo::evaluation::{ate_rmse, Trajectory};
use panovo::geometry::Pose;
use panovo::pipeline::{ingest_dataset, run_odometry, write_dataset, PipelineConfig};
use panovo::simworld::{make_scene, make_trajectory, synthetic_rig, SimConfig, TrajectoryKind};

fn main() {
    let dir = std::env::temp_dir().join("panovo_full_odometry");
    let sim = SimConfig::default();
    let scene = make_scene(42, &sim);
    let rig = synthetic_rig(320, 240, 80.0);
    let truth = make_trajectory(TrajectoryKind::Arc, 40, &sim).unwrap();

    println!("rendering 40 frames to {} ...", dir.display());
    write_dataset(&dir, &scene, &rig, &Pose::identity(), &truth, &sim).unwrap();

    println!("running odometry ...");
    let stream = ingest_dataset(&dir).unwrap();
    let cfg = PipelineConfig::new();
    let estimate = run_odometry(&stream, &cfg).unwrap();

    let gt = Trajectory::load(&dir.join("gt.txt")).unwrap();
    let rmse = ate_rmse(&estimate, &gt).unwrap();
    let path_len = gt.path_length();
    println!(
        "ATE RMSE: {:.4} m over a {:.2} m path ({:.3} % of path length)",
        rmse,
        path_len,
        100.0 * rmse / path_len
    );
}
