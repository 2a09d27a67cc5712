//! Generates a small synthetic dataset (five-view frames, LiDAR scans,
//! calibration, index manifest and ground truth) in the pipeline's ingestion
//! format.
//!
//! ```bash
//! cargo run --release -p panovo --example simulate_dataset -- /tmp/panovo_demo
//! ```

use std::path::PathBuf;

use panovo::geometry::Pose;
use panovo::pipeline::write_dataset;
use panovo::simworld::{make_scene, make_trajectory, synthetic_rig, SimConfig, TrajectoryKind};

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("panovo_demo_dataset"));

    let sim = SimConfig::default();
    let scene = make_scene(7, &sim);
    let rig = synthetic_rig(320, 240, 80.0);
    let trajectory = make_trajectory(TrajectoryKind::Arc, 30, &sim).unwrap();

    write_dataset(&out, &scene, &rig, &Pose::identity(), &trajectory, &sim).unwrap();
    println!("wrote 30-frame arc dataset to {}", out.display());
    println!("layout: calibration.txt, index, frames/*.pgm, scans/*.xyz, gt.txt");
}
