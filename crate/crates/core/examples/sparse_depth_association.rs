//! Projects one simulated LiDAR sweep into all five views and shows the
//! resulting sparse depth maps: sample counts, coverage and a few lookups.
//!
//! ```bash
//! cargo run --release -p panovo --example sparse_depth_association
//! ```

use panovo::association::build_sparse_depth;
use panovo::geometry::{Pixel, Pose};
use panovo::simworld::{make_scene, simulate_lidar, synthetic_rig, SimConfig};

fn main() {
    let sim = SimConfig::default();
    let scene = make_scene(3, &sim);
    let rig = synthetic_rig(320, 240, 80.0);

    let scan = simulate_lidar(&scene, &Pose::identity(), &sim, 0.0);
    println!("scan: {} returns", scan.points.len());

    for view in 1..=5 {
        let map = build_sparse_depth(&scan, &rig, view, &Pose::identity(), 2).unwrap();
        let (mut lo, mut hi) = (f64::MAX, 0.0f64);
        for s in map.samples() {
            lo = lo.min(s.depth);
            hi = hi.max(s.depth);
        }
        println!(
            "view {view}: {} samples in {} px cells, depth range {:.2}..{:.2} m",
            map.len(),
            map.cell_size(),
            lo,
            hi
        );
    }

    // Depth lookups around the principal point of the forward view.
    let map = build_sparse_depth(&scan, &rig, 1, &Pose::identity(), 2).unwrap();
    let cam = rig.camera(1);
    for radius in [0.5, 1.0, 2.0, 4.0] {
        let hit = map.depth_lookup(&Pixel::new(cam.cx, cam.cy), radius);
        println!("lookup at principal point, radius {radius:.1} px: {hit:?}");
    }
}
