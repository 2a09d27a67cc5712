//! The rig's extrinsic chaining identities: how the single body unknown
//! expands into per-view-pair poses for tracking, and how keyframe body poses
//! expand into per-view world poses for bundle adjustment.
//!
//! ```bash
//! cargo run --release -p panovo --example rig_chains
//! ```

use nalgebra::Vector3;
use panovo::geometry::{se3_exp, Twist};
use panovo::rig::{chain_tracking, chain_world};
use panovo::simworld::synthetic_rig;

fn main() {
    let rig = synthetic_rig(320, 240, 80.0);
    for view in 1..=5 {
        let t = rig.cam_from_body(view).translation;
        println!(
            "camera {view}: fx {:.1}, extrinsic translation ({:+.3}, {:+.3}, {:+.3})",
            rig.camera(view).fx,
            t.x,
            t.y,
            t.z
        );
    }

    // A relative body pose, as estimated by tracking.
    let rel = se3_exp(&Twist::new(
        Vector3::new(0.0, 0.02, 0.0),
        Vector3::new(0.01, 0.0, 0.12),
    ));
    println!("\nper-pair tracking chains of one body motion:");
    for j in [1usize, 3] {
        for l in 1..=5 {
            let pair = chain_tracking(&rig, &rel, j, l).unwrap();
            println!(
                "  host view {j} -> target view {l}: translation ({:+.3}, {:+.3}, {:+.3})",
                pair.translation.x, pair.translation.y, pair.translation.z
            );
        }
    }

    // A keyframe body pose, as refined by bundle adjustment.
    let world = se3_exp(&Twist::new(
        Vector3::new(0.0, 0.6, 0.0),
        Vector3::new(2.0, 0.0, 1.0),
    ));
    println!("\nper-view world poses of one keyframe:");
    for l in 1..=5 {
        let cam_world = chain_world(&rig, &world, l).unwrap();
        println!(
            "  view {l}: camera center ({:+.3}, {:+.3}, {:+.3})",
            cam_world.translation.x, cam_world.translation.y, cam_world.translation.z
        );
    }

    // Chains collapse for view 1, the body frame itself.
    let back = chain_tracking(&rig, &rel, 1, 1).unwrap();
    assert!((back.to_matrix() - rel.to_matrix()).norm() < 1e-12);
    println!("\nchain_tracking(rig, rel, 1, 1) == rel, as the body frame coincides with camera 1");
}
