//! Argument parsing and dispatch for the `panovo` binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 tracking lost.

use std::path::{Path, PathBuf};

use crate::evaluation::{ate_rmse, write_topdown_svg, Trajectory};
use crate::geometry::Pose;
use crate::pipeline::{ingest_dataset, run_odometry, write_dataset, PipelineConfig, PipelineError};
use crate::rig::VIEW_COUNT;
use crate::simworld::{make_scene, make_trajectory, synthetic_rig, TrajectoryKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRACKING_LOST: i32 = 3;

const USAGE: &str = "\
panovo - panoramic direct LiDAR-assisted visual odometry

USAGE:
    panovo simulate --seed S --frames N --trajectory {line|arc|indoor-loop} --out DIR
                    [--image-noise SIGMA] [--range-noise SIGMA] [--landmarks N]
                    [--step METERS] [--arc-deg DEGREES]
    panovo run      --dataset DIR --out FILE [--views 1,2,3,4,5] [--no-cross-view]
                    [--config FILE]
    panovo evaluate --est FILE --gt FILE [--plot FILE]

Exit codes: 0 ok, 1 usage error, 2 data error, 3 tracking lost.
";

/// Entry point behind the binary; returns the process exit code.
pub fn main(args: &[String]) -> i32 {
    match args.first().map(String::as_str) {
        Some("simulate") => simulate(&args[1..]),
        Some("run") => run(&args[1..]),
        Some("evaluate") => evaluate(&args[1..]),
        Some("--help") | Some("-h") | Some("help") => {
            println!("{USAGE}");
            EXIT_OK
        }
        Some(other) => {
            eprintln!("unknown subcommand {other:?}\n\n{USAGE}");
            EXIT_USAGE
        }
        None => {
            eprintln!("{USAGE}");
            EXIT_USAGE
        }
    }
}

/// Minimal flag cursor: every option takes a value except listed switches.
struct Flags {
    pairs: Vec<(String, String)>,
    switches: Vec<String>,
}

fn parse_flags(args: &[String], switch_names: &[&str]) -> Result<Flags, String> {
    let mut pairs = Vec::new();
    let mut switches = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(name) = arg.strip_prefix("--") else {
            return Err(format!("unexpected positional argument {arg:?}"));
        };
        if switch_names.contains(&name) {
            switches.push(name.to_string());
            i += 1;
            continue;
        }
        let Some(value) = args.get(i + 1) else {
            return Err(format!("flag --{name} needs a value"));
        };
        pairs.push((name.to_string(), value.clone()));
        i += 2;
    }
    Ok(Flags { pairs, switches })
}

impl Flags {
    fn get(&self, name: &str) -> Option<&str> {
        self.pairs.iter().rev().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    fn required(&self, name: &str) -> Result<&str, String> {
        self.get(name).ok_or_else(|| format!("missing required flag --{name}"))
    }

    fn has(&self, name: &str) -> bool {
        self.switches.iter().any(|s| s == name)
    }

    fn parsed<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>, String> {
        match self.get(name) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| format!("bad value for --{name}: {v:?}")),
        }
    }
}

fn usage_error(msg: &str) -> i32 {
    eprintln!("error: {msg}\n\n{USAGE}");
    EXIT_USAGE
}

fn data_error(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_DATA
}

fn simulate(args: &[String]) -> i32 {
    let flags = match parse_flags(args, &[]) {
        Ok(f) => f,
        Err(e) => return usage_error(&e),
    };
    let parsed = (|| -> Result<_, String> {
        let seed: u64 = flags.parsed("seed")?.ok_or("missing required flag --seed")?;
        let frames: usize = flags.parsed("frames")?.ok_or("missing required flag --frames")?;
        let kind = TrajectoryKind::parse(flags.required("trajectory")?)
            .ok_or("trajectory must be one of line, arc, indoor-loop")?;
        let out = PathBuf::from(flags.required("out")?);
        Ok((seed, frames, kind, out))
    })();
    let (seed, frames, kind, out) = match parsed {
        Ok(p) => p,
        Err(e) => return usage_error(&e),
    };

    let mut sim = crate::simworld::SimConfig::default();
    for (field, flag) in [
        (&mut sim.image_noise, "image-noise"),
        (&mut sim.lidar_range_noise, "range-noise"),
        (&mut sim.step_length, "step"),
        (&mut sim.arc_angle_deg, "arc-deg"),
    ] {
        match flags.parsed::<f64>(flag) {
            Ok(Some(v)) => *field = v,
            Ok(None) => {}
            Err(e) => return usage_error(&e),
        }
    }
    match flags.parsed::<usize>("landmarks") {
        Ok(Some(v)) => sim.landmark_count = v,
        Ok(None) => {}
        Err(e) => return usage_error(&e),
    }

    let trajectory = match make_trajectory(kind, frames, &sim) {
        Ok(t) => t,
        Err(e) => return data_error(e),
    };
    let scene = make_scene(seed, &sim);
    let rig = synthetic_rig(320, 240, 80.0);
    if let Err(e) = write_dataset(&out, &scene, &rig, &Pose::identity(), &trajectory, &sim) {
        return data_error(e);
    }
    println!("wrote {frames}-frame dataset to {}", out.display());
    println!("ground truth: {}", out.join("gt.txt").display());
    EXIT_OK
}

fn run(args: &[String]) -> i32 {
    let flags = match parse_flags(args, &["no-cross-view"]) {
        Ok(f) => f,
        Err(e) => return usage_error(&e),
    };
    let dataset = match flags.required("dataset") {
        Ok(d) => PathBuf::from(d),
        Err(e) => return usage_error(&e),
    };
    let out = match flags.required("out") {
        Ok(o) => PathBuf::from(o),
        Err(e) => return usage_error(&e),
    };

    let mut cfg = PipelineConfig::new();
    if let Some(path) = flags.get("config") {
        if let Err(e) = cfg.apply_file(Path::new(path)) {
            return data_error(e);
        }
    }
    if let Some(views) = flags.get("views") {
        let parsed: Result<Vec<usize>, _> = views.split(',').map(|v| v.trim().parse()).collect();
        match parsed {
            Ok(list) if !list.is_empty() && list.iter().all(|v| (1..=VIEW_COUNT).contains(v)) => {
                cfg.tracking.active_views = list;
            }
            _ => return usage_error(&format!("bad --views list {views:?}")),
        }
    }
    if flags.has("no-cross-view") {
        cfg.tracking.cross_view_enabled = false;
    }

    let stream = match ingest_dataset(&dataset) {
        Ok(s) => s,
        Err(e) => return data_error(e),
    };
    match run_odometry(&stream, &cfg) {
        Ok(trajectory) => {
            if let Err(e) = trajectory.save(&out) {
                return data_error(e);
            }
            println!("wrote {} poses to {}", trajectory.len(), out.display());
            EXIT_OK
        }
        Err(PipelineError::TrackingLost { frame_index, source, partial }) => {
            eprintln!("tracking lost at frame {frame_index}: {source}");
            if let Err(e) = partial.save(&out) {
                return data_error(e);
            }
            eprintln!("wrote partial trajectory ({} poses) to {}", partial.len(), out.display());
            EXIT_TRACKING_LOST
        }
        Err(e) => data_error(e),
    }
}

fn evaluate(args: &[String]) -> i32 {
    let flags = match parse_flags(args, &[]) {
        Ok(f) => f,
        Err(e) => return usage_error(&e),
    };
    let (est_path, gt_path) = match (flags.required("est"), flags.required("gt")) {
        (Ok(e), Ok(g)) => (PathBuf::from(e), PathBuf::from(g)),
        (Err(e), _) | (_, Err(e)) => return usage_error(&e),
    };
    let est = match Trajectory::load(&est_path) {
        Ok(t) => t,
        Err(e) => return data_error(e),
    };
    let gt = match Trajectory::load(&gt_path) {
        Ok(t) => t,
        Err(e) => return data_error(e),
    };
    let rmse = match ate_rmse(&est, &gt) {
        Ok(r) => r,
        Err(e) => return data_error(e),
    };
    println!("ATE RMSE [m]: {rmse:.6}");
    if let Some(plot) = flags.get("plot") {
        if let Err(e) = write_topdown_svg(&[("estimate", &est), ("ground truth", &gt)], Path::new(plot)) {
            return data_error(e);
        }
        println!("wrote plot to {plot}");
    }
    EXIT_OK
}
