//! Gradient-based keypoint selection with LiDAR-attached depths.
//!
//! The image is tiled into blocks; each block contributes at most its
//! strongest-gradient pixel, gated by an adaptive threshold (block median
//! gradient plus a fixed offset) and by the availability of a depth sample
//! within a small search radius. The depth is attached at selection time and
//! held fixed for the keypoint's whole life.

use crate::association::SparseDepthMap;
use crate::geometry::{Image, Pixel};

/// Residual sampling pattern shared by tracking and bundle adjustment:
/// a spread 8-point neighborhood around the keypoint, index 0 the center.
pub const PATTERN: [[f64; 2]; 8] = [
    [0.0, 0.0],
    [-2.0, 0.0],
    [2.0, 0.0],
    [0.0, -2.0],
    [0.0, 2.0],
    [-1.0, -1.0],
    [1.0, -1.0],
    [-1.0, 1.0],
];

/// Border margin a keypoint needs so the whole pattern stays inside the valid
/// bilinear sampling region (pattern radius 2 plus the 1-pixel margin).
pub const PATTERN_MARGIN: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct KeypointConfig {
    /// Selection block edge length in pixels.
    pub block_size: u32,
    /// Offset added to the block median gradient to form the threshold.
    pub gradient_offset: f64,
    /// Depth search radius around a candidate pixel.
    pub depth_radius: f64,
    /// Hard cap on keypoints per view.
    pub max_points: usize,
}

impl Default for KeypointConfig {
    fn default() -> Self {
        Self { block_size: 32, gradient_offset: 7.0, depth_radius: 2.0, max_points: 400 }
    }
}

/// A selected pixel with fixed depth and its host intensity pattern.
#[derive(Debug, Clone)]
pub struct Keypoint {
    /// Host view index, 1-based.
    pub view: usize,
    pub pixel: Pixel,
    /// Depth in meters, attached from LiDAR at selection time.
    pub depth: f64,
    /// Intensities at `pixel + PATTERN[i]` in the host image.
    pub intensities: [f64; PATTERN.len()],
}

/// Gradient magnitude by central differences at an integer pixel.
fn gradient_magnitude(img: &Image, x: u32, y: u32) -> f64 {
    let gx = 0.5 * (img.get(x + 1, y) - img.get(x - 1, y));
    let gy = 0.5 * (img.get(x, y + 1) - img.get(x, y - 1));
    (gx * gx + gy * gy).sqrt()
}

/// Selects keypoints for one view. `image` and `depth` must refer to the same
/// view; the result is capped at `cfg.max_points` keeping the strongest
/// gradients.
pub fn select_keypoints(image: &Image, depth: &SparseDepthMap, cfg: &KeypointConfig) -> Vec<Keypoint> {
    let width = image.width();
    let height = image.height();
    let margin = PATTERN_MARGIN as u32;
    if width <= 2 * margin || height <= 2 * margin {
        return Vec::new();
    }
    let (x_min, x_max) = (margin, width - 1 - margin);
    let (y_min, y_max) = (margin, height - 1 - margin);

    let bs = cfg.block_size.max(1);
    let blocks_x = width.div_ceil(bs);
    let blocks_y = height.div_ceil(bs);

    let mut picked: Vec<(Keypoint, f64)> = Vec::new();
    let mut gradients: Vec<f64> = Vec::new();
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            let x_lo = (bx * bs).max(x_min);
            let x_hi = ((bx + 1) * bs - 1).min(x_max);
            let y_lo = (by * bs).max(y_min);
            let y_hi = ((by + 1) * bs - 1).min(y_max);
            if x_lo > x_hi || y_lo > y_hi {
                continue;
            }

            gradients.clear();
            let mut best: Option<(f64, u32, u32)> = None;
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let g = gradient_magnitude(image, x, y);
                    gradients.push(g);
                    if best.is_none_or(|(bg, _, _)| g > bg) {
                        best = Some((g, x, y));
                    }
                }
            }
            let Some((g_best, x, y)) = best else { continue };

            gradients.sort_unstable_by(f64::total_cmp);
            let median = gradients[gradients.len() / 2];
            let threshold = median + cfg.gradient_offset;
            if g_best < threshold {
                continue;
            }

            let pixel = Pixel::new(x as f64, y as f64);
            let Some(d) = depth.depth_lookup(&pixel, cfg.depth_radius) else { continue };

            let mut intensities = [0.0; PATTERN.len()];
            let mut valid = true;
            for (slot, offset) in intensities.iter_mut().zip(PATTERN.iter()) {
                match image.sample_bilinear(&Pixel::new(pixel.u + offset[0], pixel.v + offset[1])) {
                    Ok((value, _)) => *slot = value,
                    Err(_) => {
                        valid = false;
                        break;
                    }
                }
            }
            if !valid {
                continue;
            }
            picked.push((Keypoint { view: depth.view(), pixel, depth: d, intensities }, g_best));
        }
    }

    if picked.len() > cfg.max_points {
        // Keep the strongest gradients; ties resolved by block scan order.
        let mut indexed: Vec<(usize, f64)> = picked.iter().map(|(_, g)| *g).enumerate().collect();
        indexed.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let keep: std::collections::BTreeSet<usize> = indexed.into_iter().take(cfg.max_points).map(|(i, _)| i).collect();
        picked = picked
            .into_iter()
            .enumerate()
            .filter(|(i, _)| keep.contains(i))
            .map(|(_, kp)| kp)
            .collect();
    }

    picked.into_iter().map(|(kp, _)| kp).collect()
}
