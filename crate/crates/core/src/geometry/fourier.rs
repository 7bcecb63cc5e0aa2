use std::f64::consts::PI;

use super::boxes::{box_corners, Box3D};
use super::camera::CameraModel;
use super::raster::Point2;
use crate::numerics::Tensor;

pub const FOURIER_BANDS: usize = 8;

/// Width of one box's embedding: 8 corners x 2 coords x (sin, cos) x bands.
pub const fn fourier_width(bands: usize) -> usize {
    8 * 2 * 2 * bands
}

/// Pixel positions of the eight box corners; `None` at or behind the near plane.
pub fn corner_pixels(b: &Box3D, cam: &CameraModel) -> [Option<Point2>; 8] {
    box_corners(b).map(|p| cam.project(p).pixel)
}

/// NeRF-style embedding of projected corners.
///
/// Each coordinate is normalized (u by width, v by height) and clamped to
/// `[0, 1]`; missing corners contribute `0`. Per box, scalars are laid out
/// corner-major, `u` before `v`, and each scalar expands to
/// `sin(2^k π x), cos(2^k π x)` for `k = 0..bands` in ascending order.
pub fn fourier_embed(corners: &[[Option<Point2>; 8]], cam: &CameraModel, bands: usize) -> Tensor {
    let width = fourier_width(bands);
    let rows = corners.len().max(1);
    let mut data = vec![0.0; rows * width];
    let (w, h) = (cam.width as f64, cam.height as f64);
    for (b, box_corners) in corners.iter().enumerate() {
        let row = &mut data[b * width..(b + 1) * width];
        for (c, corner) in box_corners.iter().enumerate() {
            let norm = corner.map_or([0.0, 0.0], |p| [(p[0] / w).clamp(0.0, 1.0), (p[1] / h).clamp(0.0, 1.0)]);
            for (axis, x) in norm.into_iter().enumerate() {
                let base = (c * 2 + axis) * 2 * bands;
                for k in 0..bands {
                    let arg = (1u64 << k) as f64 * PI * x;
                    row[base + 2 * k] = arg.sin();
                    row[base + 2 * k + 1] = arg.cos();
                }
            }
        }
    }
    if corners.is_empty() {
        // a single all-missing row keeps the tensor non-empty
        for (i, v) in data.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.0 } else { 1.0 };
        }
    }
    Tensor::from_parts(vec![rows, width], data)
}
