//! Rasterization of projected boxes and ground-plane road polygons.
//!
//! Pixel `(row, col)` is sampled at its center `(col + 0.5, row + 0.5)`.
//! Box hulls include their boundary; road polygons use the even-odd rule.

use super::boxes::{box_corners, Box3D, BOX_EDGES};
use super::camera::{mat3_t_vec, CameraModel, Vec3};
use super::mask::Mask;

pub type Point2 = [f64; 2];
/// Simple polygon on the ground plane `z = 0`, world x/y coordinates.
pub type Polygon = Vec<Point2>;

fn cross2(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull by monotone chain, positively oriented, collinear points dropped.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross2(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Fills a positively oriented convex polygon, boundary inclusive.
pub fn fill_convex(hull: &[Point2], height: usize, width: usize) -> Mask {
    let mut mask = Mask::zeros(height, width);
    if hull.len() < 3 {
        return mask;
    }
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in hull {
        umin = umin.min(p[0]);
        umax = umax.max(p[0]);
        vmin = vmin.min(p[1]);
        vmax = vmax.max(p[1]);
    }
    let col_lo = (umin - 0.5).ceil().max(0.0) as usize;
    let row_lo = (vmin - 0.5).ceil().max(0.0) as usize;
    let col_hi = ((umax - 0.5).floor().min(width as f64 - 1.0)).max(-1.0);
    let row_hi = ((vmax - 0.5).floor().min(height as f64 - 1.0)).max(-1.0);
    if col_hi < 0.0 || row_hi < 0.0 {
        return mask;
    }
    for row in row_lo..=row_hi as usize {
        for col in col_lo..=col_hi as usize {
            let p = [col as f64 + 0.5, row as f64 + 0.5];
            let inside = (0..hull.len()).all(|i| cross2(hull[i], hull[(i + 1) % hull.len()], p) >= 0.0);
            if inside {
                mask.set(row, col, 1.0);
            }
        }
    }
    mask
}

/// Camera-space vertices of the box clipped to `z >= near_plane`.
pub fn clipped_box_vertices(b: &Box3D, cam: &CameraModel) -> Vec<Vec3> {
    let near = cam.near_plane;
    let corners = box_corners(b).map(|p| cam.world_to_camera(p));
    let mut out = Vec::with_capacity(24);
    for c in corners {
        if c[2] >= near {
            out.push(c);
        }
    }
    for (i, j) in BOX_EDGES {
        let (a, b) = (corners[i], corners[j]);
        if (a[2] < near) != (b[2] < near) {
            let t = (near - a[2]) / (b[2] - a[2]);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), near]);
        }
    }
    out
}

/// Image-plane hull of the near-clipped box, or `None` if nothing survives clipping.
pub fn projected_box_hull(b: &Box3D, cam: &CameraModel) -> Option<Vec<Point2>> {
    let verts = clipped_box_vertices(b, cam);
    if verts.is_empty() {
        return None;
    }
    let pts: Vec<Point2> = verts.iter().map(|&v| cam.camera_to_pixel(v)).collect();
    let hull = convex_hull(&pts);
    (hull.len() >= 3).then_some(hull)
}

/// Binary mask of the filled convex hull of the projected, near-clipped box.
pub fn rasterize_box_mask(b: &Box3D, cam: &CameraModel) -> Mask {
    match projected_box_hull(b, cam) {
        Some(hull) => fill_convex(&hull, cam.height, cam.width),
        None => Mask::zeros(cam.height, cam.width),
    }
}

/// Maps homogeneous pixel coordinates to ground-plane points.
struct GroundHomography {
    rows: [Vec3; 3],
    camera_height: f64,
}

impl GroundHomography {
    fn new(cam: &CameraModel) -> Self {
        // ray direction in world = R^T K^-1 p; columns of K^-1 applied first
        let kinv = [
            [1.0 / cam.fx(), 0.0, -cam.cx() / cam.fx()],
            [0.0, 1.0 / cam.fy(), -cam.cy() / cam.fy()],
            [0.0, 0.0, 1.0],
        ];
        let r = cam.rotation();
        let mut a = [[0.0; 3]; 3];
        for j in 0..3 {
            let col = mat3_t_vec(&r, [kinv[0][j], kinv[1][j], kinv[2][j]]);
            for i in 0..3 {
                a[i][j] = col[i];
            }
        }
        let c = cam.center();
        let row = |k: usize| std::array::from_fn(|j| c[k] * a[2][j] - c[2] * a[k][j]);
        Self { rows: [row(0), row(1), a[2]], camera_height: c[2] }
    }

    /// Ground point and camera depth of the ray through `pixel`.
    fn map(&self, pixel: Point2) -> (Point2, f64) {
        let p = [pixel[0], pixel[1], 1.0];
        let dot = |r: &Vec3| r[0] * p[0] + r[1] * p[1] + r[2];
        let w = dot(&self.rows[2]);
        let depth = -self.camera_height / w;
        ([dot(&self.rows[0]) / w, dot(&self.rows[1]) / w], depth)
    }
}

/// Winding number of `polygon` around `p`.
fn winding_number(polygon: &[Point2], p: Point2) -> i32 {
    let mut wn = 0;
    for i in 0..polygon.len() {
        let (a, b) = (polygon[i], polygon[(i + 1) % polygon.len()]);
        if a[1] <= p[1] {
            if b[1] > p[1] && cross2(a, b, p) > 0.0 {
                wn += 1;
            }
        } else if b[1] <= p[1] && cross2(a, b, p) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Pixels whose ray meets the ground in front of the near plane inside any polygon.
pub fn rasterize_road_mask(polygons: &[Polygon], cam: &CameraModel) -> Mask {
    let mut mask = Mask::zeros(cam.height, cam.width);
    if polygons.iter().all(|p| p.len() < 3) {
        return mask;
    }
    let hom = GroundHomography::new(cam);
    for row in 0..cam.height {
        for col in 0..cam.width {
            let (g, depth) = hom.map([col as f64 + 0.5, row as f64 + 0.5]);
            if !(depth > cam.near_plane) || !g[0].is_finite() || !g[1].is_finite() {
                continue;
            }
            if polygons.iter().any(|poly| poly.len() >= 3 && winding_number(poly, g) % 2 != 0) {
                mask.set(row, col, 1.0);
            }
        }
    }
    mask
}
