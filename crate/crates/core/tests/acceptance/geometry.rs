//! Per-pixel oracles for the box and road masks, computed from the raw camera
//! matrices by casting one ray per pixel center.

use std::f64::consts::PI;

use perldiff::geometry::{rasterize_box_mask, rasterize_road_mask, Box3D, CameraModel, Mask, Point2, Polygon};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const CASES: usize = 250;
/// Pixel-center offset used to decide whether a pixel sits on a boundary.
const PROBE: f64 = 1e-6;

/// Camera center and world-frame direction of the ray through `pixel`,
/// scaled so that the ray parameter equals camera depth.
fn ray(cam: &CameraModel, pixel: Point2) -> ([f64; 3], [f64; 3]) {
    let k = &cam.intrinsics;
    let e = &cam.extrinsics;
    let d = [(pixel[0] - k[0][2]) / k[0][0], (pixel[1] - k[1][2]) / k[1][1], 1.0];
    // world = Rᵀ (x_cam - T)
    let rt = |v: [f64; 3]| -> [f64; 3] { std::array::from_fn(|j| (0..3).map(|i| e[i][j] * v[i]).sum()) };
    (rt([-e[0][3], -e[1][3], -e[2][3]]), rt(d))
}

fn box_oracle(b: &Box3D, cam: &CameraModel, pixel: Point2) -> bool {
    let (c, r) = ray(cam, pixel);
    let (s, co) = b.yaw.sin_cos();
    let to_local = |v: [f64; 3]| [co * v[0] + s * v[1], -s * v[0] + co * v[1], v[2]];
    let o = to_local([c[0] - b.center[0], c[1] - b.center[1], c[2] - b.center[2]]);
    let dir = to_local(r);
    let (mut lo, mut hi) = (cam.near_plane, f64::INFINITY);
    for i in 0..3 {
        let half = b.size[i] / 2.0;
        if dir[i] == 0.0 {
            if o[i].abs() > half {
                return false;
            }
            continue;
        }
        let (a, z) = ((-half - o[i]) / dir[i], (half - o[i]) / dir[i]);
        lo = lo.max(a.min(z));
        hi = hi.min(a.max(z));
    }
    lo <= hi
}

/// Crossing-number point-in-polygon test.
fn crossings_odd(poly: &[Point2], p: Point2) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn road_oracle(polys: &[Polygon], cam: &CameraModel, pixel: Point2) -> bool {
    let (c, r) = ray(cam, pixel);
    if r[2] == 0.0 {
        return false;
    }
    let t = -c[2] / r[2];
    if !(t > cam.near_plane) {
        return false;
    }
    let g = [c[0] + t * r[0], c[1] + t * r[1]];
    polys.iter().any(|p| p.len() >= 3 && crossings_odd(p, g))
}

fn random_camera(rng: &mut ChaCha8Rng) -> CameraModel {
    let (w, h) = (rng.random_range(12..=64), rng.random_range(8..=48));
    let pos = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(0.3..4.0)];
    let yaw = rng.random_range(-PI..PI);
    let pitch = rng.random_range(-0.3..0.8);
    let hfov = rng.random_range(0.5..2.2);
    let mut cam = CameraModel::looking("cam", pos, yaw, pitch, hfov, w, h).expect("camera");
    cam.intrinsics[0][2] += rng.random_range(-3.0..3.0);
    cam.intrinsics[1][2] += rng.random_range(-3.0..3.0);
    cam.intrinsics[1][1] *= rng.random_range(0.8..1.25);
    cam
}

/// Boxes around the camera, some straddling or behind the near plane.
fn random_box(rng: &mut ChaCha8Rng, cam: &CameraModel) -> Box3D {
    let (c, fwd) = ray(cam, [cam.width as f64 / 2.0, cam.height as f64 / 2.0]);
    let along = rng.random_range(-3.0..15.0);
    let size = [rng.random_range(0.3..6.0), rng.random_range(0.3..3.0), rng.random_range(0.3..3.0)];
    let center = [
        c[0] + along * fwd[0] + rng.random_range(-4.0..4.0),
        c[1] + along * fwd[1] + rng.random_range(-4.0..4.0),
        size[2] / 2.0 + rng.random_range(-0.5..1.0),
    ];
    Box3D::new(center, size, rng.random_range(-PI..PI), "car").expect("box")
}

/// Star-shaped (hence simple) polygons, including concave ones.
fn random_polygons(rng: &mut ChaCha8Rng, cam: &CameraModel) -> Vec<Polygon> {
    let (c, fwd) = ray(cam, [cam.width as f64 / 2.0, cam.height as f64 / 2.0]);
    (0..rng.random_range(1..=3))
        .map(|_| {
            let along = rng.random_range(-10.0..20.0);
            let center = [c[0] + along * fwd[0], c[1] + along * fwd[1]];
            let n = rng.random_range(3..=10);
            let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            angles.sort_by(f64::total_cmp);
            angles
                .iter()
                .map(|a| {
                    let r = rng.random_range(0.5..15.0);
                    [center[0] + r * a.cos(), center[1] + r * a.sin()]
                })
                .collect()
        })
        .collect()
}

#[derive(Default)]
struct Tally {
    pixels: usize,
    disagree: usize,
    interior_disagree: usize,
    nonempty: usize,
    partial: usize,
}

impl Tally {
    fn add(&mut self, mask: &Mask, oracle: impl Fn(Point2) -> bool) {
        let mut ones = 0;
        for row in 0..mask.height {
            for col in 0..mask.width {
                let p = [col as f64 + 0.5, row as f64 + 0.5];
                let want = oracle(p);
                ones += want as usize;
                if (mask.get(row, col) == 1.0) != want {
                    self.disagree += 1;
                    let probes = [[PROBE, 0.0], [-PROBE, 0.0], [0.0, PROBE], [0.0, -PROBE]];
                    if probes.iter().all(|d| oracle([p[0] + d[0], p[1] + d[1]]) == want) {
                        self.interior_disagree += 1;
                    }
                }
            }
        }
        self.pixels += mask.height * mask.width;
        self.nonempty += (ones > 0) as usize;
        self.partial += (ones > 0 && ones < mask.height * mask.width) as usize;
    }

    fn agreement(&self) -> f64 {
        1.0 - self.disagree as f64 / self.pixels as f64
    }

    fn pass(&self) -> bool {
        self.agreement() >= 0.999 && self.interior_disagree == 0
    }

    fn show(&self, name: &str) -> String {
        format!(
            "{name}: {CASES} cases ({} non-empty, {} partial), agreement {:.6}, {} off-boundary disagreements",
            self.nonempty,
            self.partial,
            self.agreement(),
            self.interior_disagree
        )
    }
}

pub fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut boxes = Tally::default();
    let mut roads = Tally::default();
    for _ in 0..CASES {
        let cam = random_camera(&mut rng);
        let b = random_box(&mut rng, &cam);
        boxes.add(&rasterize_box_mask(&b, &cam), |p| box_oracle(&b, &cam, p));
        let polys = random_polygons(&mut rng, &cam);
        roads.add(&rasterize_road_mask(&polys, &cam), |p| road_oracle(&polys, &cam, p));
    }
    Outcome {
        pass: boxes.pass() && roads.pass(),
        detail: format!("{}; {}", boxes.show("box"), roads.show("road")),
    }
}
