use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::palette::DESCRIPTION_TOKENS;
use super::SceneAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{rasterize_box_mask, Box3D, CameraModel, Point2, Polygon};

/// Multi-camera rig mounted at the ego origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    /// `(name, yaw in degrees)`; positive yaw turns left.
    pub cameras: Vec<(String, f64)>,
    pub hfov_deg: f64,
    pub pitch_deg: f64,
    pub mount_height: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            cameras: vec![("front_right".into(), -50.0), ("front".into(), 0.0), ("front_left".into(), 50.0)],
            hfov_deg: 60.0,
            pitch_deg: 5.0,
            mount_height: 1.6,
            width: 48,
            height: 32,
        }
    }
}

impl RigConfig {
    pub fn build(&self) -> Result<Vec<CameraModel>> {
        if self.cameras.is_empty() {
            return Err(Error::InvalidArgument("rig needs at least one camera".into()));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(Error::InvalidArgument(format!("hfov {} out of (0, 180)", self.hfov_deg)));
        }
        self.cameras
            .iter()
            .map(|(name, yaw)| {
                CameraModel::looking(
                    name,
                    [0.0, 0.0, self.mount_height],
                    yaw.to_radians(),
                    self.pitch_deg.to_radians(),
                    self.hfov_deg.to_radians(),
                    self.width,
                    self.height,
                )
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub min_boxes: usize,
    pub max_boxes: usize,
    /// Range band in meters, measured from the ego origin, where boxes are placed.
    pub min_range: f64,
    pub max_range: f64,
    /// A box is kept only if some camera sees at least this many mask pixels.
    pub min_visible_pixels: usize,
    pub cross_road_probability: f64,
    pub rig: RigConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_boxes: 1,
            max_boxes: 6,
            min_range: 6.0,
            max_range: 28.0,
            min_visible_pixels: 12,
            cross_road_probability: 0.5,
            rig: RigConfig::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_boxes > self.max_boxes {
            return Err(Error::InvalidArgument("min_boxes exceeds max_boxes".into()));
        }
        if !(self.min_range > 0.0 && self.max_range > self.min_range) {
            return Err(Error::InvalidArgument("range band must satisfy 0 < min_range < max_range".into()));
        }
        if !(0.0..=1.0).contains(&self.cross_road_probability) {
            return Err(Error::InvalidArgument("cross_road_probability must lie in [0, 1]".into()));
        }
        self.rig.build().map(|_| ())
    }
}

/// Category, nominal (l, w, h) in meters.
const CATEGORY_SIZES: [(&str, [f64; 3]); 8] = [
    ("car", [4.5, 1.9, 1.6]),
    ("truck", [7.0, 2.5, 3.0]),
    ("bus", [11.0, 2.9, 3.3]),
    ("pedestrian", [0.7, 0.7, 1.75]),
    ("bicycle", [1.8, 0.6, 1.3]),
    ("motorcycle", [2.1, 0.8, 1.4]),
    ("barrier", [0.5, 2.5, 1.0]),
    ("traffic_cone", [0.4, 0.4, 0.9]),
];

const PLACEMENT_ATTEMPTS: usize = 40;
const CLEARANCE: f64 = 0.3;

struct Strip {
    origin: Point2,
    heading: f64,
    half_width: f64,
    start: f64,
    end: f64,
}

impl Strip {
    fn polygon(&self) -> Polygon {
        let (s, c) = self.heading.sin_cos();
        let at = |along: f64, across: f64| [self.origin[0] + along * c - across * s, self.origin[1] + along * s + across * c];
        vec![
            at(self.start, -self.half_width),
            at(self.end, -self.half_width),
            at(self.end, self.half_width),
            at(self.start, self.half_width),
        ]
    }

    /// Whether `p` is inside the strip with `margin` to spare on the sides.
    fn contains(&self, p: Point2, margin: f64) -> bool {
        let (s, c) = self.heading.sin_cos();
        let d = [p[0] - self.origin[0], p[1] - self.origin[1]];
        let along = d[0] * c + d[1] * s;
        let across = -d[0] * s + d[1] * c;
        along > self.start && along < self.end && across.abs() + margin <= self.half_width
    }
}

fn overlaps(a: &Box3D, b: &Box3D) -> bool {
    let inflate = |x: &Box3D| {
        let mut y = x.clone();
        y.size[0] += 2.0 * CLEARANCE;
        y.size[1] += 2.0 * CLEARANCE;
        y.footprint()
    };
    let (pa, pb) = (inflate(a), inflate(b));
    for poly in [&pa, &pb] {
        for i in 0..4 {
            let e = [poly[(i + 1) % 4][0] - poly[i][0], poly[(i + 1) % 4][1] - poly[i][1]];
            let axis = [-e[1], e[0]];
            let span = |q: &[[f64; 2]; 4]| {
                q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    let d = p[0] * axis[0] + p[1] * axis[1];
                    (lo.min(d), hi.max(d))
                })
            };
            let (a0, a1) = span(&pa);
            let (b0, b1) = span(&pb);
            if a1 < b0 || b1 < a0 {
                return false;
            }
        }
    }
    true
}

fn visible_anywhere(b: &Box3D, cameras: &[CameraModel], min_pixels: usize) -> bool {
    cameras.iter().any(|c| rasterize_box_mask(b, c).count_nonzero() >= min_pixels.max(1))
}

/// Deterministic pseudo-random scene for `seed`.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<SceneAnnotation> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cameras = config.rig.build()?;

    let main = Strip {
        origin: [0.0, rng.random_range(-2.0..2.0)],
        heading: rng.random_range(-0.25..0.25),
        half_width: rng.random_range(6.0..10.0),
        start: -20.0,
        end: 120.0,
    };
    let mut strips = vec![main];
    if rng.random_bool(config.cross_road_probability) {
        let along = rng.random_range(10.0..30.0);
        let h = strips[0].heading;
        let o = strips[0].origin;
        strips.push(Strip {
            origin: [o[0] + along * h.cos(), o[1] + along * h.sin()],
            heading: h + PI / 2.0,
            half_width: rng.random_range(4.0..7.0),
            start: -60.0,
            end: 60.0,
        });
    }

    let token = DESCRIPTION_TOKENS[rng.random_range(0..DESCRIPTION_TOKENS.len())].0;
    let target = rng.random_range(config.min_boxes..=config.max_boxes);
    let jitter = Normal::new(0.0, 0.15).expect("valid normal");
    let half_fov = config.rig.hfov_deg.to_radians() / 2.0;

    let mut boxes: Vec<Box3D> = Vec::with_capacity(target);
    for _ in 0..target {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (cat, nominal) = CATEGORY_SIZES[rng.random_range(0..CATEGORY_SIZES.len())];
            let size = nominal.map(|s| s * rng.random_range(0.9..1.1));
            let cam_yaw = config.rig.cameras[rng.random_range(0..config.rig.cameras.len())].1.to_radians();
            let bearing = cam_yaw + rng.random_range(-0.8..0.8) * half_fov;
            let range = rng.random_range(config.min_range..config.max_range);
            let flip = if rng.random_bool(0.5) { PI } else { 0.0 };
            let noise = jitter.sample(&mut rng);
            let xy = [range * bearing.cos(), range * bearing.sin()];
            let Some(strip) = strips.iter().find(|s| s.contains(xy, size[1] / 2.0)) else {
                continue;
            };
            let b = Box3D::new([xy[0], xy[1], size[2] / 2.0], size, strip.heading + flip + noise, cat)?;
            if boxes.iter().any(|o| overlaps(o, &b)) || !visible_anywhere(&b, &cameras, config.min_visible_pixels) {
                continue;
            }
            boxes.push(b);
            break;
        }
    }

    Ok(SceneAnnotation {
        scene_id: format!("scene_{seed:08}"),
        description_tokens: vec![token.to_string()],
        cameras,
        road_polygons: strips.iter().map(Strip::polygon).collect(),
        boxes,
    })
}

/// `count` scenes with seeds `first_seed, first_seed + 1, ...`.
pub fn generate_corpus(first_seed: u64, count: usize, config: &SceneConfig) -> Result<Vec<SceneAnnotation>> {
    (0..count as u64).map(|i| generate_scene(first_seed + i, config)).collect()
}
