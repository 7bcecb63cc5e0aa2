use super::palette::{background_for, brighten, to_signed, Palette, ROAD_GRAY};
use super::SceneAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{fill_convex, projected_box_hull, rasterize_road_mask, CameraModel, Mask, Point2};

/// Row-major `H x W x 3` image with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self { height, width, data }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!("{} values for a {height}x{width} RGB image", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel-first copy, `3 x H x W`.
    pub fn to_planar(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                out[c * hw + p] = self.data[p * 3 + c];
            }
        }
        out
    }

    pub fn from_planar(height: usize, width: usize, planar: &[f64]) -> Result<Self> {
        let hw = height * width;
        if planar.len() != 3 * hw {
            return Err(Error::Shape(format!("{} planar values for {height}x{width}", planar.len())));
        }
        let mut data = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                data[p * 3 + c] = planar[c * hw + p];
            }
        }
        Ok(Self { height, width, data })
    }
}

/// A render plus the bookkeeping the evaluator needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderLayers {
    pub image: RgbImage,
    pub road: Mask,
    /// Scene box index painted last at each pixel.
    pub owner: Vec<Option<usize>>,
    /// Full (unoccluded) mask of each scene box.
    pub box_masks: Vec<Mask>,
}

impl RenderLayers {
    pub fn owned_mask(&self, box_index: usize) -> Mask {
        let mut m = Mask::zeros(self.image.height, self.image.width);
        for (p, o) in self.owner.iter().enumerate() {
            if *o == Some(box_index) {
                m.data[p] = 1.0;
            }
        }
        m
    }
}

fn segment_distance(a: Point2, b: Point2, p: Point2) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Pixels within this distance of the front edge take the bright shade.
const EDGE_HALF_WIDTH: f64 = 0.75;

/// Background, road, and boxes painted far to near; the hull edge nearest
/// the projected front-face center is drawn in the brightened color.
pub fn render_layers(scene: &SceneAnnotation, cam: &CameraModel, palette: &Palette) -> Result<RenderLayers> {
    let (h, w) = (cam.height, cam.width);
    let mut image = RgbImage::filled(h, w, to_signed(background_for(&scene.description_tokens)));
    let road = rasterize_road_mask(&scene.road_polygons, cam);
    let gray = to_signed(ROAD_GRAY);
    for (p, &v) in road.data.iter().enumerate() {
        if v > 0.0 {
            image.set_pixel(p / w, p % w, gray);
        }
    }

    let mut order: Vec<(f64, usize)> =
        scene.boxes.iter().enumerate().map(|(i, b)| (cam.world_to_camera(b.center)[2], i)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));

    let mut owner = vec![None; h * w];
    let mut box_masks = vec![Mask::zeros(h, w); scene.boxes.len()];
    for (_, idx) in order {
        let b = &scene.boxes[idx];
        let color = palette.color(&b.category)?;
        let Some(hull) = projected_box_hull(b, cam) else { continue };
        let mask = fill_convex(&hull, h, w);
        let front = cam.project(b.local_to_world([b.size[0] / 2.0, 0.0, 0.0])).pixel;
        let edge = front.map(|f| {
            (0..hull.len())
                .map(|i| (hull[i], hull[(i + 1) % hull.len()]))
                .min_by(|x, y| segment_distance(x.0, x.1, f).total_cmp(&segment_distance(y.0, y.1, f)))
                .expect("hull has edges")
        });
        let (plain, bright) = (to_signed(color), to_signed(brighten(color)));
        for (p, &v) in mask.data.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let (row, col) = (p / w, p % w);
            let centre = [col as f64 + 0.5, row as f64 + 0.5];
            let on_edge = edge.is_some_and(|(a, e)| segment_distance(a, e, centre) <= EDGE_HALF_WIDTH);
            image.set_pixel(row, col, if on_edge { bright } else { plain });
            owner[p] = Some(idx);
        }
        box_masks[idx] = mask;
    }
    Ok(RenderLayers { image, road, owner, box_masks })
}

/// Deterministic oracle image of `scene` seen from `cam`.
pub fn render_ground_truth(scene: &SceneAnnotation, cam: &CameraModel, palette: &Palette) -> Result<RgbImage> {
    render_layers(scene, cam, palette).map(|l| l.image)
}
