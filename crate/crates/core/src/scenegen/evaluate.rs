use serde::{Deserialize, Serialize};

use super::palette::{dist, to_signed, Palette, ROAD_GRAY};
use super::render::{render_layers, RgbImage};
use super::SceneAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{mat3_t_vec, rasterize_box_mask};

/// Box instances smaller than this (in owned pixels) are not scored.
pub const MIN_INSTANCE_PIXELS: usize = 6;
/// Lateral image-space shift applied by the translation probe.
pub const PROBE_SHIFT_PIXELS: f64 = 8.0;
const PROBE_MARGIN: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub category_accuracy: f64,
    pub mean_mask_iou: f64,
    pub translation_response_rate: f64,
    pub road_iou: f64,
}

/// Raw tallies for one scene; ratios are formed by [`SceneReport::metrics`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene_id: String,
    pub instances: usize,
    pub category_credit: f64,
    pub iou_sum: f64,
    pub road_views: usize,
    pub road_iou_sum: f64,
    pub translation_trials: usize,
    pub translation_hits: usize,
}

fn ratio(num: f64, den: usize) -> f64 {
    // nothing to score counts as satisfied
    if den == 0 {
        1.0
    } else {
        num / den as f64
    }
}

impl SceneReport {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            category_accuracy: ratio(self.category_credit, self.instances),
            mean_mask_iou: ratio(self.iou_sum, self.instances),
            translation_response_rate: ratio(self.translation_hits as f64, self.translation_trials),
            road_iou: ratio(self.road_iou_sum, self.road_views),
        }
    }

    pub fn record_translation(&mut self, moved_correctly: bool) {
        self.translation_trials += 1;
        self.translation_hits += moved_correctly as usize;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllabilityReport {
    pub aggregate: Metrics,
    pub scenes: Vec<SceneReport>,
}

impl ControllabilityReport {
    /// Pools tallies across scenes (instance-weighted).
    pub fn from_scenes(scenes: Vec<SceneReport>) -> Self {
        let mut total = SceneReport::default();
        for s in &scenes {
            total.instances += s.instances;
            total.category_credit += s.category_credit;
            total.iou_sum += s.iou_sum;
            total.road_views += s.road_views;
            total.road_iou_sum += s.road_iou_sum;
            total.translation_trials += s.translation_trials;
            total.translation_hits += s.translation_hits;
        }
        Self { aggregate: total.metrics(), scenes }
    }
}

fn iou(pred: &[bool], target: &[bool]) -> Option<f64> {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.iter().zip(target) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    (union > 0).then(|| inter as f64 / union as f64)
}

/// Scores one scene's generated views (ordered as `scene.cameras`) against its annotation.
///
/// Per box and camera with enough visible pixels: the majority nearest
/// palette color over the box's visible region decides the category (ties
/// split credit evenly), and the color segment of its category, minus pixels
/// of other same-category boxes, is compared with that region by IoU. Road
/// IoU compares the road-gray segment with the unoccluded road mask.
pub fn evaluate_controllability(images: &[RgbImage], scene: &SceneAnnotation, palette: &Palette) -> Result<SceneReport> {
    if images.len() != scene.cameras.len() {
        return Err(Error::Shape(format!("{} images for {} cameras", images.len(), scene.cameras.len())));
    }
    let threshold = palette.threshold();
    let gray = to_signed(ROAD_GRAY);
    let mut report = SceneReport { scene_id: scene.scene_id.clone(), ..Default::default() };
    for (img, cam) in images.iter().zip(&scene.cameras) {
        if (img.height, img.width) != (cam.height, cam.width) {
            return Err(Error::Shape(format!(
                "image {}x{} for camera `{}` of size {}x{}",
                img.height, img.width, cam.name, cam.height, cam.width
            )));
        }
        let layers = render_layers(scene, cam, palette)?;
        let hw = cam.height * cam.width;
        let pixels: Vec<[f64; 3]> = (0..hw).map(|p| img.pixel(p / cam.width, p % cam.width)).collect();
        let nearest: Vec<usize> = pixels.iter().map(|&px| palette.nearest(px)).collect();

        for (idx, b) in scene.boxes.iter().enumerate() {
            let owned: Vec<bool> = layers.owner.iter().map(|o| *o == Some(idx)).collect();
            let area = owned.iter().filter(|&&o| o).count();
            if area < MIN_INSTANCE_PIXELS {
                continue;
            }
            let cat = palette.index_of(&b.category).ok_or_else(|| Error::UnknownToken(b.category.clone()))?;
            let mut votes = vec![0usize; palette.len()];
            for p in (0..hw).filter(|&p| owned[p]) {
                votes[nearest[p]] += 1;
            }
            let top = *votes.iter().max().expect("non-empty palette");
            let tied = votes.iter().filter(|&&v| v == top).count();
            report.instances += 1;
            if votes[cat] == top {
                report.category_credit += 1.0 / tied as f64;
            }
            let pred: Vec<bool> = (0..hw)
                .map(|p| {
                    let other_same = layers.owner[p]
                        .is_some_and(|o| o != idx && scene.boxes[o].category == b.category);
                    !other_same && palette.matches(cat, pixels[p])
                })
                .collect();
            report.iou_sum += iou(&pred, &owned).unwrap_or(0.0);
        }

        let road_target: Vec<bool> = (0..hw).map(|p| layers.road.data[p] > 0.0 && layers.owner[p].is_none()).collect();
        let road_pred: Vec<bool> = pixels.iter().map(|&px| dist(px, gray) < threshold).collect();
        if let Some(v) = iou(&road_pred, &road_target) {
            report.road_views += 1;
            report.road_iou_sum += v;
        }
    }
    Ok(report)
}

/// A lateral perturbation of one box, as seen from one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslationProbe {
    pub box_index: usize,
    pub camera_index: usize,
    pub category: usize,
    /// `+1.0` when the box should move right in the image, `-1.0` for left.
    pub direction: f64,
    pub shifted: SceneAnnotation,
    /// Inclusive pixel window `(row_lo, row_hi, col_lo, col_hi)` covering both placements.
    pub window: (usize, usize, usize, usize),
}

/// Picks the most visible box instance and moves it toward the image center
/// by [`PROBE_SHIFT_PIXELS`] at its depth. `None` if nothing is visible enough.
pub fn translation_probe(scene: &SceneAnnotation, palette: &Palette) -> Result<Option<TranslationProbe>> {
    let mut best: Option<(usize, usize, usize)> = None;
    for (ci, cam) in scene.cameras.iter().enumerate() {
        let layers = render_layers(scene, cam, palette)?;
        for bi in 0..scene.boxes.len() {
            let area = layers.owner.iter().filter(|o| **o == Some(bi)).count();
            if area >= MIN_INSTANCE_PIXELS && best.is_none_or(|(a, _, _)| area > a) {
                best = Some((area, ci, bi));
            }
        }
    }
    let Some((_, ci, bi)) = best else { return Ok(None) };
    let cam = &scene.cameras[ci];
    let b = &scene.boxes[bi];
    let local = cam.world_to_camera(b.center);
    let u = cam.camera_to_pixel(local)[0];
    let direction = if u <= cam.cx() { 1.0 } else { -1.0 };
    let dx = direction * PROBE_SHIFT_PIXELS * local[2] / cam.fx();
    let offset = mat3_t_vec(&cam.rotation(), [dx, 0.0, 0.0]);
    let mut shifted = scene.clone();
    for k in 0..3 {
        shifted.boxes[bi].center[k] += offset[k];
    }

    let before = rasterize_box_mask(b, cam);
    let after = rasterize_box_mask(&shifted.boxes[bi], cam);
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for p in 0..cam.height * cam.width {
        if before.data[p] > 0.0 || after.data[p] > 0.0 {
            let (r, c) = (p / cam.width, p % cam.width);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
    }
    let window = (
        r0.saturating_sub(PROBE_MARGIN),
        (r1 + PROBE_MARGIN).min(cam.height - 1),
        c0.saturating_sub(PROBE_MARGIN),
        (c1 + PROBE_MARGIN).min(cam.width - 1),
    );
    let category = palette.index_of(&b.category).ok_or_else(|| Error::UnknownToken(b.category.clone()))?;
    Ok(Some(TranslationProbe { box_index: bi, camera_index: ci, category, direction, shifted, window }))
}

fn category_centroid_x(img: &RgbImage, probe: &TranslationProbe, palette: &Palette) -> Option<f64> {
    let (r0, r1, c0, c1) = probe.window;
    let (mut sum, mut n) = (0.0, 0usize);
    for r in r0..=r1 {
        for c in c0..=c1 {
            if palette.matches(probe.category, img.pixel(r, c)) {
                sum += c as f64 + 0.5;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Whether the category-colored centroid inside the probe window moved the
/// same way as the box. Missing color on either side counts as no response.
pub fn translation_response(probe: &TranslationProbe, before: &RgbImage, after: &RgbImage, palette: &Palette) -> bool {
    match (category_centroid_x(before, probe, palette), category_centroid_x(after, probe, palette)) {
        (Some(a), Some(b)) => (b - a) * probe.direction > 0.0,
        _ => false,
    }
}
