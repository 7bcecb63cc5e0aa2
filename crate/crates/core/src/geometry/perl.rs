use super::boxes::Box3D;
use super::camera::CameraModel;
use super::mask::{downsample_mask, Mask};
use super::raster::{rasterize_box_mask, rasterize_road_mask, Polygon};
use crate::error::Result;

/// Road and per-box masking maps for one camera.
///
/// Valid slots come first, ordered nearest box center first; padded slots
/// are all-zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PerLMaskSet {
    pub road: Mask,
    pub boxes: Vec<Mask>,
    pub valid: Vec<bool>,
    /// Scene box index held by each slot.
    pub source: Vec<Option<usize>>,
}

impl PerLMaskSet {
    /// Rasterizes every box, drops those invisible in `cam`, and keeps the
    /// `max_boxes` nearest by camera depth of the box center.
    pub fn build(boxes: &[Box3D], road: &[Polygon], cam: &CameraModel, max_boxes: usize) -> Self {
        let mut visible: Vec<(f64, usize, Mask)> = boxes
            .iter()
            .enumerate()
            .filter_map(|(i, b)| {
                let m = rasterize_box_mask(b, cam);
                (!m.is_empty()).then(|| (cam.world_to_camera(b.center)[2], i, m))
            })
            .collect();
        visible.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        visible.truncate(max_boxes);
        let mut set = Self::empty(cam.height, cam.width, max_boxes);
        set.road = rasterize_road_mask(road, cam);
        for (slot, (_, idx, m)) in visible.into_iter().enumerate() {
            set.boxes[slot] = m;
            set.valid[slot] = true;
            set.source[slot] = Some(idx);
        }
        set
    }

    pub fn empty(height: usize, width: usize, max_boxes: usize) -> Self {
        Self {
            road: Mask::zeros(height, width),
            boxes: vec![Mask::zeros(height, width); max_boxes],
            valid: vec![false; max_boxes],
            source: vec![None; max_boxes],
        }
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn height(&self) -> usize {
        self.road.height
    }

    pub fn width(&self) -> usize {
        self.road.width
    }

    pub fn downsample(&self, factor: usize) -> Result<Self> {
        Ok(Self {
            road: downsample_mask(&self.road, factor)?,
            boxes: self.boxes.iter().map(|m| downsample_mask(m, factor)).collect::<Result<_>>()?,
            valid: self.valid.clone(),
            source: self.source.clone(),
        })
    }

    /// Road mask as an `HW` column.
    pub fn road_column(&self) -> Vec<f64> {
        self.road.data.clone()
    }

    /// Box masks as an `HW x M` row-major matrix.
    pub fn box_matrix(&self) -> Vec<f64> {
        let hw = self.road.data.len();
        let m = self.boxes.len();
        let mut out = vec![0.0; hw * m];
        for (j, mask) in self.boxes.iter().enumerate() {
            for (p, &v) in mask.data.iter().enumerate() {
                out[p * m + j] = v;
            }
        }
        out
    }
}
