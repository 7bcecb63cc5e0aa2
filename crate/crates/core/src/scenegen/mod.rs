//! Synthetic multi-view scenes: annotation schema, procedural generation,
//! deterministic ground-truth rendering, and the controllability evaluator.

mod evaluate;
mod generate;
mod json;
mod palette;
mod render;

pub use evaluate::{
    evaluate_controllability, translation_probe, translation_response, ControllabilityReport,
    Metrics, SceneReport, TranslationProbe,
};
pub use generate::{generate_corpus, generate_scene, RigConfig, SceneConfig};
pub use json::{parse_scenes, scene_from_json, scene_to_json, scenes_to_json};
pub use palette::{Palette, DESCRIPTION_TOKENS, ROAD_GRAY};
pub use render::{render_ground_truth, render_layers, RenderLayers, RgbImage};

use crate::geometry::{Box3D, CameraModel, Polygon};

/// One multi-view frame: cameras plus everything the generator is conditioned on.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneAnnotation {
    pub scene_id: String,
    pub description_tokens: Vec<String>,
    pub cameras: Vec<CameraModel>,
    pub road_polygons: Vec<Polygon>,
    pub boxes: Vec<Box3D>,
}

impl SceneAnnotation {
    pub fn camera(&self, name: &str) -> Option<&CameraModel> {
        self.cameras.iter().find(|c| c.name == name)
    }
}
