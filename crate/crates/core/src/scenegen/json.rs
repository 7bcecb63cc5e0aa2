use serde::{Deserialize, Serialize};

use super::SceneAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{Box3D, CameraModel};

/// Upper bound on boxes in one annotation.
pub const MAX_SCENE_BOXES: usize = 256;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneJson {
    scene_id: String,
    description_tokens: Vec<String>,
    cameras: Vec<CameraJson>,
    road_polygons: Vec<Vec<[f64; 2]>>,
    boxes: Vec<BoxJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraJson {
    name: String,
    intrinsics: [f64; 9],
    extrinsics: [f64; 16],
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxJson {
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
    category: String,
}

fn schema(path: String, message: impl ToString) -> Error {
    Error::Schema { path, message: message.to_string() }
}

impl SceneJson {
    fn from_scene(s: &SceneAnnotation) -> Self {
        Self {
            scene_id: s.scene_id.clone(),
            description_tokens: s.description_tokens.clone(),
            cameras: s
                .cameras
                .iter()
                .map(|c| CameraJson {
                    name: c.name.clone(),
                    intrinsics: std::array::from_fn(|i| c.intrinsics[i / 3][i % 3]),
                    extrinsics: std::array::from_fn(|i| c.extrinsics[i / 4][i % 4]),
                    width: c.width,
                    height: c.height,
                })
                .collect(),
            road_polygons: s.road_polygons.clone(),
            boxes: s
                .boxes
                .iter()
                .map(|b| BoxJson { center: b.center, size: b.size, yaw: b.yaw, category: b.category.clone() })
                .collect(),
        }
    }

    fn into_scene(self, prefix: &str) -> Result<SceneAnnotation> {
        let at = |rest: &str| format!("{prefix}{rest}");
        if self.cameras.is_empty() {
            return Err(schema(at(".cameras"), "at least one camera is required"));
        }
        if self.description_tokens.is_empty() {
            return Err(schema(at(".description_tokens"), "at least one token is required"));
        }
        if self.boxes.len() > MAX_SCENE_BOXES {
            return Err(schema(at(".boxes"), format!("more than {MAX_SCENE_BOXES} boxes")));
        }
        let mut cameras = Vec::with_capacity(self.cameras.len());
        for (i, c) in self.cameras.into_iter().enumerate() {
            if cameras.iter().any(|p: &CameraModel| p.name == c.name) {
                return Err(schema(at(&format!(".cameras[{i}].name")), format!("duplicate camera `{}`", c.name)));
            }
            let k = std::array::from_fn(|r| std::array::from_fn(|col| c.intrinsics[r * 3 + col]));
            let e = std::array::from_fn(|r| std::array::from_fn(|col| c.extrinsics[r * 4 + col]));
            let cam = CameraModel::new(&c.name, k, e, c.width, c.height)
                .map_err(|err| schema(at(&format!(".cameras[{i}]")), err))?;
            cameras.push(cam);
        }
        for (i, poly) in self.road_polygons.iter().enumerate() {
            if poly.len() < 3 {
                return Err(schema(at(&format!(".road_polygons[{i}]")), "polygon needs at least 3 vertices"));
            }
            if poly.iter().flatten().any(|v| !v.is_finite()) {
                return Err(schema(at(&format!(".road_polygons[{i}]")), "non-finite vertex"));
            }
        }
        let boxes = self
            .boxes
            .into_iter()
            .enumerate()
            .map(|(i, b)| {
                Box3D::new(b.center, b.size, b.yaw, &b.category).map_err(|err| schema(at(&format!(".boxes[{i}]")), err))
            })
            .collect::<Result<_>>()?;
        Ok(SceneAnnotation {
            scene_id: self.scene_id,
            description_tokens: self.description_tokens,
            cameras,
            road_polygons: self.road_polygons,
            boxes,
        })
    }
}

fn deserialize<'de, T: Deserialize<'de>>(text: &'de str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        schema(if path == "." { "$".into() } else { format!("${}", dotted(&path)) }, inner)
    })
}

fn dotted(path: &str) -> String {
    if path.starts_with('[') {
        path.to_string()
    } else {
        format!(".{path}")
    }
}

pub fn scene_from_json(text: &str) -> Result<SceneAnnotation> {
    deserialize::<SceneJson>(text)?.into_scene("$")
}

/// Parses either a single scene object or a list of scenes. Error paths are
/// rooted at `$`, e.g. `$[3].boxes[0].size`.
pub fn parse_scenes(text: &str) -> Result<Vec<SceneAnnotation>> {
    if text.trim_start().starts_with('[') {
        let raw: Vec<SceneJson> = deserialize(text)?;
        raw.into_iter().enumerate().map(|(i, s)| s.into_scene(&format!("$[{i}]"))).collect()
    } else {
        Ok(vec![scene_from_json(text)?])
    }
}

pub fn scene_to_json(scene: &SceneAnnotation) -> String {
    serde_json::to_string_pretty(&SceneJson::from_scene(scene)).expect("scene serializes")
}

pub fn scenes_to_json(scenes: &[SceneAnnotation]) -> String {
    let raw: Vec<SceneJson> = scenes.iter().map(SceneJson::from_scene).collect();
    serde_json::to_string_pretty(&raw).expect("scene serializes")
}
