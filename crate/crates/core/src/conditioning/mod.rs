//! Trainable encoders that turn a scene annotation, seen from one camera,
//! into the token features and masks consumed by the controlling blocks.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{corner_pixels, fourier_embed, fourier_width, CameraModel, PerLMaskSet, FOURIER_BANDS};
use crate::numerics::layers::{conv, init_conv, init_linear, linear};
use crate::numerics::{Graph, ParameterStore, Tensor, Var};
use crate::scenegen::SceneAnnotation;

/// Default channels of the three stride-2 road-map convolutions.
pub const ROAD_CHANNELS: [usize; 3] = [8, 16, 32];

pub const EMBEDDING: &str = "cond.embedding";
pub const NULL_SCENE: &str = "cond.null_scene";
pub const NULL_OBJECT: &str = "cond.null_object";

/// Known description and category tokens, in embedding-row order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        for (i, t) in tokens.iter().enumerate() {
            if tokens[..i].contains(t) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token `{t}`")));
            }
        }
        if tokens.is_empty() {
            return Err(Error::EmptyTokens);
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, token: &str) -> Result<usize> {
        self.tokens.iter().position(|t| t == token).ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    /// `[1, V]` row averaging the embeddings of `tokens`.
    fn mean_selector(&self, tokens: &[String]) -> Result<Tensor> {
        if tokens.is_empty() {
            return Err(Error::EmptyTokens);
        }
        let mut row = vec![0.0; self.len()];
        for t in tokens {
            row[self.index(t)?] += 1.0 / tokens.len() as f64;
        }
        Tensor::matrix(1, self.len(), row)
    }
}

/// Sizes of the conditioning encoders.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderDims {
    /// Token feature width.
    pub channels: usize,
    /// Box slots per camera.
    pub max_boxes: usize,
    pub road_channels: [usize; 3],
}

pub fn init_encoders(store: &mut ParameterStore, vocab: &Vocabulary, dims: EncoderDims, rng: &mut impl Rng) -> Result<()> {
    let c = dims.channels;
    let noise = Normal::new(0.0, 0.02).expect("valid normal");
    let small = |n: usize, rng: &mut dyn rand::RngCore| (0..n).map(|_| noise.sample(rng)).collect::<Vec<f64>>();
    store.insert(EMBEDDING, Tensor::matrix(vocab.len(), c, small(vocab.len() * c, rng))?)?;
    store.insert(NULL_SCENE, Tensor::matrix(1, c, small(c, rng))?)?;
    store.insert(NULL_OBJECT, Tensor::matrix(1, c, small(c, rng))?)?;
    let mut cin = 1;
    for (i, &cout) in dims.road_channels.iter().enumerate() {
        init_conv(store, &format!("cond.road.conv{i}"), cin, cout, rng)?;
        cin = cout;
    }
    init_linear(store, "cond.road.proj", cin, c, rng)?;
    init_linear(store, "cond.box.fc1", fourier_width(FOURIER_BANDS) + c, c, rng)?;
    init_linear(store, "cond.box.fc2", c, c, rng)
}

/// Road-map feature `[1, C]`: three stride-2 convolutions with SiLU, global
/// average pooling, and a linear map.
pub fn encode_road_map_in(g: &mut Graph, store: &ParameterStore, road: &crate::geometry::Mask) -> Result<Var> {
    let mut x = g.constant(Tensor::new(&[1, road.height, road.width], road.data.clone())?);
    for i in 0..ROAD_CHANNELS.len() {
        let y = conv(g, store, &format!("cond.road.conv{i}"), x, 2)?;
        x = g.silu(y);
    }
    let d = g.dims(x).to_vec();
    let flat = g.reshape(x, &[d[0], d[1] * d[2]])?;
    let pooled = g.mean_last(flat);
    linear(g, store, "cond.road.proj", pooled)
}

/// Mean token embedding `[1, C]`.
pub fn encode_text_in(g: &mut Graph, store: &ParameterStore, vocab: &Vocabulary, tokens: &[String]) -> Result<Var> {
    let sel = g.constant(vocab.mean_selector(tokens)?);
    let table = g.param(store, EMBEDDING)?;
    g.matmul(sel, table)
}

/// Fused box tokens `[M, C]` from geometry `h_g[M, 256]` and category features
/// `h_c[M, C]`; rows with `valid == false` become the null object token.
pub fn fuse_box_features_in(g: &mut Graph, store: &ParameterStore, h_g: Var, h_c: Var, valid: &[bool]) -> Result<Var> {
    if g.dims(h_g)[0] != g.dims(h_c)[0] {
        return Err(Error::Shape(format!("box geometry {:?} vs category {:?}", g.dims(h_g), g.dims(h_c))));
    }
    let x = g.concat_cols(h_g, h_c)?;
    let h = linear(g, store, "cond.box.fc1", x)?;
    let h = g.silu(h);
    let out = linear(g, store, "cond.box.fc2", h)?;
    let null = g.param(store, NULL_OBJECT)?;
    g.replace_rows(out, null, valid)
}

/// Raw per-camera condition: the annotation projected into one view.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraCondition {
    pub masks: PerLMaskSet,
    /// `[M, 256]` corner embeddings; padded rows are the all-missing embedding.
    pub box_geometry: Tensor,
    /// Category token per slot, `None` when padded.
    pub categories: Vec<Option<String>>,
    pub description: Vec<String>,
}

impl CameraCondition {
    pub fn build(scene: &SceneAnnotation, cam: &CameraModel, max_boxes: usize) -> Self {
        let masks = PerLMaskSet::build(&scene.boxes, &scene.road_polygons, cam, max_boxes);
        let corners: Vec<_> = masks
            .source
            .iter()
            .map(|s| s.map_or([None; 8], |i| corner_pixels(&scene.boxes[i], cam)))
            .collect();
        let categories = masks.source.iter().map(|s| s.map(|i| scene.boxes[i].category.clone())).collect();
        Self {
            box_geometry: fourier_embed(&corners, cam, FOURIER_BANDS),
            masks,
            categories,
            description: scene.description_tokens.clone(),
        }
    }

    /// `[M, V]` one-hot category selector; padded rows are zero.
    fn category_selector(&self, vocab: &Vocabulary) -> Result<Tensor> {
        let mut data = vec![0.0; self.categories.len() * vocab.len()];
        for (row, cat) in self.categories.iter().enumerate() {
            if let Some(c) = cat {
                data[row * vocab.len() + vocab.index(c)?] = 1.0;
            }
        }
        Tensor::matrix(self.categories.len(), vocab.len(), data)
    }
}

/// Token features of one camera as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct BundleVars {
    pub h_m: Var,
    pub h_d: Var,
    pub h_b: Var,
    pub null_scene: Var,
    pub null_object: Var,
}

/// Runs every encoder inside `g` so gradients reach them.
pub fn encode_condition_in(
    g: &mut Graph,
    store: &ParameterStore,
    vocab: &Vocabulary,
    cond: &CameraCondition,
) -> Result<BundleVars> {
    let h_m = encode_road_map_in(g, store, &cond.masks.road)?;
    let h_d = encode_text_in(g, store, vocab, &cond.description)?;
    let sel = g.constant(cond.category_selector(vocab)?);
    let table = g.param(store, EMBEDDING)?;
    let h_c = g.matmul(sel, table)?;
    let h_g = g.constant(cond.box_geometry.clone());
    let h_b = fuse_box_features_in(g, store, h_g, h_c, &cond.masks.valid)?;
    Ok(BundleVars {
        h_m,
        h_d,
        h_b,
        null_scene: g.param(store, NULL_SCENE)?,
        null_object: g.param(store, NULL_OBJECT)?,
    })
}

/// Condition-free tokens: both scene tokens are the null scene token and every box slot holds the null object.
pub fn null_bundle_in(g: &mut Graph, store: &ParameterStore, max_boxes: usize) -> Result<BundleVars> {
    let null_scene = g.param(store, NULL_SCENE)?;
    let null_object = g.param(store, NULL_OBJECT)?;
    let c = g.dims(null_object)[1];
    let zeros = g.constant(Tensor::zeros(&[max_boxes.max(1), c]));
    let h_b = g.replace_rows(zeros, null_object, &vec![false; max_boxes.max(1)])?;
    Ok(BundleVars { h_m: null_scene, h_d: null_scene, h_b, null_scene, null_object })
}

/// Evaluated condition for one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionBundle {
    pub h_m: Tensor,
    pub h_d: Tensor,
    pub h_b: Tensor,
    pub masks: PerLMaskSet,
    pub valid: Vec<bool>,
    pub null_scene: Tensor,
    pub null_object: Tensor,
}

impl ConditionBundle {
    /// The bundle used for unconditional predictions: null tokens, no valid boxes, zero masks.
    pub fn null(store: &ParameterStore, height: usize, width: usize, max_boxes: usize) -> Result<Self> {
        let mut g = Graph::inference();
        let v = null_bundle_in(&mut g, store, max_boxes)?;
        Ok(Self {
            h_m: g.value(v.h_m).clone(),
            h_d: g.value(v.h_d).clone(),
            h_b: g.value(v.h_b).clone(),
            masks: PerLMaskSet::empty(height, width, max_boxes),
            valid: vec![false; max_boxes],
            null_scene: g.value(v.null_scene).clone(),
            null_object: g.value(v.null_object).clone(),
        })
    }

    /// Re-enters the bundle into a graph as constants.
    pub fn constants_in(&self, g: &mut Graph) -> BundleVars {
        BundleVars {
            h_m: g.constant(self.h_m.clone()),
            h_d: g.constant(self.h_d.clone()),
            h_b: g.constant(self.h_b.clone()),
            null_scene: g.constant(self.null_scene.clone()),
            null_object: g.constant(self.null_object.clone()),
        }
    }
}

pub fn encode_road_map(road: &crate::geometry::Mask, store: &ParameterStore) -> Result<Tensor> {
    let mut g = Graph::inference();
    let v = encode_road_map_in(&mut g, store, road)?;
    Ok(g.value(v).clone())
}

pub fn encode_text(tokens: &[String], vocab: &Vocabulary, store: &ParameterStore) -> Result<Tensor> {
    let mut g = Graph::inference();
    let v = encode_text_in(&mut g, store, vocab, tokens)?;
    Ok(g.value(v).clone())
}

pub fn fuse_box_features(h_g: &Tensor, h_c: &Tensor, valid: &[bool], store: &ParameterStore) -> Result<Tensor> {
    let mut g = Graph::inference();
    let (a, b) = (g.constant(h_g.clone()), g.constant(h_c.clone()));
    let v = fuse_box_features_in(&mut g, store, a, b, valid)?;
    Ok(g.value(v).clone())
}

/// Projects the scene into `cam` and runs all encoders.
pub fn assemble_condition_bundle(
    scene: &SceneAnnotation,
    cam: &CameraModel,
    store: &ParameterStore,
    vocab: &Vocabulary,
    max_boxes: usize,
) -> Result<ConditionBundle> {
    let cond = CameraCondition::build(scene, cam, max_boxes);
    let mut g = Graph::inference();
    let v = encode_condition_in(&mut g, store, vocab, &cond)?;
    Ok(ConditionBundle {
        h_m: g.value(v.h_m).clone(),
        h_d: g.value(v.h_d).clone(),
        h_b: g.value(v.h_b).clone(),
        valid: cond.masks.valid.clone(),
        masks: cond.masks,
        null_scene: g.value(v.null_scene).clone(),
        null_object: g.value(v.null_object).clone(),
    })
}
