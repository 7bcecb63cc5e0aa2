use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{DenoiserModel, MaskPyramid};
use super::schedule::{q_sample, NoiseSchedule};
use crate::conditioning::{encode_condition_in, null_bundle_in, CameraCondition};
use crate::error::{Error, Result};
use crate::geometry::PerLMaskSet;
use crate::numerics::{warmup_lr, AdamW, Graph, ParameterStore, Tensor, Var};
use crate::scenegen::{render_ground_truth, Palette, SceneAnnotation};

/// One training scene: clean renders and raw conditions for every camera.
#[derive(Clone, Debug)]
pub struct TrainScene {
    /// `[3, H, W]` planar images in `[-1, 1]`.
    pub images: Vec<Tensor>,
    pub conditions: Vec<CameraCondition>,
    pub pyramids: Vec<MaskPyramid>,
}

impl TrainScene {
    pub fn build(scene: &SceneAnnotation, model: &DenoiserModel, palette: &Palette) -> Result<Self> {
        let cfg = &model.config;
        let mut out = Self { images: Vec::new(), conditions: Vec::new(), pyramids: Vec::new() };
        for cam in &scene.cameras {
            if (cam.height, cam.width) != (cfg.height, cfg.width) {
                return Err(Error::Shape(format!(
                    "camera `{}` is {}x{}, model expects {}x{}",
                    cam.name, cam.height, cam.width, cfg.height, cfg.width
                )));
            }
            let img = render_ground_truth(scene, cam, palette)?;
            out.images.push(Tensor::new(&[3, cfg.height, cfg.width], img.to_planar())?);
            let cond = CameraCondition::build(scene, cam, cfg.max_boxes);
            out.pyramids.push(MaskPyramid::build(&cond.masks)?);
            out.conditions.push(cond);
        }
        Ok(out)
    }
}

/// Denoising loss of one scene for a fixed timestep and noise, averaged over
/// cameras. With `drop_conditions`, every camera sees the null tokens and
/// empty masks.
pub fn diffusion_loss_in(
    g: &mut Graph,
    model: &DenoiserModel,
    store: &ParameterStore,
    sched: &NoiseSchedule,
    scene: &TrainScene,
    t: usize,
    eps: &[Tensor],
    drop_conditions: bool,
) -> Result<Var> {
    let n = scene.images.len();
    if n == 0 || eps.len() != n {
        return Err(Error::Shape(format!("{n} images with {} noise tensors", eps.len())));
    }
    let cfg = &model.config;
    let null_masks;
    let mut tokens = Vec::with_capacity(n);
    let masks: Vec<&MaskPyramid> = if drop_conditions {
        null_masks = MaskPyramid::build(&PerLMaskSet::empty(cfg.height, cfg.width, cfg.max_boxes))?;
        for _ in 0..n {
            tokens.push(null_bundle_in(g, store, cfg.max_boxes)?);
        }
        vec![&null_masks; n]
    } else {
        for c in &scene.conditions {
            tokens.push(encode_condition_in(g, store, &model.vocab, c)?);
        }
        scene.pyramids.iter().collect()
    };
    let xs = scene
        .images
        .iter()
        .zip(eps)
        .map(|(x0, e)| Ok(g.constant(q_sample(x0, t, e, sched)?)))
        .collect::<Result<Vec<_>>>()?;
    let out = model.forward(g, store, &xs, t, &tokens, &masks)?;
    let mut total: Option<Var> = None;
    for (&pred, e) in out.eps.iter().zip(eps) {
        let l = g.mse(pred, e.clone())?;
        total = Some(match total {
            Some(acc) => g.add(acc, l)?,
            None => l,
        });
    }
    Ok(g.scale(total.expect("at least one camera"), 1.0 / n as f64))
}

/// Draws `t`, the noise, and the dropout decision for each scene, then
/// accumulates the gradient of the batch-mean loss into `store`.
/// Returns the mean loss.
pub fn training_step(
    model: &DenoiserModel,
    store: &mut ParameterStore,
    batch: &[TrainScene],
    sched: &NoiseSchedule,
    dropout_rate: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {dropout_rate} outside [0, 1)")));
    }
    store.zero_grads();
    let mut sum = 0.0;
    for scene in batch {
        let t = rng.random_range(1..=sched.steps());
        let eps: Vec<Tensor> = scene
            .images
            .iter()
            .map(|x| Tensor::from_fn(x.dims(), |_| StandardNormal.sample(rng)))
            .collect();
        let drop = rng.random::<f64>() < dropout_rate;
        let mut g = Graph::new();
        let loss = diffusion_loss_in(&mut g, model, store, sched, scene, t, &eps, drop)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "training loss" });
        }
        sum += value;
        let grads = g.backward(loss)?;
        store.accumulate(&g, &grads, 1.0 / batch.len() as f64)?;
    }
    Ok(sum / batch.len() as f64)
}

/// Optimizer settings for [`train_iteration`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub lr: f64,
    pub warmup_steps: u64,
    pub dropout: f64,
}

/// A training step followed by an AdamW update at the warmed-up learning
/// rate. Returns `(loss, lr)`.
pub fn train_iteration(
    model: &DenoiserModel,
    store: &mut ParameterStore,
    batch: &[TrainScene],
    sched: &NoiseSchedule,
    settings: TrainSettings,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let loss = training_step(model, store, batch, sched, settings.dropout, rng)?;
    let lr = warmup_lr(settings.lr, store.optimizer_step_count() + 1, settings.warmup_steps);
    store.adamw_step(&AdamW { lr, ..AdamW::default() })?;
    Ok((loss, lr))
}
