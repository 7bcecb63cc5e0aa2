use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{DenoiserModel, MaskPyramid};
use super::schedule::{ddim_step, NoiseSchedule};
use crate::conditioning::{assemble_condition_bundle, ConditionBundle};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParameterStore, Tensor};
use crate::perlcm::mean_object_attention;
use crate::scenegen::SceneAnnotation;

/// Evaluated conditions for every camera of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneCondition {
    pub bundles: Vec<ConditionBundle>,
    pub pyramids: Vec<MaskPyramid>,
}

impl SceneCondition {
    pub fn prepare(scene: &SceneAnnotation, model: &DenoiserModel, store: &ParameterStore) -> Result<Self> {
        let cfg = &model.config;
        let bundles = scene
            .cameras
            .iter()
            .map(|cam| {
                if (cam.height, cam.width) != (cfg.height, cfg.width) {
                    return Err(Error::Shape(format!(
                        "camera `{}` is {}x{}, model expects {}x{}",
                        cam.name, cam.height, cam.width, cfg.height, cfg.width
                    )));
                }
                assemble_condition_bundle(scene, cam, store, &model.vocab, cfg.max_boxes)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bundles(bundles)
    }

    /// Null tokens and empty masks for `cameras` views.
    pub fn null(model: &DenoiserModel, store: &ParameterStore, cameras: usize) -> Result<Self> {
        let cfg = &model.config;
        let b = ConditionBundle::null(store, cfg.height, cfg.width, cfg.max_boxes)?;
        Self::from_bundles(vec![b; cameras])
    }

    pub fn from_bundles(bundles: Vec<ConditionBundle>) -> Result<Self> {
        let pyramids = bundles.iter().map(|b| MaskPyramid::build(&b.masks)).collect::<Result<_>>()?;
        Ok(Self { bundles, pyramids })
    }

    pub fn cameras(&self) -> usize {
        self.bundles.len()
    }
}

/// Attention recorded at the last full-resolution block for one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSnapshot {
    /// Weight on the road key per pixel.
    pub road: Vec<f64>,
    /// Per-pixel mean weight over valid box keys.
    pub objects: Vec<f64>,
}

/// Noise prediction for every camera; optionally the attention maps.
pub fn predict_eps(
    model: &DenoiserModel,
    store: &ParameterStore,
    xs: &[Tensor],
    t: usize,
    cond: &SceneCondition,
    capture: bool,
) -> Result<(Vec<Tensor>, Option<Vec<AttentionSnapshot>>)> {
    let mut g = Graph::inference();
    let tokens: Vec<_> = cond.bundles.iter().map(|b| b.constants_in(&mut g)).collect();
    let vars: Vec<_> = xs.iter().map(|x| g.constant(x.clone())).collect();
    let masks: Vec<&MaskPyramid> = cond.pyramids.iter().collect();
    let out = model.forward(&mut g, store, &vars, t, &tokens, &masks)?;
    let eps = out.eps.iter().map(|&v| g.value(v).clone()).collect();
    let snaps = capture.then(|| {
        out.attention
            .iter()
            .zip(&cond.bundles)
            .map(|(a, b)| AttentionSnapshot {
                road: g.value(a.scene).data().iter().step_by(2).copied().collect(),
                objects: mean_object_attention(g.value(a.object), &b.valid),
            })
            .collect()
    });
    Ok((eps, snaps))
}

/// `eps_u + s (eps_c - eps_u)`; `s = 1` and `s = 0` skip the unused pass and
/// return the conditional and unconditional predictions unchanged.
#[allow(clippy::too_many_arguments)]
pub fn cfg_predict(
    model: &DenoiserModel,
    store: &ParameterStore,
    xs: &[Tensor],
    t: usize,
    cond: &SceneCondition,
    null: &SceneCondition,
    scale: f64,
    capture: bool,
) -> Result<(Vec<Tensor>, Option<Vec<AttentionSnapshot>>)> {
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(Error::InvalidArgument(format!("guidance scale {scale}")));
    }
    if scale == 0.0 {
        let (u, _) = predict_eps(model, store, xs, t, null, false)?;
        let snaps = if capture { predict_eps(model, store, xs, t, cond, true)?.1 } else { None };
        return Ok((u, snaps));
    }
    let (c, snaps) = predict_eps(model, store, xs, t, cond, capture)?;
    if scale == 1.0 {
        return Ok((c, snaps));
    }
    let (u, _) = predict_eps(model, store, xs, t, null, false)?;
    let guided = c
        .iter()
        .zip(&u)
        .map(|(c, u)| {
            let data = u.data().iter().zip(c.data()).map(|(u, c)| u + scale * (c - u)).collect();
            Tensor::new(c.dims(), data)
        })
        .collect::<Result<_>>()?;
    Ok((guided, snaps))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleOptions {
    pub steps: usize,
    pub guidance_scale: f64,
    pub eta: f64,
    /// Clamp the implied clean image to `[-1, 1]` at every step.
    pub clip: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { steps: 50, guidance_scale: 5.0, eta: 0.0, clip: true }
    }
}

/// DDIM reverse process from pure noise. `observer` receives
/// `(step index, timestep, attention per camera)` at every step.
pub fn ddim_sample(
    model: &DenoiserModel,
    store: &ParameterStore,
    cond: &SceneCondition,
    null: &SceneCondition,
    sched: &NoiseSchedule,
    opts: SampleOptions,
    rng: &mut impl Rng,
    mut observer: Option<&mut dyn FnMut(usize, usize, &[AttentionSnapshot])>,
) -> Result<Vec<Tensor>> {
    if !(0.0..=1.0).contains(&opts.eta) {
        return Err(Error::InvalidArgument(format!("eta {} outside [0, 1]", opts.eta)));
    }
    if cond.cameras() != null.cameras() {
        return Err(Error::Shape(format!("{} conditions vs {} null conditions", cond.cameras(), null.cameras())));
    }
    let cfg = &model.config;
    let dims = [3, cfg.height, cfg.width];
    let timesteps = sched.ddim_timesteps(opts.steps)?;
    let mut xs: Vec<Tensor> = (0..cond.cameras()).map(|_| Tensor::from_fn(&dims, |_| StandardNormal.sample(rng))).collect();
    for (i, &t) in timesteps.iter().enumerate() {
        let t_prev = timesteps.get(i + 1).copied().unwrap_or(0);
        let (eps, snaps) = cfg_predict(model, store, &xs, t, cond, null, opts.guidance_scale, observer.is_some())?;
        if let (Some(obs), Some(s)) = (observer.as_mut(), snaps.as_ref()) {
            obs(i, t, s);
        }
        xs = xs
            .iter()
            .zip(&eps)
            .map(|(x, e)| {
                let noise: Vec<f64> =
                    if opts.eta > 0.0 { (0..x.numel()).map(|_| StandardNormal.sample(rng)).collect() } else { Vec::new() };
                Tensor::new(&dims, ddim_step(x.data(), e.data(), t, t_prev, sched, opts.eta, opts.clip, &noise))
            })
            .collect::<Result<_>>()?;
    }
    Ok(xs)
}
