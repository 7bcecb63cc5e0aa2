//! Reverse-mode gradients of the full training loss against central
//! differences on every parameter of a small denoiser.

use perldiff::diffusion::{diffusion_loss_in, make_schedule, DenoiserConfig, DenoiserModel, TrainScene};
use perldiff::numerics::{central_difference, gradient_check, Graph, ParameterStore, Tensor};
use perldiff::pipeline::default_vocabulary;
use perldiff::scenegen::{generate_scene, Palette, RigConfig, SceneConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Outcome;

const H: f64 = 1e-3;
const TOLERANCE: f64 = 1e-3;
/// Step used only to re-measure elements that exceed the tolerance.
const FINE_H: f64 = 1e-4;

pub fn fidelity() -> Outcome {
    let palette = Palette::default();
    let cfg = DenoiserConfig {
        height: 16,
        width: 24,
        channels: 16,
        widths: [4, 4, 4],
        road_channels: [2, 2, 2],
        max_boxes: 2,
        groups: 2,
        time_dim: 4,
        // view attention below full resolution only, as in the default model
        view_max_pixels: 96,
        ..DenoiserConfig::default()
    };
    let model = DenoiserModel::new(cfg.clone(), default_vocabulary(&palette)).expect("model");
    let mut store = model.init(5).expect("init");
    // gates and output maps start at zero; give them small values so every
    // path carries gradient
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let names: Vec<String> = store.names().map(String::from).collect();
    for n in &names {
        let t = store.get(n).expect("param");
        if t.data().iter().all(|&v| v == 0.0) {
            let r = Tensor::from_fn(t.dims(), |_| 0.05 * rng.random_range(-1.0..1.0));
            store.set(n, r).expect("set");
        }
    }

    let rig = RigConfig {
        cameras: vec![("left".into(), 25.0), ("right".into(), -25.0)],
        width: cfg.width,
        height: cfg.height,
        ..RigConfig::default()
    };
    let sc = SceneConfig { rig, min_visible_pixels: 4, ..SceneConfig::default() };
    let scenes: Vec<TrainScene> = (0..2)
        .map(|s| TrainScene::build(&generate_scene(s + 3, &sc).expect("scene"), &model, &palette).expect("train scene"))
        .collect();
    let sched = make_schedule(1000, 1e-4, 2e-2).expect("schedule");
    let eps: Vec<Vec<Tensor>> = scenes
        .iter()
        .map(|s| s.images.iter().map(|x| Tensor::from_fn(x.dims(), |_| StandardNormal.sample(&mut rng))).collect())
        .collect();
    // fixed timesteps and noise; the second scene takes the unconditional branch
    let loss = |g: &mut Graph, store: &ParameterStore| {
        let a = diffusion_loss_in(g, &model, store, &sched, &scenes[0], 300, &eps[0], false)?;
        let b = diffusion_loss_in(g, &model, store, &sched, &scenes[1], 700, &eps[1], true)?;
        g.add(a, b)
    };
    let report = gradient_check(&mut store, H, loss).expect("gradient check");
    let failing: Vec<_> = report.exceeding(TOLERANCE).cloned().collect();
    let mut detail = format!(
        "{} parameters, max rel error {:.2e} at {}[{}]",
        report.checked, report.max_rel_error, report.worst_param, report.worst_index
    );
    if !failing.is_empty() {
        detail += &format!("; {} above {TOLERANCE:e}, re-measured at h={FINE_H:e}:", failing.len());
        for e in &failing {
            let fine = central_difference(&mut store, &e.param, e.index, FINE_H, loss).expect("difference");
            let rel = (e.analytic - fine).abs() / e.analytic.abs().max(fine.abs()).max(1e-8);
            detail += &format!(
                " {}[{}] analytic {:.6e} numeric {:.6e} -> {:.6e} (rel {:.1e} -> {:.1e})",
                e.param, e.index, e.analytic, e.numeric, fine, e.rel_error, rel
            );
        }
    }
    Outcome { pass: report.max_rel_error < TOLERANCE, detail }
}
