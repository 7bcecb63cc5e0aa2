//! Forward-process statistics and the algebra of the DDIM and guidance updates.

use perldiff::diffusion::{
    cfg_predict, ddim_sample, ddim_step, make_schedule, q_sample, DenoiserConfig, DenoiserModel, NoiseSchedule,
    SampleOptions, SceneCondition,
};
use perldiff::numerics::{ParameterStore, Tensor};
use perldiff::pipeline::default_vocabulary;
use perldiff::scenegen::{generate_scene, Palette, RigConfig, SceneConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Outcome;

const T: usize = 1000;

/// Cumulative products of `1 - β` for linear betas, accumulated independently.
fn alpha_bar_reference(t: usize) -> f64 {
    (1..=t).map(|s| 1.0 - (1e-4 + (2e-2 - 1e-4) * (s - 1) as f64 / (T - 1) as f64)).product()
}

/// Residuals `(x_t - √ᾱ x0) / √(1 - ᾱ)` pooled over elements and draws should
/// have zero mean and unit variance at every timestep.
fn forward_statistics(sched: &NoiseSchedule) -> (bool, String) {
    let x0 = Tensor::new(&[4], vec![0.9, -0.6, 0.1, 0.0]).expect("x0");
    let draws = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_sigma = 0.0f64;
    let mut schedule_error = 0.0f64;
    for t in [1, 50, 250, 500, 750, 1000] {
        let ab = alpha_bar_reference(t);
        schedule_error = schedule_error.max((sched.alpha_bar_at(t) - ab).abs());
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..draws {
            let eps = Tensor::from_fn(&[4], |_| StandardNormal.sample(&mut rng));
            let x = q_sample(&x0, t, &eps, sched).expect("q_sample");
            for (v, x0) in x.data().iter().zip(x0.data()) {
                let r = (v - ab.sqrt() * x0) / (1.0 - ab).sqrt();
                sum += r;
                sq += r * r;
            }
        }
        let n = (4 * draws) as f64;
        let mean = sum / n;
        let var = (sq - n * mean * mean) / (n - 1.0);
        worst_sigma = worst_sigma.max(mean.abs() * n.sqrt());
        worst_sigma = worst_sigma.max((var - 1.0).abs() / (2.0 / (n - 1.0)).sqrt());
    }
    (
        worst_sigma <= 3.0 && schedule_error < 1e-12,
        format!("q_sample moments within {worst_sigma:.2} sigma, alpha_bar within {schedule_error:.1e}"),
    )
}

fn one_step_inversion(sched: &NoiseSchedule) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for t in [1, 10, 100, 400, 800, 1000] {
        let x0: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
        let xt = q_sample(&Tensor::new(&[300], x0.clone()).unwrap(), t, &Tensor::new(&[300], eps.clone()).unwrap(), sched)
            .expect("q_sample");
        for clip in [false, true] {
            let back = ddim_step(xt.data(), &eps, t, 0, sched, 0.0, clip, &[]);
            worst = back.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
    }
    (worst < 1e-9, format!("one-step inversion within {worst:.1e}"))
}

struct Micro {
    model: DenoiserModel,
    store: ParameterStore,
    cond: SceneCondition,
    null: SceneCondition,
}

/// A small denoiser with every parameter perturbed so that conditional and
/// unconditional predictions differ.
fn micro() -> Micro {
    let palette = Palette::default();
    let cfg = DenoiserConfig {
        height: 8,
        width: 12,
        channels: 8,
        widths: [4, 8, 8],
        max_boxes: 3,
        groups: 2,
        time_dim: 8,
        view_max_pixels: 24,
        ..DenoiserConfig::default()
    };
    let model = DenoiserModel::new(cfg.clone(), default_vocabulary(&palette)).expect("model");
    let mut store = model.init(3).expect("init");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let names: Vec<String> = store.names().map(String::from).collect();
    for n in names {
        let t = store.get(&n).expect("param");
        let r = Tensor::from_fn(t.dims(), |i| t.data()[i] + 0.2 * rng.random_range(-1.0..1.0));
        store.set(&n, r).expect("set");
    }
    let rig = RigConfig { width: cfg.width, height: cfg.height, ..RigConfig::default() };
    let scene = generate_scene(5, &SceneConfig { rig, min_visible_pixels: 2, ..SceneConfig::default() }).expect("scene");
    let cond = SceneCondition::prepare(&scene, &model, &store).expect("condition");
    let null = SceneCondition::null(&model, &store, cond.cameras()).expect("null");
    Micro { model, store, cond, null }
}

fn guidance_is_affine(m: &Micro) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs: Vec<Tensor> = (0..m.cond.cameras()).map(|_| Tensor::from_fn(&[3, 8, 12], |_| StandardNormal.sample(&mut rng))).collect();
    let at = |s: f64| cfg_predict(&m.model, &m.store, &xs, 400, &m.cond, &m.null, s, false).expect("cfg").0;
    let (e0, e1) = (at(0.0), at(1.0));
    let spread = e0.iter().zip(&e1).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for s in [0.5, 2.0, 5.0, 7.5] {
        for ((es, a), b) in at(s).iter().zip(&e0).zip(&e1) {
            for ((v, u), c) in es.data().iter().zip(a.data()).zip(b.data()) {
                worst = worst.max((v - (u + s * (c - u))).abs());
            }
        }
    }
    (worst < 1e-9 && spread > 1e-6, format!("guidance affine within {worst:.1e} (cond/uncond gap {spread:.2e})"))
}

fn sampling_is_deterministic(m: &Micro, sched: &NoiseSchedule) -> (bool, String) {
    let opts = SampleOptions { steps: 10, ..SampleOptions::default() };
    let run = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ddim_sample(&m.model, &m.store, &m.cond, &m.null, sched, opts, &mut rng, None).expect("sample")
    };
    let (a, b, c) = (run(1), run(1), run(2));
    let same = a.iter().zip(&b).all(|(x, y)| x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    let differs = a.iter().zip(&c).any(|(x, y)| x != y);
    (same && differs, format!("eta=0 sampling bit-identical {same}, seed-sensitive {differs}"))
}

pub fn diffusion() -> Outcome {
    let sched = make_schedule(T, 1e-4, 2e-2).expect("schedule");
    let m = micro();
    let checks =
        [forward_statistics(&sched), sampling_is_deterministic(&m, &sched), guidance_is_affine(&m), one_step_inversion(&sched)];
    Outcome {
        pass: checks.iter().all(|c| c.0),
        detail: checks.iter().map(|c| c.1.as_str()).collect::<Vec<_>>().join("; "),
    }
}
