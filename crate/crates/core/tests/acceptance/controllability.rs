use perldiff::pipeline::{GenerateOptions, RunConfig};
use perldiff::scenegen::{generate_corpus, Metrics, SceneAnnotation};

use crate::cache;
use crate::Outcome;

/// The default run with the learning rate raised for training from scratch.
pub fn run_config(lambda: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.training.steps = 20_000;
    cfg.training.lr = 5e-4;
    cfg.model.lambda_scene = lambda;
    cfg.model.lambda_object = lambda;
    cfg
}

fn held_out(cfg: &RunConfig) -> Vec<SceneAnnotation> {
    let c = &cfg.corpus;
    generate_corpus(c.eval_first_seed, c.eval_scenes, &c.scene).expect("eval corpus")
}

pub fn metrics(lambda: f64) -> Metrics {
    let cfg = run_config(lambda);
    let name = format!("lambda{lambda}");
    let ckpt = cache::trained(&name, &cfg);
    cache::report(&name, &ckpt, &held_out(&cfg), &GenerateOptions::default()).aggregate
}

fn show(m: &Metrics) -> String {
    format!(
        "category {:.3} mask_iou {:.3} road_iou {:.3} translation {:.3}",
        m.category_accuracy, m.mean_mask_iou, m.road_iou, m.translation_response_rate
    )
}

pub fn end_to_end() -> Outcome {
    let m = metrics(5.0);
    let pass = m.category_accuracy >= 0.80
        && m.mean_mask_iou >= 0.40
        && m.road_iou >= 0.60
        && m.translation_response_rate >= 0.80;
    Outcome { pass, detail: show(&m) }
}

pub fn mask_ablation() -> Outcome {
    let (with, without) = (metrics(5.0), metrics(0.0));
    let gap = with.mean_mask_iou - without.mean_mask_iou;
    Outcome { pass: gap >= 0.05, detail: format!("mask_iou lambda=5 {:.3} vs lambda=0 {:.3}, gap {gap:.3}", with.mean_mask_iou, without.mean_mask_iou) }
}

pub fn lambda_sweep() -> Outcome {
    let (five, one) = (metrics(5.0), metrics(1.0));
    Outcome {
        pass: five.mean_mask_iou >= one.mean_mask_iou,
        detail: format!("mask_iou lambda=5 {:.3} vs lambda=1 {:.3}", five.mean_mask_iou, one.mean_mask_iou),
    }
}
