use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::image::{write_file, write_pgm, write_ppm};
use crate::conditioning::Vocabulary;
use crate::diffusion::{ddim_sample, train_iteration, AttentionSnapshot, DenoiserModel, SceneCondition, TrainScene};
use crate::error::{Error, Result};
use crate::geometry::{rasterize_box_mask, rasterize_road_mask, PerLMaskSet};
use crate::numerics::{stream_rng, ParameterStore};
use crate::scenegen::{
    evaluate_controllability, generate_scene, render_ground_truth, translation_probe, translation_response,
    ControllabilityReport, Palette, RgbImage, SceneAnnotation, SceneReport, DESCRIPTION_TOKENS,
};

/// Description tokens followed by the category names.
pub fn default_vocabulary(palette: &Palette) -> Vocabulary {
    let mut tokens: Vec<String> = DESCRIPTION_TOKENS.iter().map(|(n, _)| n.to_string()).collect();
    tokens.extend(palette.names().map(String::from));
    Vocabulary::new(tokens).expect("description tokens and category names are distinct")
}

pub const METRICS_FILE: &str = "metrics.tsv";
pub const FINAL_CHECKPOINT: &str = "final.bin";

pub fn checkpoint_name(step: usize) -> String {
    format!("step_{step:07}.bin")
}

/// Trains from scratch, writing `metrics.tsv`, periodic checkpoints, and
/// `final.bin` into `out_dir`. `progress` sees `(step, loss, lr)` after each
/// optimizer update, with 1-based steps.
///
/// Every step draws its scenes and noise from streams keyed by the run seed
/// and the step number, so the run is a pure function of the config.
pub fn train(cfg: &RunConfig, out_dir: &Path, mut progress: impl FnMut(usize, f64, f64)) -> Result<Checkpoint> {
    cfg.validate().map_err(|(key, message)| Error::InvalidArgument(format!("{key}: {message}")))?;
    let palette = Palette::default();
    let model = DenoiserModel::new(cfg.model.clone(), default_vocabulary(&palette))?;
    let mut store = model.init(cfg.seed)?;
    let sched = cfg.diffusion.schedule()?;
    let settings = cfg.training.settings();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(METRICS_FILE);
    let log_file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(log_file);
    let snapshot = |store: &ParameterStore| Checkpoint::new(model.clone(), cfg.diffusion.clone(), palette.clone(), store);
    for step in 1..=cfg.training.steps {
        let mut pick = stream_rng(cfg.seed, "train-scenes", step as u64);
        let batch = (0..cfg.training.batch_size)
            .map(|_| {
                let index = pick.random_range(0..cfg.corpus.train_scenes) as u64;
                let scene = generate_scene(cfg.corpus.train_first_seed + index, &cfg.corpus.scene)?;
                TrainScene::build(&scene, &model, &palette)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = stream_rng(cfg.seed, "train-noise", step as u64);
        let (loss, lr) = train_iteration(&model, &mut store, &batch, &sched, settings, &mut rng)?;
        writeln!(log, "{step}\t{loss}\t{lr}").and_then(|_| log.flush()).map_err(|e| Error::io(&log_path, e))?;
        progress(step, loss, lr);
        let every = cfg.training.checkpoint_every;
        if every > 0 && step % every == 0 && step < cfg.training.steps {
            snapshot(&store).save(&out_dir.join(checkpoint_name(step)))?;
        }
    }
    let ckpt = snapshot(&store);
    ckpt.save(&out_dir.join(FINAL_CHECKPOINT))?;
    Ok(ckpt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOptions {
    pub seed: u64,
    /// Overrides the checkpoint's guidance scale.
    pub scale: Option<f64>,
    /// Overrides the checkpoint's DDIM step count.
    pub steps: Option<usize>,
    pub dump_attention: bool,
    pub dump_masks: bool,
    /// Scenes processed concurrently; 0 uses every core.
    pub workers: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self { seed: 0, scale: None, steps: None, dump_attention: false, dump_masks: false, workers: 1 }
    }
}

/// Generated views of one scene, ordered as its cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedScene {
    pub images: Vec<RgbImage>,
    /// `(step, timestep, per-camera attention)` when requested.
    pub attention: Vec<(usize, usize, Vec<AttentionSnapshot>)>,
}

/// DDIM sampling of every camera. The noise comes from a stream keyed by the
/// seed and the scene id, so a scene renders the same in any batch or order.
pub fn generate_views(
    ckpt: &Checkpoint,
    scene: &SceneAnnotation,
    opts: &GenerateOptions,
    capture_attention: bool,
) -> Result<GeneratedScene> {
    let cfg = &ckpt.model.config;
    let cond = SceneCondition::prepare(scene, &ckpt.model, &ckpt.store)?;
    let null = SceneCondition::null(&ckpt.model, &ckpt.store, cond.cameras())?;
    let sched = ckpt.diffusion.schedule()?;
    let mut sample_opts = ckpt.diffusion.sample_options();
    if let Some(s) = opts.scale {
        sample_opts.guidance_scale = s;
    }
    if let Some(s) = opts.steps {
        sample_opts.steps = s;
    }
    let mut rng = stream_rng(opts.seed, &scene.scene_id, 0);
    let mut attention = Vec::new();
    let mut record = |i: usize, t: usize, s: &[AttentionSnapshot]| attention.push((i, t, s.to_vec()));
    let observer: Option<&mut dyn FnMut(usize, usize, &[AttentionSnapshot])> =
        if capture_attention { Some(&mut record) } else { None };
    let xs = ddim_sample(&ckpt.model, &ckpt.store, &cond, &null, &sched, sample_opts, &mut rng, observer)?;
    let images =
        xs.iter().map(|x| RgbImage::from_planar(cfg.height, cfg.width, x.data())).collect::<Result<Vec<_>>>()?;
    Ok(GeneratedScene { images, attention })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
}

fn scene_dir(out_dir: &Path, scene: &SceneAnnotation) -> Result<PathBuf> {
    let id = &scene.scene_id;
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(Error::InvalidArgument(format!("scene id `{id}` cannot name a directory")));
    }
    Ok(out_dir.join(id))
}

fn box_mask_name(camera: &str, box_index: usize) -> String {
    format!("{camera}_box{box_index:03}.pgm")
}

fn write_masks(dir: &Path, camera: &str, masks: &PerLMaskSet) -> Result<()> {
    let (h, w) = (masks.height(), masks.width());
    write_pgm(&dir.join(format!("{camera}_road.pgm")), h, w, &masks.road.data)?;
    for (m, src) in masks.boxes.iter().zip(&masks.source) {
        if let Some(i) = src {
            write_pgm(&dir.join(box_mask_name(camera, *i)), h, w, &m.data)?;
        }
    }
    Ok(())
}

/// Samples every scene and writes `<out>/<scene_id>/<camera>.ppm`, plus
/// `attn/<camera>_step<NN>_{road,objects}.pgm` and
/// `masks/<camera>_{road,boxNNN}.pgm` when requested.
pub fn generate(ckpt: &Checkpoint, scenes: &[SceneAnnotation], out_dir: &Path, opts: &GenerateOptions) -> Result<()> {
    for s in scenes {
        scene_dir(out_dir, s)?;
    }
    let run = |scene: &SceneAnnotation| -> Result<()> {
        let dir = scene_dir(out_dir, scene)?;
        let out = generate_views(ckpt, scene, opts, opts.dump_attention)?;
        for (img, cam) in out.images.iter().zip(&scene.cameras) {
            write_ppm(&dir.join(format!("{}.ppm", cam.name)), img)?;
        }
        for (step, _, snaps) in &out.attention {
            for (snap, cam) in snaps.iter().zip(&scene.cameras) {
                let base = dir.join("attn");
                write_pgm(&base.join(format!("{}_step{step:02}_road.pgm", cam.name)), cam.height, cam.width, &snap.road)?;
                write_pgm(
                    &base.join(format!("{}_step{step:02}_objects.pgm", cam.name)),
                    cam.height,
                    cam.width,
                    &snap.objects,
                )?;
            }
        }
        if opts.dump_masks {
            let cond = SceneCondition::prepare(scene, &ckpt.model, &ckpt.store)?;
            for (b, cam) in cond.bundles.iter().zip(&scene.cameras) {
                write_masks(&dir.join("masks"), &cam.name, &b.masks)?;
            }
        }
        Ok(())
    };
    pool(opts.workers)?.install(|| scenes.par_iter().try_for_each(run))
}

/// Road mask, every visible box mask, and the ground-truth render for each
/// camera of each scene, under `<out>/<scene_id>/`.
pub fn project(scenes: &[SceneAnnotation], palette: &Palette, out_dir: &Path) -> Result<()> {
    for scene in scenes {
        let dir = scene_dir(out_dir, scene)?;
        for cam in &scene.cameras {
            let road = rasterize_road_mask(&scene.road_polygons, cam);
            write_pgm(&dir.join(format!("{}_road.pgm", cam.name)), cam.height, cam.width, &road.data)?;
            for (i, b) in scene.boxes.iter().enumerate() {
                let m = rasterize_box_mask(b, cam);
                if !m.is_empty() {
                    write_pgm(&dir.join(box_mask_name(&cam.name, i)), cam.height, cam.width, &m.data)?;
                }
            }
            write_ppm(&dir.join(format!("{}_render.ppm", cam.name)), &render_ground_truth(scene, cam, palette)?)?;
        }
    }
    Ok(())
}

/// What [`evaluate`] scores: model samples, or the ground-truth renders.
#[derive(Clone, Copy, Debug)]
pub enum ImageSource<'a> {
    Model(&'a Checkpoint),
    Oracle,
}

/// Scores each scene's views, then shifts its most visible box and checks
/// that the re-generated box follows. Model samples for the original and the
/// shifted scene share their noise.
pub fn evaluate(
    source: ImageSource<'_>,
    scenes: &[SceneAnnotation],
    palette: &Palette,
    opts: &GenerateOptions,
) -> Result<ControllabilityReport> {
    let views = |scene: &SceneAnnotation| -> Result<Vec<RgbImage>> {
        match source {
            ImageSource::Model(ckpt) => Ok(generate_views(ckpt, scene, opts, false)?.images),
            ImageSource::Oracle => scene.cameras.iter().map(|c| render_ground_truth(scene, c, palette)).collect(),
        }
    };
    let run = |scene: &SceneAnnotation| -> Result<SceneReport> {
        let before = views(scene)?;
        let mut report = evaluate_controllability(&before, scene, palette)?;
        if let Some(probe) = translation_probe(scene, palette)? {
            let after = views(&probe.shifted)?;
            let ci = probe.camera_index;
            report.record_translation(translation_response(&probe, &before[ci], &after[ci], palette));
        }
        Ok(report)
    };
    let reports = pool(opts.workers)?.install(|| scenes.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    Ok(ControllabilityReport::from_scenes(reports))
}

pub fn write_report(path: &Path, report: &ControllabilityReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}
