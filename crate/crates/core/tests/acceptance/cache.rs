//! Trained models and their reports are pure functions of their configs, so
//! they are memoized on disk under `target/acceptance-cache`, keyed by a hash
//! of everything that determines them. Deleting the directory forces a rerun.

use std::path::PathBuf;

use perldiff::pipeline::{self, Checkpoint, GenerateOptions, ImageSource, RunConfig, FINAL_CHECKPOINT};
use perldiff::scenegen::{ControllabilityReport, SceneAnnotation};

pub fn root() -> PathBuf {
    let target = std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target"));
    target.join("acceptance-cache")
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn trained(name: &str, cfg: &RunConfig) -> Checkpoint {
    let dir = root().join(format!("{name}-{:016x}", fnv1a(&cfg.to_json())));
    let path = dir.join(FINAL_CHECKPOINT);
    if let Ok(ckpt) = Checkpoint::load(&path) {
        assert_eq!(ckpt.model.config, cfg.model, "cached checkpoint {} has a different model", path.display());
        return ckpt;
    }
    eprintln!("  training {name} for {} steps into {}", cfg.training.steps, dir.display());
    let start = std::time::Instant::now();
    let total = cfg.training.steps;
    pipeline::train(cfg, &dir, |step, loss, _| {
        if step % 1000 == 0 || step == total {
            eprintln!("    {name} step {step}/{total} loss {loss:.5} ({:.0?})", start.elapsed());
        }
    })
    .expect("training succeeds")
}

pub fn report(
    name: &str,
    ckpt: &Checkpoint,
    scenes: &[SceneAnnotation],
    opts: &GenerateOptions,
) -> ControllabilityReport {
    let mut key = format!("{opts:?}");
    key.push_str(&perldiff::scenegen::scenes_to_json(scenes));
    let bytes = ckpt.to_bytes().expect("checkpoint serializes");
    key.extend(bytes.iter().map(|&b| b as char));
    let path = root().join(format!("report-{name}-{:016x}.json", fnv1a(&key)));
    if let Some(r) = std::fs::read_to_string(&path).ok().and_then(|t| serde_json::from_str(&t).ok()) {
        return r;
    }
    eprintln!("  evaluating {name} on {} scenes", scenes.len());
    let r = pipeline::evaluate(ImageSource::Model(ckpt), scenes, &ckpt.palette, opts).expect("evaluation succeeds");
    pipeline::write_report(&path, &r).expect("report written");
    r
}
