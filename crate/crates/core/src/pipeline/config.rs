use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{make_schedule, DenoiserConfig, NoiseSchedule, SampleOptions, TrainSettings};
use crate::error::{Error, Result};
use crate::scenegen::SceneConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ddim_steps: usize,
    pub guidance_scale: f64,
    pub eta: f64,
    pub clip: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { timesteps: 1000, beta_start: 1e-4, beta_end: 2e-2, ddim_steps: 50, guidance_scale: 5.0, eta: 0.0, clip: true }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.timesteps, self.beta_start, self.beta_end)
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions { steps: self.ddim_steps, guidance_scale: self.guidance_scale, eta: self.eta, clip: self.clip }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub steps: usize,
    /// Scenes per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub dropout: f64,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { steps: 20_000, batch_size: 1, lr: 5e-5, warmup_steps: 1000, dropout: 0.1, checkpoint_every: 5000 }
    }
}

impl TrainingConfig {
    pub fn settings(&self) -> TrainSettings {
        TrainSettings { lr: self.lr, warmup_steps: self.warmup_steps, dropout: self.dropout }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub train_scenes: usize,
    pub train_first_seed: u64,
    pub eval_scenes: usize,
    pub eval_first_seed: u64,
    pub scene: SceneConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            train_scenes: 2000,
            train_first_seed: 0,
            eval_scenes: 50,
            eval_first_seed: 1_000_000,
            scene: SceneConfig::default(),
        }
    }
}

/// Everything a training run needs. Every section is optional in JSON and
/// falls back to the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: DenoiserConfig,
    pub diffusion: DiffusionConfig,
    pub training: TrainingConfig,
    pub corpus: CorpusConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: DenoiserConfig::default(),
            diffusion: DiffusionConfig::default(),
            training: TrainingConfig::default(),
            corpus: CorpusConfig::default(),
            output_dir: PathBuf::from("run"),
        }
    }
}

/// 1-based line of the first occurrence of `"key"`, or 1.
fn line_of(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map_or(1, |i| i + 1)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config { line: e.line().max(1), message: e.to_string() })?;
        cfg.validate().map_err(|(key, message)| Error::Config { line: line_of(text, key), message })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Returns the offending key and a message.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let m = &self.model;
        self.model.validate().map_err(|e| ("model", e.to_string()))?;
        let rig = &self.corpus.scene.rig;
        if (rig.height, rig.width) != (m.height, m.width) {
            return Err((
                "rig",
                format!("rig images are {}x{} but the model expects {}x{}", rig.height, rig.width, m.height, m.width),
            ));
        }
        rig.build().map_err(|e| ("rig", e.to_string()))?;
        self.corpus.scene.validate().map_err(|e| ("scene", e.to_string()))?;
        let d = &self.diffusion;
        d.schedule().map_err(|e| ("timesteps", e.to_string()))?;
        if d.ddim_steps == 0 || d.ddim_steps > d.timesteps {
            return Err(("ddim_steps", format!("ddim_steps must be in 1..={}", d.timesteps)));
        }
        if !(d.guidance_scale.is_finite() && d.guidance_scale >= 0.0) {
            return Err(("guidance_scale", "guidance_scale must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&d.eta) {
            return Err(("eta", "eta must be in [0, 1]".into()));
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(("batch_size", "batch_size must be positive".into()));
        }
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return Err(("lr", "lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&t.dropout) {
            return Err(("dropout", "dropout must be in [0, 1)".into()));
        }
        if self.corpus.train_scenes == 0 {
            return Err(("train_scenes", "train_scenes must be positive".into()));
        }
        Ok(())
    }
}
