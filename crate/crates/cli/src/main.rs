use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use perldiff::pipeline::{self, Checkpoint, GenerateOptions, ImageSource, RunConfig};
use perldiff::scenegen::{generate_corpus, parse_scenes, scenes_to_json, Palette, SceneAnnotation};

#[derive(Parser)]
#[command(name = "perldiff", version, about = "Layout-controlled multi-view diffusion on synthetic driving scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured step count.
        #[arg(long)]
        steps: Option<usize>,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print a progress line every this many steps; 0 is silent.
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Sample every camera of every scene.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value = "generated")]
        out: PathBuf,
        #[command(flatten)]
        sampling: Sampling,
        /// Write per-step road and object attention maps.
        #[arg(long)]
        dump_attn: bool,
        /// Write the road and box masking maps fed to the model.
        #[arg(long)]
        dump_masks: bool,
    },
    /// Score generated views against their layouts.
    Evaluate {
        /// Required unless --oracle is given.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        scenes: PathBuf,
        /// Score ground-truth renders instead of samples.
        #[arg(long)]
        oracle: bool,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Write road masks, box masks, and ground-truth renders without a model.
    Project {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value = "projected")]
        out: PathBuf,
    },
    /// Write a split of the corpus described by a run config as scene JSON.
    Scenes {
        /// Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Split::Eval)]
        split: Split,
        /// Overrides the split's scene count.
        #[arg(long)]
        count: Option<usize>,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Eval,
}

#[derive(clap::Args)]
struct Sampling {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Guidance scale; the checkpoint's value when omitted.
    #[arg(long)]
    scale: Option<f64>,
    /// DDIM steps; the checkpoint's value when omitted.
    #[arg(long)]
    steps: Option<usize>,
    /// Scenes processed in parallel; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl Sampling {
    fn options(&self) -> GenerateOptions {
        GenerateOptions {
            seed: self.seed,
            scale: self.scale,
            steps: self.steps,
            workers: self.workers,
            ..GenerateOptions::default()
        }
    }
}

fn load_scenes(path: &Path) -> Result<Vec<SceneAnnotation>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scenes(&text).with_context(|| format!("in {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, steps, out, seed, log_every } => {
            let mut cfg = RunConfig::load(&config).with_context(|| format!("in {}", config.display()))?;
            if let Some(s) = steps {
                cfg.training.steps = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let total = cfg.training.steps;
            pipeline::train(&cfg, &out, |step, loss, lr| {
                if log_every > 0 && (step % log_every == 0 || step == total) {
                    eprintln!("step {step}/{total} loss {loss:.5} lr {lr:.3e}");
                }
            })?;
            eprintln!("wrote {}", out.join(pipeline::FINAL_CHECKPOINT).display());
        }
        Command::Generate { ckpt, scenes, out, sampling, dump_attn, dump_masks } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let scenes = load_scenes(&scenes)?;
            let opts = GenerateOptions { dump_attention: dump_attn, dump_masks, ..sampling.options() };
            pipeline::generate(&ckpt, &scenes, &out, &opts)?;
        }
        Command::Evaluate { ckpt, scenes, oracle, out, sampling } => {
            let scenes = load_scenes(&scenes)?;
            let report = match (oracle, ckpt) {
                (true, _) => pipeline::evaluate(ImageSource::Oracle, &scenes, &Palette::default(), &sampling.options())?,
                (false, Some(path)) => {
                    let ckpt = load_checkpoint(&path)?;
                    pipeline::evaluate(ImageSource::Model(&ckpt), &scenes, &ckpt.palette, &sampling.options())?
                }
                (false, None) => bail!("--ckpt is required unless --oracle is given"),
            };
            match out {
                Some(p) => pipeline::write_report(&p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::Project { scenes, out } => {
            pipeline::project(&load_scenes(&scenes)?, &Palette::default(), &out)?;
        }
        Command::Scenes { config, split, count, out } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p).with_context(|| format!("in {}", p.display()))?,
                None => RunConfig::default(),
            };
            let c = &cfg.corpus;
            let (first, n) = match split {
                Split::Train => (c.train_first_seed, c.train_scenes),
                Split::Eval => (c.eval_first_seed, c.eval_scenes),
            };
            let scenes = generate_corpus(first, count.unwrap_or(n), &c.scene)?;
            write_text(out.as_deref(), &scenes_to_json(&scenes))?;
        }
    }
    Ok(())
}

fn main() -> std::process::ExitCode {
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
