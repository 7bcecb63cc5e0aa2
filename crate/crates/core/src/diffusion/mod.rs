//! Pixel-space DDPM training with joint condition dropout, and DDIM sampling
//! with classifier-free guidance.

mod model;
mod sample;
mod schedule;
mod train;

pub use model::{DenoiserConfig, DenoiserModel, DenoiserOutput, MaskPyramid, LEVELS};
pub use sample::{cfg_predict, ddim_sample, predict_eps, AttentionSnapshot, SampleOptions, SceneCondition};
pub use schedule::{ddim_step, make_schedule, q_sample, NoiseSchedule};
pub use train::{diffusion_loss_in, train_iteration, training_step, TrainScene, TrainSettings};
