//! Run configuration, checkpoint files, image files, and the end-to-end
//! train / generate / evaluate / project commands.

mod checkpoint;
mod commands;
mod config;
mod image;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use commands::{
    checkpoint_name, default_vocabulary, evaluate, generate, generate_views, project, train, write_report,
    GenerateOptions, GeneratedScene, ImageSource, FINAL_CHECKPOINT, METRICS_FILE,
};
pub use config::{CorpusConfig, DiffusionConfig, RunConfig, TrainingConfig};
pub use image::{
    byte_to_signed, decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, signed_to_byte, unit_to_byte,
    write_pgm, write_ppm,
};
