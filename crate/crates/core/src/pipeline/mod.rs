//! End-to-end plumbing behind the CLI: config, synthetic data, staged
//! training, the validation grid and conditioned sampling.

pub mod commands;
mod config;
mod data;
mod generate;
pub mod synth;
mod train;
mod validate;

pub use config::{KitConfig, StageConfig, TextConfig, ValidateConfig, MAX_NOISE_DRAWS, SEED_ENV};
pub use data::{caption_tokens, fit_clip, meta, LatentStore};
pub use generate::{generate, ConditionInput, GenerateRequest};
pub use synth::{make_synthetic, read_dataset, write_dataset, DatasetEntry, Motion, Split, SynthClip, SynthSpec};
pub use train::{draw_sample, loss_record, smoothed, SampleDraw, StageSummary, StepReport, TrainState, Trainer, LOSS_COLUMNS};
pub use validate::{cell_clips, cell_noise, evaluate_grid, zero_model_reference, GridCell, ValidationGrid, GRID_LENGTHS};
