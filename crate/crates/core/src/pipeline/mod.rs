//! Training, rendering, evaluation and the preset registry.

mod eval;
mod metrics;
mod model;
mod preset;
mod render;
mod train;

pub use eval::{ablate_masking, evaluate, AblationRow, EvalReport, ViewMetrics};
pub use metrics::{foreground_mask, mask_iou, mse, psnr, ssim, PSNR_CAP, SSIM_WINDOW};
pub use model::{GNelf, Precision, SceneInfo, TrainState};
pub use preset::{DecoderSettings, OptimizerConfig, PresetConfig, SceneMode, PRESET_NAMES};
pub use render::{RenderOptions, RENDER_CHUNK};
pub use train::{train, BatchGradients, TrainLog, TrainRecord, Trainer, TRAIN_CHUNK};
