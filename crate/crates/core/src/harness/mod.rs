//! Data curation, synthetic data, the two-phase training schedule, the
//! video enhancement driver, and run configuration.

mod config;
mod crops;
mod data;
mod enhance;
mod synth;
mod train;

pub use config::Config;
pub use crops::{luma_histogram, select_crops_from, select_training_crops, uniformity_score, CropSelection, HIST_BINS};
pub use data::{
    load_paired_dataset, load_video, save_paired_dataset, save_video, FramePairSample, PairedSample, VideoData,
};
pub use enhance::{enhance_video, enhance_video_with, EnhanceManifest, EnhanceOptions, MANIFEST_NAME};
pub use synth::{
    depth_field, make_paired_samples, make_synthetic_dataset, make_synthetic_video, procedural_scene, value_noise,
    DepthMode, SynthSettings, WaterRanges,
};
pub use train::{backscatter_free, fine_tune_spatial, train_spatial, train_temporal, StageTraining, StepLog, TrainOutcome};
