//! Evaluation protocol: configuration, dataset splits, multi-trial runs,
//! reports, and the synthetic dataset generator.

pub mod config;
pub mod experiment;
pub mod report;
pub mod synth;

pub use config::{Ablation, ExperimentConfig, Preset, SynthConfig};
pub use experiment::{
    encode_all, evaluate, extract_features, load_or_generate, run_experiment, run_experiment_on,
    split_dataset, with_threads, DatasetSplit, ExtractOutput, ImageRef,
};
pub use report::{ClassAccuracy, Report, StageTimings, TrialOutcome, TrialResult};
pub use synth::generate_synthetic_dataset;

/// 64-bit FNV-1a; stable across builds and platforms.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf29ce484222325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}
