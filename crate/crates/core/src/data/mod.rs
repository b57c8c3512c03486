//! Image datasets, augmentation, pair-batch sampling and synthetic data.

mod augment;
mod dataset;
mod sampler;
mod synth;

pub use augment::{hflip_hwc, AugmentConfig, Augmenter, NormStats};
pub use dataset::{DatasetSplits, ImageDataset, Split};
pub use sampler::sample_pair_batch;
pub use synth::{generate_splits, generate_synthetic};
