use crate::data::{AugmentConfig, Augmenter, ImageDataset};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, HybridHashModel};
use crate::parallel::map_range;
use crate::retrieval::{binarize, CodeDatabase};

/// Images per forward pass when encoding.
const SHARD: usize = 32;

/// Eval-mode codes for every image of `ds`, ids `0..N` in dataset order.
/// Shards run in parallel and are merged in order.
pub fn encode_dataset(model: &HybridHashModel<f32>, augmenter: &Augmenter, ds: &ImageDataset) -> Result<CodeDatabase> {
    if ds.is_empty() {
        return Err(Error::Data("cannot encode an empty split".into()));
    }
    let shards = ds.len().div_ceil(SHARD);
    let codes = map_range(shards, |s| -> Result<_> {
        let indices: Vec<usize> = (s * SHARD..((s + 1) * SHARD).min(ds.len())).collect();
        let images = augmenter.batch::<rand_chacha::ChaCha8Rng>(ds, &indices, None)?;
        binarize(&model.encode(&images)?)
    });
    let mut all = Vec::with_capacity(ds.len());
    for shard in codes {
        all.extend(shard?);
    }
    CodeDatabase::sequential(model.config().hash_bits, ds.labels().to_vec(), all)
}

/// Encodes `ds` with a trained checkpoint. `resize_to` is the pre-crop side
/// used during training; `expected_bits` guards against a code-length mix-up.
pub fn encode_checkpoint(
    checkpoint: &Checkpoint,
    ds: &ImageDataset,
    resize_to: usize,
    expected_bits: Option<usize>,
) -> Result<CodeDatabase> {
    let bits = checkpoint.config.hash_bits;
    if let Some(k) = expected_bits.filter(|&k| k != bits) {
        return Err(Error::Config(format!("requested {k}-bit codes but the checkpoint produces {bits}")));
    }
    let norm = checkpoint
        .norm
        .clone()
        .ok_or_else(|| Error::Data("checkpoint carries no normalisation statistics".into()))?;
    let augmenter = Augmenter::new(
        AugmentConfig {
            resize_to,
            crop_to: checkpoint.config.image_size,
            hflip_prob: 0.0,
        },
        norm,
    )?;
    let model = HybridHashModel::from_params(&checkpoint.config, checkpoint.params.clone())?;
    encode_dataset(&model, &augmenter, ds)
}
