//! Train-time augmentation (resize, random crop, horizontal flip) and the
//! deterministic eval transform (resize, centre crop).

use rand::Rng;

use super::ImageDataset;
use crate::error::{Error, Result};
use crate::tensor::{resize_bilinear_hwc, Tensor};

/// Per-channel normalisation statistics on the `[0, 1]` pixel scale.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    /// Smallest standard deviation used for a flat channel.
    const MIN_STD: f64 = 1e-3;

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn from_dataset(ds: &ImageDataset) -> Self {
        let c = ds.channels;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for i in 0..ds.len() {
            for px in ds.image(i).chunks_exact(c) {
                for (ch, &v) in px.iter().enumerate() {
                    let v = v as f64 / 255.0;
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let count = (ds.len() * ds.height * ds.width).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / count - m * m).max(0.0).sqrt().max(Self::MIN_STD)) as f32)
            .collect();
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub resize_to: usize,
    pub crop_to: usize,
    pub hflip_prob: f64,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_to == 0 || self.crop_to > self.resize_to {
            return Err(Error::Config(format!(
                "crop {} must be in 1..={} (the resize side)",
                self.crop_to, self.resize_to
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config(format!("hflip probability {} outside [0, 1]", self.hflip_prob)));
        }
        Ok(())
    }
}

/// Mirrors a channels-last image left to right.
pub fn hflip_hwc<T: Copy>(img: &[T], (h, w, c): (usize, usize, usize)) -> Vec<T> {
    let mut out = Vec::with_capacity(img.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let p = (y * w + x) * c;
            out.extend_from_slice(&img[p..p + c]);
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Augmenter {
    config: AugmentConfig,
    stats: NormStats,
}

impl Augmenter {
    pub fn new(config: AugmentConfig, stats: NormStats) -> Result<Self> {
        config.validate()?;
        if stats.std.len() != stats.mean.len() || stats.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("normalisation stds must be positive, one per channel".into()));
        }
        Ok(Self { config, stats })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.config
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    /// Transforms image `index` to a `[crop, crop, C]` buffer. `rng = None`
    /// selects the eval transform. The RNG draw order per image is fixed:
    /// crop row, crop column, flip.
    pub fn apply<R: Rng + ?Sized>(&self, ds: &ImageDataset, index: usize, rng: Option<&mut R>) -> Result<Vec<f32>> {
        let c = ds.channels;
        if c != self.stats.channels() {
            return Err(Error::Data(format!(
                "dataset has {c} channels, normalisation statistics have {}",
                self.stats.channels()
            )));
        }
        let AugmentConfig { resize_to: side, crop_to: crop, .. } = self.config;
        let raw: Vec<f32> = ds.image(index).iter().map(|&v| v as f32 / 255.0).collect();
        let resized = if ds.height == side && ds.width == side {
            raw
        } else {
            resize_bilinear_hwc(&raw, (ds.height, ds.width, c), (side, side))
        };
        let slack = side - crop;
        let (oy, ox, flip) = match rng {
            Some(rng) => {
                let oy = rng.random_range(0..=slack);
                let ox = rng.random_range(0..=slack);
                (oy, ox, rng.random::<f64>() < self.config.hflip_prob)
            }
            None => (slack / 2, slack / 2, false),
        };
        let mut out = Vec::with_capacity(crop * crop * c);
        for y in 0..crop {
            let row = ((oy + y) * side + ox) * c;
            out.extend_from_slice(&resized[row..row + crop * c]);
        }
        if flip {
            out = hflip_hwc(&out, (crop, crop, c));
        }
        for px in out.chunks_exact_mut(c) {
            for (ch, v) in px.iter_mut().enumerate() {
                *v = (*v - self.stats.mean[ch]) / self.stats.std[ch];
            }
        }
        Ok(out)
    }

    /// Stacks transformed images into `[B, crop, crop, C]`.
    pub fn batch<R: Rng + ?Sized>(
        &self,
        ds: &ImageDataset,
        indices: &[usize],
        mut rng: Option<&mut R>,
    ) -> Result<Tensor<f32>> {
        let crop = self.config.crop_to;
        let mut data = Vec::with_capacity(indices.len() * crop * crop * ds.channels);
        for &i in indices {
            if i >= ds.len() {
                return Err(Error::Data(format!("image index {i} out of range for {} images", ds.len())));
            }
            data.extend(self.apply(ds, i, rng.as_deref_mut())?);
        }
        Tensor::new(&[indices.len(), crop, crop, ds.channels], data)
    }
}
