//! Procedural multi-class image generator.
//!
//! Each class pairs a colour tint with an oriented texture (stripes,
//! checkerboard or concentric rings) at a class-specific frequency. Images
//! jitter the texture phase, orientation and contrast and add pixel noise.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DatasetSplits, ImageDataset};
use crate::error::{Error, Result};

const CHANNELS: usize = 3;
const NOISE_STD: f64 = 0.06;

struct ClassStyle {
    tint: [f64; 3],
    angle: f64,
    frequency: f64,
    family: usize,
}

impl ClassStyle {
    fn new(class: usize, classes: usize) -> Self {
        let hue = TAU * class as f64 / classes as f64;
        let tint = [0.0, 1.0, 2.0].map(|k| 0.5 + 0.5 * (hue - k * TAU / 3.0).cos());
        Self {
            tint,
            angle: PI * class as f64 / classes as f64,
            frequency: 2.0 + (class % 4) as f64,
            family: class % 3,
        }
    }

    /// Texture value in `[-1, 1]` at normalised coordinates `(u, v)`.
    fn texture(&self, u: f64, v: f64, angle: f64, phase: f64, centre: (f64, f64)) -> f64 {
        let (s, c) = angle.sin_cos();
        let along = u * c + v * s;
        let across = -u * s + v * c;
        let f = TAU * self.frequency;
        match self.family {
            0 => (f * along + phase).sin(),
            1 => (f * along + phase).sin() * (f * across + phase).sin(),
            _ => {
                let r = ((u - centre.0).powi(2) + (v - centre.1).powi(2)).sqrt();
                (f * r + phase).cos()
            }
        }
    }
}

/// Generates `per_class` single-label RGB images of side `size` for each of
/// `classes` classes, interleaved by class.
pub fn generate_synthetic<R: Rng + ?Sized>(
    classes: usize,
    per_class: usize,
    size: usize,
    rng: &mut R,
) -> Result<ImageDataset> {
    if !(1..=64).contains(&classes) || per_class == 0 || size == 0 {
        return Err(Error::Config(format!(
            "synthetic data needs 1..=64 classes, a positive count and size (got {classes}, {per_class}, {size})"
        )));
    }
    let styles: Vec<ClassStyle> = (0..classes).map(|c| ClassStyle::new(c, classes)).collect();
    let noise = Normal::new(0.0, NOISE_STD).expect("valid noise std");
    let n = classes * per_class;
    let mut pixels = Vec::with_capacity(n * size * size * CHANNELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let style = &styles[class];
        let phase = rng.random_range(0.0..TAU);
        let angle = style.angle + rng.random_range(-0.15..0.15);
        let contrast = rng.random_range(0.7..1.0);
        let centre = (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7));
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 + 0.5) / size as f64;
                let v = (y as f64 + 0.5) / size as f64;
                let t = style.texture(u, v, angle, phase, centre);
                for tint in style.tint {
                    let value = 0.15 + 0.7 * tint * (0.6 + 0.4 * contrast * t) + noise.sample(rng);
                    pixels.push((value.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        labels.push(1u64 << class);
    }
    ImageDataset::new((size, size, CHANNELS), classes, pixels, labels)
}

/// Train, query and database splits with `per_class`, `max(1, per_class / 5)`
/// and `per_class` images per class, each split from its own RNG stream.
pub fn generate_splits(classes: usize, per_class: usize, size: usize, seed: u64) -> Result<DatasetSplits> {
    let split = |stream: u64, count: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        generate_synthetic(classes, count, size, &mut rng)
    };
    Ok(DatasetSplits {
        train: split(0, per_class)?,
        query: split(1, (per_class / 5).max(1))?,
        database: split(2, per_class)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn correlation(a: &[u8], b: &[u8]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            let (dx, dy) = (x as f64 - ma, y as f64 - mb);
            ab += dx * dy;
            aa += dx * dx;
            bb += dy * dy;
        }
        ab / (aa * bb).sqrt()
    }

    #[test]
    fn same_class_images_correlate_more() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = generate_synthetic(5, 12, 16, &mut rng).unwrap();
        let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
        for i in 0..ds.len() {
            for j in i + 1..ds.len() {
                let r = correlation(ds.image(i), ds.image(j));
                if ds.labels()[i] == ds.labels()[j] {
                    within += r;
                    nw += 1;
                } else {
                    across += r;
                    na += 1;
                }
            }
        }
        let (within, across) = (within / nw as f64, across / na as f64);
        assert!(within > across + 0.05, "within {within}, across {across}");
    }

    #[test]
    fn splits_have_expected_sizes_and_are_seeded() {
        let a = generate_splits(3, 10, 8, 9).unwrap();
        assert_eq!((a.train.len(), a.query.len(), a.database.len()), (30, 6, 30));
        assert_eq!(a.train.class_histogram(), vec![10, 10, 10]);
        assert_eq!(a, generate_splits(3, 10, 8, 9).unwrap());
        assert_ne!(a.train, a.database);
    }

    #[test]
    fn rejects_bad_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(generate_synthetic(0, 1, 4, &mut rng).is_err());
        assert!(generate_synthetic(65, 1, 4, &mut rng).is_err());
    }
}
