use rand::seq::index::sample;
use rand::Rng;

use super::ImageDataset;
use crate::error::{Error, Result};
use crate::loss::{is_similar, PairStats};

/// Draws `batch_size` distinct indices uniformly, redrawing up to
/// `max_resample` times until the batch holds at least one similar and one
/// dissimilar pair.
pub fn sample_pair_batch<R: Rng + ?Sized>(
    ds: &ImageDataset,
    batch_size: usize,
    max_resample: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if batch_size < 2 || batch_size > ds.len() {
        return Err(Error::Config(format!(
            "batch size {batch_size} must be in 2..={} (training images)",
            ds.len()
        )));
    }
    check_label_diversity(ds)?;
    let mut last = PairStats::default();
    for _ in 0..=max_resample {
        let mut indices = sample(rng, ds.len(), batch_size).into_vec();
        indices.sort_unstable();
        let labels: Vec<_> = indices.iter().map(|&i| ds.labels()[i]).collect();
        last = PairStats::from_labels(&labels);
        if last.similar > 0 && last.dissimilar > 0 {
            return Ok(indices);
        }
    }
    Err(Error::DegenerateBatch {
        similar: last.similar,
        dissimilar: last.dissimilar,
    })
}

/// Fails unless the split contains both a similar and a dissimilar pair.
fn check_label_diversity(ds: &ImageDataset) -> Result<()> {
    let mut distinct: Vec<u64> = ds.labels().to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let has_dissimilar = distinct
        .iter()
        .enumerate()
        .any(|(i, &a)| distinct[i + 1..].iter().any(|&b| !is_similar(a, b)));
    let has_similar = distinct.len() < ds.len()
        || distinct
            .iter()
            .enumerate()
            .any(|(i, &a)| distinct[i + 1..].iter().any(|&b| is_similar(a, b)));
    if !has_dissimilar || !has_similar {
        return Err(Error::Config(format!(
            "training split cannot form mixed batches ({} distinct label sets over {} images)",
            distinct.len(),
            ds.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labelled(labels: Vec<u64>, classes: usize) -> ImageDataset {
        let n = labels.len();
        ImageDataset::new((1, 1, 1), classes, vec![0; n], labels).unwrap()
    }

    #[test]
    fn batches_are_distinct_and_mixed() {
        let ds = labelled((0..40).map(|i| 1 << (i % 4)).collect(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let idx = sample_pair_batch(&ds, 8, 100, &mut rng).unwrap();
            let mut sorted = idx.clone();
            sorted.dedup();
            assert_eq!(sorted.len(), 8);
            let labels: Vec<_> = idx.iter().map(|&i| ds.labels()[i]).collect();
            let stats = PairStats::from_labels(&labels);
            assert!(stats.similar > 0 && stats.dissimilar > 0);
        }
    }

    #[test]
    fn similar_fraction_matches_class_balance() {
        let ds = labelled((0..1000).map(|i| 1 << (i % 10)).collect(), 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut sim, mut total) = (0usize, 0usize);
        for _ in 0..1000 {
            let idx = sample_pair_batch(&ds, 64, 100, &mut rng).unwrap();
            let labels: Vec<_> = idx.iter().map(|&i| ds.labels()[i]).collect();
            let s = PairStats::from_labels(&labels);
            sim += s.similar;
            total += s.total();
        }
        let frac = sim as f64 / total as f64;
        assert!((frac - 0.1).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn single_class_is_a_config_error() {
        let ds = labelled(vec![1; 10], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_pair_batch(&ds, 4, 10, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn all_distinct_disjoint_labels_is_a_config_error() {
        let ds = labelled(vec![1, 2, 4, 8], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_pair_batch(&ds, 4, 10, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn exhausted_resampling_reports_degenerate_batch() {
        // A batch of two holds one pair, so it is never mixed.
        let ds = labelled((0..20).map(|i| 1 << (i % 10)).collect(), 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_pair_batch(&ds, 2, 0, &mut rng),
            Err(Error::DegenerateBatch { .. })
        ));
    }

    #[test]
    fn rejects_oversized_batch() {
        let ds = labelled(vec![1, 1, 2, 2], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_pair_batch(&ds, 5, 10, &mut rng), Err(Error::Config(_))));
    }
}
