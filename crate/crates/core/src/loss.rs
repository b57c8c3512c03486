//! Weighted maximum-likelihood pairwise loss.
//!
//! For every unordered pair `i < j` of a batch, with `ip` the inner product
//! of the two continuous codes, `sim` 1 for similar pairs and 0 otherwise:
//!
//! ```text
//! loss   = Σ weight · ( log(1 + exp(α·ip)) − α · sim · ip )
//! weight = jaccard · pairs / similar_pairs       for similar pairs
//!          jaccard · pairs / dissimilar_pairs    for dissimilar pairs
//! ```
//!
//! Each term is the negative log of a Bernoulli likelihood whose success
//! probability is `1 / (1 + e^(−α·ip))`.

use crate::error::{Error, Result};
use crate::tensor::{sigmoid_scalar, softplus_scalar, Scalar, Tensor, Var};

/// Label set of one item as a bitmask over at most 64 classes.
pub type Labels = u64;

/// Where `|S|`, `|S1|` and `|S0|` are counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightScope {
    Batch,
    /// Over all pairs of the training split; supplied by the caller.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossNormalization {
    /// Divide the weighted sum by the number of pairs.
    MeanOverPairs,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub scope: WeightScope,
    pub normalization: LossNormalization,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            scope: WeightScope::Batch,
            normalization: LossNormalization::MeanOverPairs,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("loss alpha {} must be positive", self.alpha)));
        }
        Ok(())
    }
}

/// Two items are similar when their label sets intersect.
pub fn is_similar(a: Labels, b: Labels) -> bool {
    a & b != 0
}

/// Jaccard index of the label sets for similar pairs, 1 for dissimilar ones.
pub fn continuous_similarity(a: Labels, b: Labels) -> f64 {
    let inter = (a & b).count_ones();
    if inter == 0 {
        1.0
    } else {
        inter as f64 / (a | b).count_ones() as f64
    }
}

/// `1 / (1 + e^(−αx))`.
pub fn adaptive_sigmoid(x: f64, alpha: f64) -> f64 {
    sigmoid_scalar(alpha * x)
}

/// Unweighted loss of one pair: `log(1+e^(α·ip)) − α·s·ip`.
pub fn pair_loss(inner_product: f64, similar: bool, alpha: f64) -> f64 {
    let z = alpha * inner_product;
    // softplus(z) − z == softplus(−z), without the cancellation.
    if similar {
        softplus_scalar(-z)
    } else {
        softplus_scalar(z)
    }
}

/// Similar and dissimilar pair counts over unordered pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PairStats {
    pub similar: usize,
    pub dissimilar: usize,
}

impl PairStats {
    pub fn from_labels(labels: &[Labels]) -> Self {
        let mut s = Self::default();
        for (i, &a) in labels.iter().enumerate() {
            for &b in &labels[i + 1..] {
                if is_similar(a, b) {
                    s.similar += 1;
                } else {
                    s.dissimilar += 1;
                }
            }
        }
        s
    }

    /// Same counts as [`PairStats::from_labels`] in time quadratic only in
    /// the number of distinct label sets.
    pub fn from_population(labels: &[Labels]) -> Self {
        let mut counts: Vec<(Labels, usize)> = Vec::new();
        let mut sorted = labels.to_vec();
        sorted.sort_unstable();
        for l in sorted {
            match counts.last_mut() {
                Some((last, n)) if *last == l => *n += 1,
                _ => counts.push((l, 1)),
            }
        }
        let mut s = Self::default();
        for (i, &(a, na)) in counts.iter().enumerate() {
            // Identical non-empty label sets always share a class.
            s.similar += na * (na - 1) / 2;
            for &(b, nb) in &counts[i + 1..] {
                if is_similar(a, b) {
                    s.similar += na * nb;
                } else {
                    s.dissimilar += na * nb;
                }
            }
        }
        s
    }

    pub fn total(&self) -> usize {
        self.similar + self.dissimilar
    }

    fn check(&self) -> Result<()> {
        if self.similar == 0 || self.dissimilar == 0 {
            return Err(Error::DegenerateBatch {
                similar: self.similar,
                dissimilar: self.dissimilar,
            });
        }
        Ok(())
    }
}

/// One unordered pair of a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub similar: bool,
    pub continuous: f64,
    pub weight: f64,
}

/// All `i < j` pairs of a batch with their similarity and weight.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub size: usize,
    pub pairs: Vec<Pair>,
    pub stats: PairStats,
}

impl PairBatch {
    /// Derives `s`, `c` and `w` from label sets. `global` supplies the pair
    /// counts when weighting over the whole training split.
    pub fn from_labels(labels: &[Labels], global: Option<PairStats>) -> Result<Self> {
        let batch_stats = PairStats::from_labels(labels);
        batch_stats.check()?;
        let stats = global.unwrap_or(batch_stats);
        stats.check()?;
        let total = stats.total() as f64;
        let w_sim = total / stats.similar as f64;
        let w_dis = total / stats.dissimilar as f64;
        let mut pairs = Vec::with_capacity(batch_stats.total());
        for (i, &a) in labels.iter().enumerate() {
            for (j, &b) in labels.iter().enumerate().skip(i + 1) {
                let similar = is_similar(a, b);
                let continuous = continuous_similarity(a, b);
                pairs.push(Pair {
                    i,
                    j,
                    similar,
                    continuous,
                    weight: continuous * if similar { w_sim } else { w_dis },
                });
            }
        }
        Ok(Self {
            size: labels.len(),
            pairs,
            stats: batch_stats,
        })
    }

    /// A batch with explicitly given pairs and weights.
    pub fn from_pairs(size: usize, pairs: Vec<Pair>) -> Result<Self> {
        let mut stats = PairStats::default();
        for p in &pairs {
            if p.i >= p.j || p.j >= size {
                return Err(Error::Data(format!("pair ({}, {}) invalid for batch of {size}", p.i, p.j)));
            }
            if p.similar {
                stats.similar += 1;
            } else {
                stats.dissimilar += 1;
            }
        }
        Ok(Self { size, pairs, stats })
    }

    /// Dense `[N, N]` similarity and weight matrices (upper triangle only).
    fn matrices<T: Scalar>(&self) -> (Tensor<T>, Tensor<T>) {
        let n = self.size;
        let mut s = Tensor::zeros(&[n, n]);
        let mut w = Tensor::zeros(&[n, n]);
        for p in &self.pairs {
            if p.similar {
                s.data_mut()[p.i * n + p.j] = T::one();
            }
            w.data_mut()[p.i * n + p.j] = T::lit(p.weight);
        }
        (s, w)
    }
}

/// Weighted pairwise loss of `codes` `[N, K]` as a scalar on the codes' tape.
pub fn wml_loss<'t, T: Scalar>(codes: Var<'t, T>, batch: &PairBatch, cfg: &LossConfig) -> Result<Var<'t, T>> {
    cfg.validate()?;
    let shape = codes.shape();
    if shape.len() != 2 || shape[0] != batch.size {
        return Err(Error::dim("wml_loss", &shape, &[batch.size, 0]));
    }
    if batch.pairs.is_empty() {
        return Err(Error::DegenerateBatch {
            similar: 0,
            dissimilar: 0,
        });
    }
    let tape = codes.tape();
    let (s, w) = batch.matrices::<T>();
    let (s, w) = (tape.constant(s), tape.constant(w));
    let z = codes.matmul(codes.transpose()?)?.scale(T::lit(cfg.alpha));
    let per_pair = z.softplus().sub(z.mul(s)?)?;
    let mut loss = per_pair.mul(w)?.sum();
    if cfg.normalization == LossNormalization::MeanOverPairs {
        loss = loss.scale(T::lit(1.0 / batch.pairs.len() as f64));
    }
    let value = loss.value().item();
    if !value.is_finite() {
        let zv = z.value();
        let n = batch.size;
        let culprit = batch
            .pairs
            .iter()
            .find(|p| !zv.data()[p.i * n + p.j].is_finite())
            .map(|p| format!("pair ({}, {}) has scaled inner product {}", p.i, p.j, zv.data()[p.i * n + p.j]))
            .unwrap_or_else(|| "no single pair is non-finite; check the weights".into());
        return Err(Error::NonFinite(format!("loss is {value}: {culprit}")));
    }
    Ok(loss)
}
