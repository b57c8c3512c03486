use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::Result;
use crate::gradcheck::{check_gradients, GradcheckReport};
use crate::loss::{wml_loss, Labels, PairBatch};
use crate::model::HybridHashModel;
use crate::tensor::Tensor;

/// Labels cycling through `{0}, {0,1}, {1}, {2}`: similar, dissimilar and
/// fractional-overlap pairs all occur in any batch of four or more.
pub fn gradcheck_labels(batch: usize) -> Vec<Labels> {
    (0..batch).map(|i| [0b001, 0b011, 0b010, 0b100][i % 4]).collect()
}

/// Finite-difference check of the full model and loss in 64-bit on random
/// inputs, one report row per parameter.
pub fn run_gradcheck(config: &RunConfig) -> Result<GradcheckReport> {
    let g = &config.gradcheck;
    let model = HybridHashModel::<f64>::new(&config.model, g.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let s = config.model.image_size;
    let images = Tensor::<f64>::randn(&[g.batch_size, s, s, config.model.in_channels], 1.0, &mut rng);
    let pairs = PairBatch::from_labels(&gradcheck_labels(g.batch_size), None)?;
    let mut params = model.params.clone();
    check_gradients(
        &mut params,
        |p| {
            let tape = p[0].tape();
            let codes = model.net.forward(p, tape.constant(images.clone()), None)?;
            wml_loss(codes, &pairs, &config.loss)
        },
        g.step,
        g.tolerance,
    )
}
