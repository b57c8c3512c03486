//! End-to-end commands: training, encoding, evaluation and gradient checking.

mod encode;
mod eval;
mod gradcheck;
mod train;

pub use encode::{encode_checkpoint, encode_dataset};
pub use eval::{evaluate, evaluate_checkpoint, EvalReport};
pub use gradcheck::{gradcheck_labels, run_gradcheck};
pub use train::{batch_rng, periodic_checkpoint_path, run_training, StepRecord, TrainSummary, Trainer};
