//! The hashing network and its checkpoint format.

mod checkpoint;
mod config;
mod net;

pub use checkpoint::Checkpoint;
pub use config::{Interaction, ModelConfig, StagePlan};
pub use net::{aggregate_blocks, disaggregate_blocks, HybridHash, HybridHashModel};
