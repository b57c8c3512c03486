//! Binary codes, Hamming-ranked retrieval and MAP@k.

mod code;
mod database;
mod map;

pub use code::{binarize, hamming_distance, HashCode};
pub use database::CodeDatabase;
pub use map::{average_precision, mean_average_precision, retrieve, run_retrieval, QueryResult, RetrievalRun};
