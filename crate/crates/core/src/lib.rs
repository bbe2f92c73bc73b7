//! Clinical note generation from ICD codes with retrieval, SNOMED CT
//! knowledge-graph context and four prompt strategies, plus the statistics
//! used to compare generated notes against ground truth.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod generate;
mod hashing;
mod http;
pub mod index;
pub mod pipeline;
pub mod prompt;
pub mod retry;
pub mod snomed;
mod tsv;

pub use error::{Error, Result, Warning};
pub use hashing::digest_hex;
