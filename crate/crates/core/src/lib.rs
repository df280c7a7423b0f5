//! Behavioural segmentation of investment clients.
//!
//! The crate turns raw KYC and transaction tables into a mixed-type feature
//! matrix (recency, frequency, monetary and profile attributes), clusters it
//! with k-prototypes, scores partitions with Silhouette and Davies-Bouldin,
//! embeds clients with exact t-SNE and compares per-cluster risk tolerance
//! distributions with a battery of parametric and rank-based tests.
//!
//! Every stochastic step takes an explicit seed; given the same inputs and
//! seeds all outputs are bit-identical.

pub mod cluster;
pub mod embed;
pub mod error;
pub mod features;
pub mod ingest;
pub mod model_select;
pub mod numeric;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
