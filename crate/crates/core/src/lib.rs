//! Multi-stage funnel classification.
//!
//! A funnel process evaluates a shrinking population over stages that each
//! reveal more features. This crate completes every row's unseen later-stage
//! features with an adversarial encoder / multi-task decoder ([`aemtd`]), then
//! trains a single multi-label classifier over all stage decisions with graph
//! smoothness and a reject-before-approve penalty ([`mlssl`]). Per-stage
//! baselines ([`baselines`]) and a cross-validation harness ([`eval`]) sit
//! alongside.

pub mod aemtd;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod labels;
pub mod mlssl;
pub mod nn;
pub mod schema;
pub mod synth;
pub mod util;

pub use dataset::{
    ingest_csv, ingest_csv_with_encoder, FeatureEncoder, FunnelDataset, IngestOptions, Outcome,
    RawTable, RowOutcomes,
};
pub use error::{ErrorKind, Result, StageError};
pub use labels::{to_label_matrix, FillPolicy, LabelMatrix};
pub use nn::{DenseNet, SgdConfig, FORMAT_VERSION};
pub use schema::{ColumnKind, SchemaFile, StageSchema};
pub use synth::{synth_funnel, synth_funnel_with_truth, SynthFunnelConfig};
