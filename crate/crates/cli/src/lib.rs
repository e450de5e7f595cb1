//! Batch front end: configuration, CSV ingestion, orchestration of fits and
//! artifact emission.

// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod config;
pub mod ingest;
pub mod pipeline;

pub use config::{RunConfig, Task};
pub use ingest::{ingest_csv, SubjectLabel, SubjectTable};
pub use pipeline::{run, summarize, RunOutcome, RunStatus};
