//! Many-shot regurgitation auditing.
//!
//! A document is split into an even number of segments and replayed to a
//! chat model as a faux conversation; the model's completion of the
//! held-out final segment is compared word by word against the original.
//! Counting maximal verbatim runs per length threshold gives one frequency
//! array per cohort, and the arrays of documents published before and after
//! a model's training cutoff are compared with rank-based statistics.

pub mod corpus;
pub mod gateway;
pub mod matching;
pub mod prompt;
pub mod runner;
pub mod stats;
pub mod synthetic;

pub use corpus::{load_corpus, tokenize, Cohort, Document, TokenizedDocument};
pub use gateway::{Backend, BackendSpec, Gateway, GatewayError, GenerationParams, GenerationRecord, ResponseCache};
pub use matching::{frequency_array, longest_common_substring_len, maximal_common_substrings, sum_arrays, FrequencyArray, MaximalMatch};
pub use prompt::{build_transcript, render_segment, segment, Segmentation, Transcript};
pub use runner::{emit_report, run_audit, AuditError, AuditReport, CohortGateways, ExperimentConfig};
pub use stats::{chi2_sf, cliffs_delta, compare_cohorts, kruskal_wallis, ks_distance, CohortComparison};
