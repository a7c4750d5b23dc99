//! Retrieval metrics and the experiment runner.
//!
//! [`run_experiment`] generates the procedural corpora, trains the configured
//! index, adds the references, activates the positive queries and evaluates
//! every query transformation in passive and active mode. Reports are
//! deterministic given the configuration; wall-clock timings are kept in a
//! separate [`Timing`] record.
//!
//! Micro-AP keeps the best of the top `k` candidates of every query, positive
//! and negative, and sweeps a global distance threshold over them.

mod config;
mod experiment;
mod metrics;

pub use config::{default_transforms, CorpusConfig, ExperimentConfig, ExtractorConfig, Mode, RetrievalConfig};
pub use experiment::{
    activate_images, build_index, corpus_seed, evaluate, extract_rows, run_experiment, run_with_bank, write_report,
    write_timing, ActivationSummary, EvalReport, ExperimentOutput, FeatureBank, ModeSummary, QualitySummary,
    QuerySet, StageTime, Timing, TransformResult,
};
pub use metrics::{
    best_pairs, decomposition_check, ivf_failure_rate, micro_ap, micro_ap_from_pairs, recall_at_1, recall_at_1_from,
    recall_bound_check, search_all, Decomposition, PrCurve, PrPoint, RecallBound, ScoredPair,
};
