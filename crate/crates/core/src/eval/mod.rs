//! Metrics and statistical tests behind paired model comparison.

mod compare;
mod embeddings;
mod metrics;
mod stats;

pub use compare::{compare_models, replicate_macro_f1, Comparison, EvalReport, Predictions, PAIRING_NOTE, ZERO_DIVISION_NOTE};
pub use embeddings::{argmax, export_embeddings};
pub use metrics::{
    classification_metrics, confusion_matrix, detail_metrics, macro_f1, BinaryScores, ConfusionMatrix, DetailReport, MetricsReport,
    DETAIL_NAMES,
};
pub use stats::{
    average_ranks, bootstrap_ci, bootstrap_indices, percentile_interval, quantile_sorted, wilcoxon_signed_rank, BootstrapCi,
    StatTestResult, Tail, EXACT_MAX_N, MIN_PAIRS,
};
