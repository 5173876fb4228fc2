//! Scores, metrics reports, evaluation protocols and figure-data tables.

pub mod figures;
pub mod protocol;
pub mod report;
pub mod scores;

pub use protocol::{
    centralized_split, evaluate_centralized, evaluate_federated, evaluate_federated_with, fold_rows, CentralizedSplit,
    EvalOptions, FederatedEvaluation, FoldHistory,
};
pub use report::{CountryMetrics, FoldMetrics, MetricsReport, OverallMetrics, ReportHeader, REPORT_SCHEMA_VERSION};
pub use scores::{
    accuracy, argmax_rows, auroc_ovr, binary_auroc, confusion_matrix, f1_from_confusion, f1_weighted, AurocReport,
};
