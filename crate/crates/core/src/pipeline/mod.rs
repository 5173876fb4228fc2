//! Label remapping, missingness pruning, KNN imputation and fold planning.

pub mod dataset;
pub mod folds;
pub mod impute;
pub mod labels;
pub mod prune;

pub use dataset::{preprocess, ClientDataset, Preprocessed};
pub use folds::{plan_folds, FoldPlan, DEFAULT_FOLDS};
pub use impute::knn_impute;
pub use labels::{class_index, map_label, N_CLASSES};
pub use prune::{prune_features, MissingnessEntry, PreprocessConfig};
