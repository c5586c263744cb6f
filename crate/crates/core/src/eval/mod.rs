//! Metrics, uncertainty summaries, inference and robustness sweeps.

mod inference;
mod metrics;
mod report;
mod sweep;

pub use inference::{fused_embeddings, harmonic_mean, predict_dataset, uncertainty_scalar, Calibration, Prediction};
pub use metrics::{
    average_ranks, classification_metrics, mae, pearson, regression_metrics, spearman, ClassificationMetrics,
    MetricScheme, RegressionMetrics,
};
pub use report::{evaluate, mean_columns, run_calibration, summarize, ModalityMeans, Report};
pub use sweep::{robustness_sweep, sweep_csv, Protocol, SweepRow, SweepSpec};
