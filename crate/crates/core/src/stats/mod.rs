//! Diagnostic statistics: confusion matrices, ROC/AUC, exact intervals,
//! operating points, rater agreement and paired bootstrap tests.

mod agreement;
mod bootstrap;
mod confusion;
mod interval;
mod report;
mod roc;

pub use agreement::{cohen_kappa, fleiss_kappa, rating_counts};
pub use bootstrap::{bootstrap_compare, DEFAULT_REPLICATES, MIN_REPLICATES};
pub use confusion::ConfusionMatrix;
pub use interval::{
    beta_quantile, clopper_pearson, hanley_mcneil_ci, hanley_mcneil_se, incomplete_beta, z_critical,
};
pub use report::{
    augmentation_report, ClassIncrement, Increment, KappaMatrix, Labels, MetricsReport, ModelClassMetrics,
    ModelMetrics, OperatingPoint, Rate, ReaderClassMetrics, ReportConfig, TaskComparison, TaskMetrics,
    TaskResponses,
};
pub use roc::{auc, operating_points, operating_points_at, roc_curve, RocCurve, RocPoint, OPERATING_TARGET};

/// Running mean, which returns a repeated value unchanged; `None` if empty.
pub fn running_mean(values: &[f64]) -> Option<f64> {
    let (&first, rest) = values.split_first()?;
    let mut m = first;
    for (k, &v) in rest.iter().enumerate() {
        m += (v - m) / (k + 2) as f64;
    }
    Some(m)
}
