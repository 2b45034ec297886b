//! One-vs-rest linear SVMs, softmax score normalization and evaluation metrics.

mod metrics;
mod svm;

pub use metrics::{argmax, average_precision, mean_average_precision, top1_accuracy, EvalReport, Metric};
pub use svm::{predict_probs, softmax, train_binary, train_ovr, BinarySvm, LinearSvmModel, SvmConfig};

/// Default soft-margin penalty.
pub const DEFAULT_C: f64 = 100.0;
