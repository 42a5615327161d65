//! Leave-one-patient-out evaluation, AUROC inference and method comparison.

pub mod cv;
pub mod metrics;
pub mod pipeline;
mod report;

pub use cv::{make_folds, nested_select, patient_groups, Fold, FoldPlan, Selection, Standardizer, TrainingSet};
pub use metrics::{
    auroc, contingency, delong_ci, delong_ztest, roc_curve, top_differences, trapezoid_area, ConfidenceInterval,
    Contingency, ZTest,
};
pub use pipeline::{
    audit_leakage, evaluate, evaluate_with, method_distances, Comparison, EvalConfig, EvalReport, FoldTrace,
    MethodResult,
};
