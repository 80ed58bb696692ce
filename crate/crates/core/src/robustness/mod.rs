//! Clean and corrupted accuracy, the relative robustness score with
//! bootstrap intervals, and the robustness regression.

mod evaluate;
mod regression;
mod score;
mod table;

pub use evaluate::{brain_likeness, evaluate_accuracy, evaluate_on_suite, top1_accuracy, Classifier};
pub use regression::{regress_robustness, Coefficient, ModelRecord, RegressionResult};
pub use score::{
    bootstrap_accuracy_ci, bootstrap_ci, robustness_score, RobustnessReport, DEFAULT_BOOTSTRAP_REPS,
};
pub use table::AccuracyTable;
