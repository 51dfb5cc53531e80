//! Cross-validated experiment runs over a declarative config, regime
//! comparison, report tables and submission packaging.

mod compare;
mod config;
mod package;
mod report;
mod runner;

pub use compare::{compare_regimes, compare_summaries, RegimeComparison};
pub use config::{ExperimentConfig, EXPERIMENT_KEYS};
pub use package::{
    ensemble_mode, ensemble_proba, evaluate_labeled, package_submission, predicted_label, Evaluation, Submission,
    PREDICTIONS_HEADER, PRELIMINARY_NOTE,
};
pub use report::render_report;
pub use runner::{
    current_seed, load_run, run_cv_experiment, set_determinism, FoldOutcome, RunArtifacts,
    COMPLETE_MARKER, INCOMPLETE_MARKER,
};
