//! Error metrics, comparison methods, ablation sweeps and exports.

pub mod baselines;
pub mod export;
pub mod metrics;
pub mod sequence;
pub mod sweep;

pub use baselines::{
    baseline_local, baseline_lbs, baseline_pca_regression, evaluate_bundle, EvalContext, LocalAudit, PcaRegression,
};
pub use export::{export_heatmap, export_histogram};
pub use metrics::{reconstruction_errors, ErrorReport};
pub use sequence::{evaluate_poses, keyframe_sequence};
pub use sweep::{sweep, sweep_csv, write_sweep_csv, SweepBase, SweepProtocol, SweepRow};
