//! LMS secondary-path identification and the filtered-x LMS anti-noise engine.

mod convergence;
mod fxlms;
mod identify;
mod lms;

pub use convergence::{
    convergence_time, detect_convergence, window_rms, ConvergenceMonitor, STABLE_PAIRS,
};
pub use fxlms::FxLms;
pub use identify::{
    calibrate_drive_power, estimate_secondary_path, relative_l2, IdentificationParams,
    ResponsePlant, SecondaryPathModel, ELEVATED_RESIDUAL_RATIO, MODEL_FORMAT_VERSION,
};
pub use lms::{stability_bound, AdaptiveFir, DIVERGENCE_NORM};
