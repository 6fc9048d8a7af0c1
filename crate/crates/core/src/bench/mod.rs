//! Metrics, significance testing, timing and experiment sweeps.

pub mod metrics;
pub mod stats;
pub mod sweep;
pub mod timing;

pub use metrics::{confusion, evaluate, Confusion, Metrics};
pub use stats::{welch_t_test, WelchTest};
pub use sweep::{run_depth_sweep, run_grid, DataScale, DepthSpec, GridSpec, Report, ReportRow};
pub use timing::{time_inference, Timing};
