//! Model selection: trajectory validation error, loss and architecture sweeps, smoothness traces.

mod experiments;
mod smoothness;
mod tve;

pub use experiments::{
    compare_losses, grid_search, run_selection, ComparisonConfig, GridConfig, GridRow, GridSearchReport,
    LossComparisonReport, LossSamples, RejectedConfig, SelectionConfig, SelectionReport, SmoothnessConfig,
};
pub use smoothness::{fluctuation, smoothness_report, smoothness_trace, SmoothnessReport, SmoothnessTrace};
pub use tve::{pose_l1_error, tve, tve_model, TveReport};
