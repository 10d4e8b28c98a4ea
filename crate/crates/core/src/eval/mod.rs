//! Error-bound metrics, leave-one-device-out experiments, descriptor
//! distance maps and Pareto-front analysis.

mod distance;
mod loocv;
mod metrics;
mod pareto;
mod report;

pub use distance::{descriptor_distance_matrix, euclidean_distance_matrix, write_distance_csv};
pub use loocv::{loocv, loocv_with_progress, LoocvConfig, Method};
pub use metrics::{error_bound_accuracy, ErrorBoundReport, ERROR_BOUNDS};
pub use pareto::{
    pareto_agreement, pareto_front, pareto_table, write_pareto_csv, ParetoPoint, ParetoRow,
};
pub use report::{emit_report, LoocvReport, LoocvRow, ReportFormat, MEAN_ROW_DEVICE};
