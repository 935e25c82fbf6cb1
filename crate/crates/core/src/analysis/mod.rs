//! Closed-form parameter and FLOP counts, latency-density metrics and the
//! report tables built from them.

mod count;
mod guideline;
mod metrics;
mod report;

pub use count::{count_block, count_model, count_op, Cost, CostReport};
pub use guideline::{
    density_grid, grid_config, guideline_report, order_comparison, Guideline, ACCURACY_NA, GRID_MAPS, GRID_TARGETS,
};
pub use metrics::{teraflops, teraparams, MetricRow};
pub use report::{cost_table, metrics_table, Table, REPORT_COLUMNS};
