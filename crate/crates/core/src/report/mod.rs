//! Run artifacts: metrics CSV, learning-curve plots, filter grids, and the resolved
//! configuration snapshot.

pub mod config;
pub mod filters;
pub mod font;
pub mod metrics;
pub mod plot;

pub use config::{RunConfig, CONFIG_FILE};
pub use filters::{export_filters, filter_grid, grid_layout, GridLayout};
pub use metrics::{parse_metrics_csv, read_metrics_csv, write_metrics_csv, METRICS_HEADER};
pub use plot::{plot_curves, render_curve, Series};
