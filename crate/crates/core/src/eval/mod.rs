//! Metrics, per-horizon reports, and the ablation harness.

mod kmeans;
mod metrics;
mod pipeline;

#[cfg(test)]
mod tests;

pub use kmeans::{kmeans, nearest, KMeans, DEFAULT_CLUSTERS, MAX_ITERATIONS};
pub use metrics::{compute_metrics, markdown_table, reports_csv, HorizonReport, Metrics, MAPE_EPS, STEP_MINUTES};
pub use pipeline::{build_case, run_forecasts, ForecastRun, PipelineConfig, RandomCentroidRetriever, Variant};
