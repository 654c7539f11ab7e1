//! Dataset-level scores, per-image distributions and boundary displacement.

pub mod boundary;
pub mod cdf;
pub mod confusion;
pub mod csv;

pub use boundary::{bde_class, bde_directed, bde_report, extract_boundary, Bde, BoundarySet, ClassBde};
pub use cdf::{metric_cdf, MetricCdf, Summary};
pub use confusion::{per_image_metrics, ClassMetrics, ConfusionMatrix, DatasetMetrics};
pub use csv::{cdf_csv, write_evaluation, EvaluationReport, ImageScore};
