//! Caption metrics and rating aggregation.

pub mod cider;
pub mod ratings;
pub mod report;

pub use cider::{cider, cider_scores};
pub use ratings::{aggregate_ratings, read_ratings, Dimension, Judgment, RatingRecord};
pub use report::{coverage_report, EvalReport, ReportRow};
