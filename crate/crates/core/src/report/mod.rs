//! Error statistics, comparison tables and figure data.

mod emit;
mod stats;

pub use emit::{comparison_csv, emit, Artifact, MANIFEST};
pub use stats::{build_comparison, error_stats, ComparisonRow, ErrorSeries, ErrorSummary, Split, SplitStats};
