//! Profiling, correlation, transformation and visualization
//! recommendation over result tables.

mod classify;
mod color;
mod correlation;
pub mod formula;
mod profile;
mod recommend;
mod sample;
mod table;
mod transform;

use thiserror::Error;

pub use classify::{classify_correlation, flag_variables, CorrelationClass, Thresholds, VariableBounds, VariableFlag};
pub use color::{color_for, Rgb, GREEN, RED, YELLOW};
pub use correlation::{correlations, correlations_exact, pearson, CorrelationEntry, CorrelationMatrix};
pub use profile::{
    numeric_stats, profile, profile_column, profile_report, CategoricalStats, NumericStats, ProfileReport, Stats,
    VariableProfile,
};
pub use recommend::{recommend, Visualization, VisualizationRecommendation};
pub use sample::{sample_indices, sample_table, DEFAULT_SAMPLE_CAP, DEFAULT_SEED};
pub use table::{
    infer_types, parse_number, parse_timestamp, Cell, Column, ColumnManifest, ColumnType, ResultTable, TableManifest,
    INFERENCE_SHARE,
};
pub use transform::{apply_transforms, Action, Scaling, SummaryStat, TransformOutcome, TransformationProfile};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("table has no rows")]
    EmptyTable,
    #[error("need at least two numeric columns, found {0}")]
    NotEnoughNumericColumns(usize),
    #[error("correlation {0} outside [-1, 1]")]
    OutOfRange(f64),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{0}` is not numeric")]
    NotNumeric(String),
    #[error("variable `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("formula `{expression}` at {position}: {reason}")]
    FormulaParse {
        expression: String,
        position: usize,
        reason: String,
    },
    #[error("thresholds must satisfy 0 < moderate < good <= 1 (good {good}, moderate {moderate})")]
    InvalidThresholds { good: f64, moderate: f64 },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("column `{0}` length differs from the table")]
    RaggedColumn(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
}

#[cfg(test)]
mod tests;
