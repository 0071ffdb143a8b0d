use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::sample::{sample_table, DEFAULT_SAMPLE_CAP, DEFAULT_SEED};
use super::table::{Column, ColumnType, ResultTable};
use super::AnalyticsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalStats {
    pub distinct_count: usize,
    pub frequencies: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stats {
    Numeric(NumericStats),
    Categorical(CategoricalStats),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableProfile {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ColumnType,
    pub stats: Stats,
    pub missing_count: usize,
}

impl VariableProfile {
    pub fn numeric(&self) -> Option<&NumericStats> {
        match &self.stats {
            Stats::Numeric(s) => Some(s),
            Stats::Categorical(_) => None,
        }
    }

    pub fn categorical(&self) -> Option<&CategoricalStats> {
        match &self.stats {
            Stats::Categorical(s) => Some(s),
            Stats::Numeric(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub table: String,
    pub row_count: usize,
    pub sample_size: usize,
    pub variables: Vec<VariableProfile>,
}

/// Two-pass mean and population std. `None` for an empty slice.
pub fn numeric_stats(values: &[f64]) -> Option<NumericStats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = (values.iter().sum::<f64>() / n).clamp(min, max);
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(NumericStats {
        min,
        max,
        mean,
        std: var.sqrt(),
    })
}

fn frequencies(column: &Column) -> CategoricalStats {
    let mut frequencies = BTreeMap::new();
    for cell in column.values.iter().filter(|c| !c.is_missing()) {
        *frequencies.entry(cell.render()).or_insert(0) += 1;
    }
    CategoricalStats {
        distinct_count: frequencies.len(),
        frequencies,
    }
}

pub fn profile_column(column: &Column) -> VariableProfile {
    let numbers: Vec<f64> = column.numbers().collect();
    let stats = match numeric_stats(&numbers) {
        Some(s) if column.kind.is_numeric() => Stats::Numeric(s),
        _ => Stats::Categorical(frequencies(column)),
    };
    VariableProfile {
        name: column.name.clone(),
        kind: column.kind,
        stats,
        missing_count: column.missing_count(),
    }
}

/// Profiles every column of `table` exactly.
pub fn profile(table: &ResultTable) -> Result<Vec<VariableProfile>, AnalyticsError> {
    if table.row_count() == 0 {
        return Err(AnalyticsError::EmptyTable);
    }
    Ok(table.columns().iter().map(profile_column).collect())
}

/// Profiles a uniform row sample of at most the default cap.
pub fn profile_report(table: &ResultTable) -> Result<ProfileReport, AnalyticsError> {
    let (sampled, sample_size) = sample_table(table, DEFAULT_SAMPLE_CAP, DEFAULT_SEED);
    Ok(ProfileReport {
        table: table.name.clone(),
        row_count: table.row_count(),
        sample_size,
        variables: profile(&sampled)?,
    })
}
