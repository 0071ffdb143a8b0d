use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::classify::{Thresholds, VariableBounds};
use super::formula::{parse_formula, EvalError};
use super::profile::numeric_stats;
use super::table::{Cell, Column, ColumnType, ResultTable};
use super::AnalyticsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    Factor(f64),
    Standardize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryStat {
    Mean,
    Min,
    Max,
    Std,
    Sum,
    Count,
}

impl SummaryStat {
    pub fn as_str(self) -> &'static str {
        match self {
            SummaryStat::Mean => "mean",
            SummaryStat::Min => "min",
            SummaryStat::Max => "max",
            SummaryStat::Std => "std",
            SummaryStat::Sum => "sum",
            SummaryStat::Count => "count",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    /// Rescales `var` in place.
    Scale { var: String, by: Scaling },
    /// Broadcasts a summary statistic of `var` into column `<var>_<stat>`.
    Summarize { var: String, stat: SummaryStat },
    /// Adds or overwrites `name` with an expression over columns.
    Formula { name: String, expression: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformationProfile {
    pub name: String,
    pub actions: Vec<Action>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub bounds: VariableBounds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformOutcome {
    pub table: ResultTable,
    /// Rows whose formula hit a zero divisor and were set missing.
    pub division_by_zero_rows: BTreeSet<usize>,
}

fn numeric_column<'a>(table: &'a ResultTable, var: &str) -> Result<&'a Column, AnalyticsError> {
    let c = table
        .column(var)
        .ok_or_else(|| AnalyticsError::UnknownVariable(var.to_string()))?;
    if !c.kind.is_numeric() {
        return Err(AnalyticsError::NotNumeric(var.to_string()));
    }
    Ok(c)
}

pub fn apply_transforms(table: &ResultTable, profile: &TransformationProfile) -> Result<TransformOutcome, AnalyticsError> {
    profile.thresholds.validate()?;
    let mut table = table.clone();
    let mut flagged = BTreeSet::new();
    for action in &profile.actions {
        match action {
            Action::Scale { var, by } => {
                let col = numeric_column(&table, var)?;
                let (offset, factor) = match by {
                    Scaling::Factor(f) => (0.0, *f),
                    Scaling::Standardize => {
                        let values: Vec<f64> = col.numbers().collect();
                        match numeric_stats(&values) {
                            Some(s) if s.std > 0.0 => (s.mean, 1.0 / s.std),
                            _ => return Err(AnalyticsError::ZeroVariance(var.clone())),
                        }
                    }
                };
                let col = table.column_mut(var).expect("checked above");
                for cell in &mut col.values {
                    if let Cell::Num(v) = cell {
                        *v = (*v - offset) * factor;
                    }
                }
            }
            Action::Summarize { var, stat } => {
                let col = numeric_column(&table, var)?;
                let values: Vec<f64> = col.numbers().collect();
                let value = match (stat, numeric_stats(&values)) {
                    (SummaryStat::Count, _) => Some(values.len() as f64),
                    (SummaryStat::Sum, _) => Some(values.iter().sum()),
                    (_, None) => None,
                    (SummaryStat::Mean, Some(s)) => Some(s.mean),
                    (SummaryStat::Min, Some(s)) => Some(s.min),
                    (SummaryStat::Max, Some(s)) => Some(s.max),
                    (SummaryStat::Std, Some(s)) => Some(s.std),
                };
                let cell = value.map_or(Cell::Missing, Cell::Num);
                let rows = table.row_count();
                table.put_column(Column {
                    name: format!("{var}_{}", stat.as_str()),
                    kind: ColumnType::Numeric,
                    values: vec![cell; rows],
                })?;
            }
            Action::Formula { name, expression } => {
                let expr = parse_formula(expression)?;
                for v in expr.variables() {
                    numeric_column(&table, &v)?;
                }
                let mut values = Vec::with_capacity(table.row_count());
                for row in 0..table.row_count() {
                    let lookup = |v: &str| table.column(v).and_then(|c| c.values[row].as_f64());
                    values.push(match expr.eval(&lookup) {
                        Ok(x) if x.is_finite() => Cell::Num(x),
                        Ok(_) | Err(EvalError::Missing) => Cell::Missing,
                        Err(EvalError::DivisionByZero) => {
                            flagged.insert(row);
                            Cell::Missing
                        }
                    });
                }
                table.put_column(Column {
                    name: name.clone(),
                    kind: ColumnType::Numeric,
                    values,
                })?;
            }
        }
    }
    Ok(TransformOutcome {
        table,
        division_by_zero_rows: flagged,
    })
}
