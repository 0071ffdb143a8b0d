use serde::{Deserialize, Serialize};

use super::sample::{sample_table, DEFAULT_SAMPLE_CAP, DEFAULT_SEED};
use super::table::{ColumnType, ResultTable};
use super::AnalyticsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    /// Row index, always greater than `j`.
    pub i: usize,
    pub j: usize,
    /// `None` when a variable has zero variance or fewer than two
    /// pairwise-complete rows.
    pub r: Option<f64>,
    pub pairs: usize,
}

/// Strictly lower triangle of the Pearson matrix over numeric columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub variables: Vec<String>,
    pub entries: Vec<CorrelationEntry>,
    pub sample_size: usize,
}

impl CorrelationMatrix {
    fn slot(i: usize, j: usize) -> usize {
        let (i, j) = if i > j { (i, j) } else { (j, i) };
        i * (i - 1) / 2 + j
    }

    /// Symmetric lookup; `None` for the diagonal or an undefined cell.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == j || i.max(j) >= self.variables.len() {
            return None;
        }
        self.entries[Self::slot(i, j)].r
    }

    pub fn get_named(&self, a: &str, b: &str) -> Option<f64> {
        let idx = |n: &str| self.variables.iter().position(|v| v == n);
        self.get(idx(a)?, idx(b)?)
    }
}

/// Pearson r over the pairwise-complete rows of two columns.
pub fn pearson(x: &[Option<f64>], y: &[Option<f64>]) -> (Option<f64>, usize) {
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    let n = pairs.len();
    if n < 2 {
        return (None, n);
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Relative guard so that ulp-level spread in a constant column counts
    // as zero variance.
    let tiny = |s: f64, m: f64| s <= (n as f64) * (m.abs() * 1e-14).powi(2) || s == 0.0;
    if tiny(sxx, mx) || tiny(syy, my) {
        return (None, n);
    }
    (Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)), n)
}

/// Correlations over the table's numeric columns, computed exactly.
pub fn correlations_exact(table: &ResultTable) -> Result<CorrelationMatrix, AnalyticsError> {
    let numeric: Vec<_> = table
        .columns()
        .iter()
        .filter(|c| c.kind == ColumnType::Numeric)
        .collect();
    if numeric.len() < 2 {
        return Err(AnalyticsError::NotEnoughNumericColumns(numeric.len()));
    }
    let series: Vec<Vec<Option<f64>>> = numeric
        .iter()
        .map(|c| c.values.iter().map(|v| v.as_f64()).collect())
        .collect();
    let mut entries = Vec::with_capacity(numeric.len() * (numeric.len() - 1) / 2);
    for i in 1..numeric.len() {
        for j in 0..i {
            let (r, pairs) = pearson(&series[i], &series[j]);
            entries.push(CorrelationEntry { i, j, r, pairs });
        }
    }
    Ok(CorrelationMatrix {
        variables: numeric.iter().map(|c| c.name.clone()).collect(),
        entries,
        sample_size: table.row_count(),
    })
}

/// Correlations over a uniform row sample of at most the default cap.
pub fn correlations(table: &ResultTable) -> Result<CorrelationMatrix, AnalyticsError> {
    let (sampled, _) = sample_table(table, DEFAULT_SAMPLE_CAP, DEFAULT_SEED);
    correlations_exact(&sampled)
}
