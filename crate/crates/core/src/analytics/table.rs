use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::AnalyticsError;

/// Share of non-missing values that must parse for a type to be inferred.
pub const INFERENCE_SHARE: f64 = 0.95;
pub const LATITUDE_NAMES: &[&str] = &["lat", "latitude"];
pub const LONGITUDE_NAMES: &[&str] = &["lon", "lng", "long", "longitude"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Numeric,
    Categorical,
    Temporal,
    Geospatial,
}

impl ColumnType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnType::Numeric | ColumnType::Geospatial)
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnType::Numeric => "numeric",
            ColumnType::Categorical => "categorical",
            ColumnType::Temporal => "temporal",
            ColumnType::Geospatial => "geospatial",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Missing,
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    /// Canonical text form; numbers use the shortest round-trip rendering.
    pub fn render(&self) -> String {
        match self {
            Cell::Missing => String::new(),
            Cell::Num(v) => format!("{v}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnType,
    pub values: Vec<Cell>,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: impl IntoIterator<Item = f64>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnType::Numeric,
            values: values.into_iter().map(Cell::Num).collect(),
        }
    }

    pub fn text(name: impl Into<String>, values: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnType::Categorical,
            values: values.into_iter().map(|v| Cell::Text(v.into())).collect(),
        }
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|c| c.is_missing()).count()
    }

    pub fn numbers(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().filter_map(Cell::as_f64)
    }
}

/// A result table stored column-major. Every column has `row_count` cells.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub name: String,
    columns: Vec<Column>,
    row_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnManifest {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ColumnType,
}

/// JSON sidecar describing a canonical CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableManifest {
    pub name: String,
    pub columns: Vec<ColumnManifest>,
    pub row_count: usize,
    pub missing: String,
}

impl ResultTable {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self, AnalyticsError> {
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(AnalyticsError::DuplicateColumn(c.name.clone()));
            }
        }
        let row_count = columns.first().map_or(0, |c| c.values.len());
        if let Some(c) = columns.iter().find(|c| c.values.len() != row_count) {
            return Err(AnalyticsError::RaggedColumn(c.name.clone()));
        }
        Ok(ResultTable {
            name: name.into(),
            columns,
            row_count,
        })
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut Column> {
        self.columns.iter_mut().find(|c| c.name == name)
    }

    /// Appends `column`, or replaces the column of the same name in place.
    pub fn put_column(&mut self, column: Column) -> Result<(), AnalyticsError> {
        if column.values.len() != self.row_count && !self.columns.is_empty() {
            return Err(AnalyticsError::RaggedColumn(column.name));
        }
        if self.columns.is_empty() {
            self.row_count = column.values.len();
        }
        match self.columns.iter_mut().find(|c| c.name == column.name) {
            Some(slot) => *slot = column,
            None => self.columns.push(column),
        }
        Ok(())
    }

    pub fn missing_mask(&self) -> Vec<Vec<bool>> {
        self.columns
            .iter()
            .map(|c| c.values.iter().map(Cell::is_missing).collect())
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> ResultTable {
        ResultTable {
            name: self.name.clone(),
            row_count: rows.len(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    kind: c.kind,
                    values: rows.iter().map(|&r| c.values[r].clone()).collect(),
                })
                .collect(),
        }
    }

    pub fn manifest(&self) -> TableManifest {
        TableManifest {
            name: self.name.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| ColumnManifest {
                    name: c.name.clone(),
                    kind: c.kind,
                })
                .collect(),
            row_count: self.row_count,
            missing: String::new(),
        }
    }

    pub fn manifest_file_name(name: &str) -> String {
        format!("{name}.manifest.json")
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))
            .expect("in-memory write");
        for r in 0..self.row_count {
            w.write_record(self.columns.iter().map(|c| c.values[r].render()))
                .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn to_manifest_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&self.manifest()).expect("manifest serializes")
    }

    /// Parses CSV, inferring each column's type.
    pub fn from_csv(name: &str, bytes: &[u8]) -> Result<Self, AnalyticsError> {
        Self::parse_csv(name, bytes, None)
    }

    /// Parses CSV using the declared types of a sidecar manifest.
    pub fn from_csv_with_manifest(bytes: &[u8], manifest: &TableManifest) -> Result<Self, AnalyticsError> {
        let table = Self::parse_csv(&manifest.name, bytes, Some(manifest))?;
        if table.row_count != manifest.row_count {
            return Err(AnalyticsError::ManifestMismatch(format!(
                "manifest declares {} rows, csv has {}",
                manifest.row_count, table.row_count
            )));
        }
        Ok(table)
    }

    fn parse_csv(name: &str, bytes: &[u8], manifest: Option<&TableManifest>) -> Result<Self, AnalyticsError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| AnalyticsError::Csv(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for record in reader.records() {
            let record = record.map_err(|e| AnalyticsError::Csv(e.to_string()))?;
            for (i, col) in raw.iter_mut().enumerate() {
                col.push(record.get(i).unwrap_or_default().to_string());
            }
        }
        let declared: Option<BTreeMap<&str, ColumnType>> = match manifest {
            Some(m) => {
                let names: Vec<&str> = m.columns.iter().map(|c| c.name.as_str()).collect();
                if names != headers.iter().map(String::as_str).collect::<Vec<_>>() {
                    return Err(AnalyticsError::ManifestMismatch("column names differ from header".into()));
                }
                Some(m.columns.iter().map(|c| (c.name.as_str(), c.kind)).collect())
            }
            None => None,
        };
        let inferred = infer_types(&headers, &raw);
        let columns = headers
            .iter()
            .zip(raw)
            .zip(inferred)
            .map(|((name, values), guess)| {
                let kind = declared.as_ref().map_or(guess, |d| d[name.as_str()]);
                Column {
                    name: name.clone(),
                    kind,
                    values: values.into_iter().map(|v| to_cell(&v, kind)).collect(),
                }
            })
            .collect();
        ResultTable::new(name, columns)
    }
}

fn to_cell(raw: &str, kind: ColumnType) -> Cell {
    if raw.is_empty() {
        return Cell::Missing;
    }
    if kind.is_numeric() {
        if let Some(v) = parse_number(raw) {
            return Cell::Num(v);
        }
    }
    Cell::Text(raw.to_string())
}

pub fn parse_number(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn parse_timestamp(raw: &str) -> bool {
    let s = raw.trim();
    DateTime::parse_from_rfc3339(s).is_ok()
        || NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").is_ok()
        || NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f").is_ok()
        || NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").is_ok()
        || NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok()
}

fn share(values: &[String], pred: impl Fn(&str) -> bool) -> Option<f64> {
    let present: Vec<&String> = values.iter().filter(|v| !v.is_empty()).collect();
    if present.is_empty() {
        return None;
    }
    Some(present.iter().filter(|v| pred(v)).count() as f64 / present.len() as f64)
}

/// Type inference over raw column strings. Depends only on value counts,
/// so it is invariant under row permutation.
pub fn infer_types(headers: &[String], raw: &[Vec<String>]) -> Vec<ColumnType> {
    let mut kinds: Vec<ColumnType> = raw
        .iter()
        .map(|values| {
            if share(values, |v| parse_number(v).is_some()).is_some_and(|s| s >= INFERENCE_SHARE) {
                ColumnType::Numeric
            } else if share(values, parse_timestamp).is_some_and(|s| s >= INFERENCE_SHARE) {
                ColumnType::Temporal
            } else {
                ColumnType::Categorical
            }
        })
        .collect();
    let find = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
    };
    if let (Some(lat), Some(lon)) = (find(LATITUDE_NAMES), find(LONGITUDE_NAMES)) {
        let within = |i: usize, bound: f64| {
            kinds[i] == ColumnType::Numeric
                && raw[i]
                    .iter()
                    .filter_map(|v| parse_number(v))
                    .all(|v| (-bound..=bound).contains(&v))
        };
        if within(lat, 90.0) && within(lon, 180.0) {
            kinds[lat] = ColumnType::Geospatial;
            kinds[lon] = ColumnType::Geospatial;
        }
    }
    kinds
}
