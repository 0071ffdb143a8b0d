//! Rendering of API responses as JSON or as plain aligned tables.

use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Table,
    Json,
}

const CELL_MAX: usize = 48;

fn cell(v: &Value) -> String {
    let s = match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        other => other.to_string(),
    };
    if s.chars().count() > CELL_MAX {
        let mut t: String = s.chars().take(CELL_MAX - 3).collect();
        t.push_str("...");
        t
    } else {
        s
    }
}

fn grid(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

/// Renders `value` as a table. `columns` picks and orders the fields of
/// array rows; when empty, every field of the first row is shown.
pub fn table(value: &Value, columns: &[&str]) -> String {
    match value {
        Value::Array(items) if items.iter().all(Value::is_object) && !items.is_empty() => {
            let header: Vec<String> = if columns.is_empty() {
                items[0].as_object().unwrap().keys().cloned().collect()
            } else {
                columns.iter().map(|c| c.to_string()).collect()
            };
            let rows: Vec<Vec<String>> = items
                .iter()
                .map(|item| header.iter().map(|h| cell(&item[h.as_str()])).collect())
                .collect();
            grid(&header, &rows)
        }
        Value::Array(items) => items.iter().map(|i| cell(i) + "\n").collect(),
        Value::Object(map) => {
            let rows: Vec<Vec<String>> = map
                .iter()
                .filter(|(k, _)| columns.is_empty() || columns.contains(&k.as_str()))
                .map(|(k, v)| vec![k.clone(), cell(v)])
                .collect();
            grid(&["field".into(), "value".into()], &rows)
        }
        other => cell(other) + "\n",
    }
}

pub fn render(value: &Value, format: Format, columns: &[&str]) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(value).unwrap_or_default() + "\n",
        Format::Table => table(value, columns),
    }
}
