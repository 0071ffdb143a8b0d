use serde::{Deserialize, Serialize};

use super::profile::VariableProfile;
use super::table::ColumnType;
use super::table::{LATITUDE_NAMES, LONGITUDE_NAMES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visualization {
    ScatterPlot,
    BoxPlot,
    BarChart,
    LineChart,
    GeospatialMap,
    HeatMap,
    ParallelCoordinates,
    Tabular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualizationRecommendation {
    pub kind: Visualization,
    pub variables: Vec<String>,
}

struct Pool<'a> {
    numeric: Vec<&'a str>,
    categorical: Vec<&'a str>,
    temporal: Vec<&'a str>,
    geo: Option<(&'a str, &'a str)>,
}

fn pool<'a>(profiles: &[&'a VariableProfile]) -> Pool<'a> {
    let of = |k: ColumnType| -> Vec<&'a str> {
        profiles
            .iter()
            .filter(|p| p.kind == k)
            .map(|p| p.name.as_str())
            .collect()
    };
    let geo = of(ColumnType::Geospatial);
    let named = |names: &[&str]| geo.iter().copied().find(|g| names.iter().any(|n| g.eq_ignore_ascii_case(n)));
    Pool {
        numeric: of(ColumnType::Numeric),
        categorical: of(ColumnType::Categorical),
        temporal: of(ColumnType::Temporal),
        geo: named(LATITUDE_NAMES).zip(named(LONGITUDE_NAMES)),
    }
}

fn push(out: &mut Vec<VisualizationRecommendation>, kind: Visualization, vars: &[&str]) {
    if out.iter().any(|r| r.kind == kind) {
        return;
    }
    out.push(VisualizationRecommendation {
        kind,
        variables: vars.iter().map(|v| v.to_string()).collect(),
    });
}

/// Ordered recommendations from variable types. With a selection only the
/// selected variables count; tabular always closes the list.
pub fn recommend(profiles: &[VariableProfile], selection: Option<&[String]>) -> Vec<VisualizationRecommendation> {
    use Visualization::*;
    let chosen: Vec<&VariableProfile> = match selection {
        Some(sel) if !sel.is_empty() => profiles.iter().filter(|p| sel.contains(&p.name)).collect(),
        _ => profiles.iter().collect(),
    };
    let p = pool(&chosen);
    let mut out = Vec::new();
    let all: Vec<&str> = chosen.iter().map(|p| p.name.as_str()).collect();
    if selection.is_some_and(|s| !s.is_empty()) {
        match (p.numeric.len(), p.categorical.len(), p.temporal.len()) {
            (2, 0, 0) => push(&mut out, ScatterPlot, &p.numeric),
            (n, 0, 0) if n >= 3 => {
                push(&mut out, ParallelCoordinates, &p.numeric);
                push(&mut out, HeatMap, &p.numeric);
            }
            (0, 1, 0) => push(&mut out, BarChart, &p.categorical),
            (n, c, 0) if n >= 1 && c >= 1 => {
                let vars = [p.categorical[0], p.numeric[0]];
                push(&mut out, BoxPlot, &vars);
                push(&mut out, BarChart, &vars);
            }
            (n, 0, t) if n >= 1 && t >= 1 => push(&mut out, LineChart, &[p.temporal[0], p.numeric[0]]),
            (1, 0, 0) => push(&mut out, BoxPlot, &p.numeric),
            _ => {}
        }
        if let Some((lat, lon)) = p.geo {
            push(&mut out, GeospatialMap, &[lat, lon]);
        }
    } else {
        if let Some((lat, lon)) = p.geo {
            push(&mut out, GeospatialMap, &[lat, lon]);
        }
        if p.numeric.len() >= 2 {
            push(&mut out, HeatMap, &p.numeric);
        }
        if p.numeric.len() >= 4 {
            push(&mut out, ParallelCoordinates, &p.numeric);
        }
        if let (Some(t), Some(n)) = (p.temporal.first(), p.numeric.first()) {
            push(&mut out, LineChart, &[t, n]);
        }
        if p.numeric.len() >= 2 {
            push(&mut out, ScatterPlot, &p.numeric[..2]);
        }
        if let (Some(c), Some(n)) = (p.categorical.first(), p.numeric.first()) {
            push(&mut out, BoxPlot, &[c, n]);
        }
        if let Some(c) = p.categorical.first() {
            push(&mut out, BarChart, &[c]);
        }
    }
    push(&mut out, Tabular, &all);
    out
}
