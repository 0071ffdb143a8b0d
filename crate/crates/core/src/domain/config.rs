use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ids::{DatasetId, KeyId, SiteId};
use super::task::ParamMap;

/// A dataset reference `<site>/<dataset>` naming where the data lives.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DatasetRef {
    pub site: SiteId,
    pub dataset: DatasetId,
}

impl fmt::Display for DatasetRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.site, self.dataset)
    }
}

impl FromStr for DatasetRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (site, dataset) = s
            .split_once('/')
            .ok_or_else(|| format!("dataset `{s}` must be written as <site>/<dataset>"))?;
        if site.is_empty() || dataset.is_empty() || dataset.contains('/') {
            return Err(format!("dataset `{s}` must be written as <site>/<dataset>"));
        }
        Ok(Self {
            site: SiteId::new(site),
            dataset: DatasetId::new(dataset),
        })
    }
}

impl Serialize for DatasetRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DatasetRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub site: SiteId,
    pub script: String,
    #[serde(default)]
    pub params: ParamMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingCondition {
    pub max_iterations: u32,
    #[serde(rename = "metric")]
    pub metric_name: String,
    #[serde(rename = "rtol")]
    pub relative_tolerance: f64,
}

impl StoppingCondition {
    pub fn single_pass() -> Self {
        Self {
            max_iterations: 1,
            metric_name: String::new(),
            relative_tolerance: 0.0,
        }
    }
}

/// The declarative execution contract stored as `conf.yml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowConfig {
    #[serde(rename = "name")]
    pub workflow_name: String,
    pub das_endpoint: String,
    pub credential_ref: KeyId,
    #[serde(rename = "datasets", default)]
    pub dataset_ids: Vec<DatasetRef>,
    pub steps: Vec<StepSpec>,
    pub results_destination: String,
    #[serde(default)]
    pub keep_local_copy: bool,
    #[serde(default)]
    pub timestamp_results: bool,
    #[serde(default)]
    pub routing: BTreeMap<SiteId, Vec<SiteId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StoppingCondition>,
}

impl WorkflowConfig {
    pub const FILE_NAME: &'static str = "conf.yml";

    /// Sites in first-appearance order across steps, then routing.
    pub fn sites(&self) -> Vec<SiteId> {
        let mut out: Vec<SiteId> = Vec::new();
        let mut push = |s: &SiteId| {
            if !out.contains(s) {
                out.push(s.clone());
            }
        };
        for step in &self.steps {
            push(&step.site);
        }
        for (from, tos) in &self.routing {
            push(from);
            tos.iter().for_each(&mut push);
        }
        out
    }

    pub fn stop_or_single_pass(&self) -> StoppingCondition {
        self.stop.clone().unwrap_or_else(StoppingCondition::single_pass)
    }

    /// Applies per-run overrides to every step's parameters.
    pub fn with_overrides(&self, overrides: &ParamMap) -> Self {
        let mut next = self.clone();
        for step in &mut next.steps {
            for (k, v) in overrides {
                step.params.insert(k.clone(), v.clone());
            }
        }
        next
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("workflow config always serializes")
    }
}
