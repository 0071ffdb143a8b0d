//! `conf.yml` parsing and referential validation.

use std::collections::BTreeSet;

use serde_yaml::{Mapping, Value};
use thiserror::Error;

use crate::domain::{SiteId, WorkflowConfig};
use crate::orchestrator::routing_has_cycle;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("malformed configuration: {0}")]
    ParseError(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("unknown script `{0}`")]
    UnknownScript(String),
    #[error("unknown site `{0}`")]
    UnknownSite(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
}

impl ConfigError {
    /// The configuration key the error is about, when there is one.
    pub fn offending_key(&self) -> Option<&str> {
        match self {
            ConfigError::ParseError(_) => None,
            ConfigError::MissingField(k)
            | ConfigError::UnknownKey(k)
            | ConfigError::UnknownScript(k)
            | ConfigError::UnknownSite(k) => Some(k),
            ConfigError::InvalidValue { key, .. } => Some(key),
        }
    }
}

const REQUIRED: [&str; 6] = [
    "name",
    "das_endpoint",
    "credential_ref",
    "datasets",
    "steps",
    "results_destination",
];
const OPTIONAL: [&str; 4] = ["keep_local_copy", "timestamp_results", "routing", "stop"];

/// What a configuration may refer to.
#[derive(Clone, Debug, Default)]
pub struct ConfigContext {
    /// Script file names present in the owning version.
    pub scripts: BTreeSet<String>,
    /// Registered data sites.
    pub sites: BTreeSet<SiteId>,
}

fn document(text: &[u8]) -> Result<Mapping, ConfigError> {
    let value: Value = serde_yaml::from_slice(text).map_err(|e| ConfigError::ParseError(e.to_string()))?;
    match value {
        Value::Mapping(m) => Ok(m),
        _ => Err(ConfigError::ParseError("top level must be a mapping".into())),
    }
}

/// Structural parse: exact key set, types and value ranges. Does not check
/// references to scripts or sites.
pub fn parse_config(text: &[u8]) -> Result<WorkflowConfig, ConfigError> {
    let map = document(text)?;
    for key in map.keys() {
        let name = key
            .as_str()
            .ok_or_else(|| ConfigError::ParseError("keys must be strings".into()))?;
        if !REQUIRED.contains(&name) && !OPTIONAL.contains(&name) {
            return Err(ConfigError::UnknownKey(name.to_owned()));
        }
    }
    for key in REQUIRED {
        if !map.contains_key(key) {
            return Err(ConfigError::MissingField(key.to_owned()));
        }
    }
    if let Some(Value::Sequence(steps)) = map.get("steps") {
        for (i, step) in steps.iter().enumerate() {
            let Value::Mapping(step) = step else {
                return Err(ConfigError::InvalidValue {
                    key: format!("steps[{i}]"),
                    reason: "each step must be a mapping".into(),
                });
            };
            for k in step.keys() {
                match k.as_str() {
                    Some("site" | "script" | "params") => {}
                    Some(other) => return Err(ConfigError::UnknownKey(format!("steps[{i}].{other}"))),
                    None => return Err(ConfigError::ParseError("keys must be strings".into())),
                }
            }
            for k in ["site", "script"] {
                if !step.contains_key(k) {
                    return Err(ConfigError::MissingField(format!("steps[{i}].{k}")));
                }
            }
        }
    }
    if let Some(Value::Mapping(stop)) = map.get("stop") {
        for k in stop.keys() {
            match k.as_str() {
                Some("max_iterations" | "metric" | "rtol") => {}
                Some(other) => return Err(ConfigError::UnknownKey(format!("stop.{other}"))),
                None => return Err(ConfigError::ParseError("keys must be strings".into())),
            }
        }
        for k in ["max_iterations", "metric", "rtol"] {
            if !stop.contains_key(k) {
                return Err(ConfigError::MissingField(format!("stop.{k}")));
            }
        }
    }

    let config: WorkflowConfig =
        serde_yaml::from_value(Value::Mapping(map)).map_err(|e| ConfigError::ParseError(e.to_string()))?;

    let invalid = |key: &str, reason: &str| ConfigError::InvalidValue {
        key: key.to_owned(),
        reason: reason.to_owned(),
    };
    if config.workflow_name.trim().is_empty() {
        return Err(invalid("name", "must not be empty"));
    }
    if config.das_endpoint.trim().is_empty() {
        return Err(invalid("das_endpoint", "must not be empty"));
    }
    if config.credential_ref.as_str().trim().is_empty() {
        return Err(invalid("credential_ref", "must not be empty"));
    }
    if config.steps.is_empty() {
        return Err(invalid("steps", "at least one step is required"));
    }
    if config.results_destination.trim().is_empty() {
        return Err(invalid("results_destination", "must not be empty"));
    }
    if !is_relative_locator(&config.results_destination) {
        return Err(invalid(
            "results_destination",
            "must be a relative locator of [A-Za-z0-9_.-] segments",
        ));
    }
    for (i, step) in config.steps.iter().enumerate() {
        if step.script == WorkflowConfig::FILE_NAME {
            return Err(invalid(&format!("steps[{i}].script"), "the configuration is not a script"));
        }
    }
    for (from, tos) in &config.routing {
        if tos.contains(from) {
            return Err(invalid(&format!("routing.{from}"), "a site cannot route to itself"));
        }
    }
    if let Some(stop) = &config.stop {
        if stop.max_iterations < 1 {
            return Err(invalid("stop.max_iterations", "must be at least 1"));
        }
        if !(stop.relative_tolerance.is_finite() && stop.relative_tolerance >= 0.0) {
            return Err(invalid("stop.rtol", "must be a nonnegative number"));
        }
    } else if routing_has_cycle(&config.routing) {
        return Err(ConfigError::MissingField("stop".into()));
    }
    Ok(config)
}

/// Full validation: structure plus every script and site reference.
pub fn validate_config(text: &[u8], ctx: &ConfigContext) -> Result<WorkflowConfig, ConfigError> {
    let config = parse_config(text)?;
    validate_references(&config, ctx)?;
    Ok(config)
}

pub fn validate_references(config: &WorkflowConfig, ctx: &ConfigContext) -> Result<(), ConfigError> {
    for step in &config.steps {
        if !ctx.scripts.contains(&step.script) {
            return Err(ConfigError::UnknownScript(step.script.clone()));
        }
    }
    let check_site = |site: &SiteId| {
        if ctx.sites.contains(site) {
            Ok(())
        } else {
            Err(ConfigError::UnknownSite(site.to_string()))
        }
    };
    for step in &config.steps {
        check_site(&step.site)?;
    }
    for (from, tos) in &config.routing {
        check_site(from)?;
        tos.iter().try_for_each(check_site)?;
    }
    for ds in &config.dataset_ids {
        check_site(&ds.site)?;
    }
    Ok(())
}

pub(crate) fn is_relative_locator(text: &str) -> bool {
    !text.starts_with('/')
        && text
            .split('/')
            .all(|seg| crate::domain::Segment::parse(seg).is_ok())
}

/// True when `new` differs from `old` only in `steps[*].params` and `stop`.
/// Either document failing to parse counts as a structural change.
pub fn params_only_change(old: &[u8], new: &[u8]) -> bool {
    fn strip(text: &[u8]) -> Option<Value> {
        let mut map = document(text).ok()?;
        map.remove("stop");
        if let Some(Value::Sequence(steps)) = map.get_mut("steps") {
            for step in steps {
                if let Value::Mapping(step) = step {
                    step.remove("params");
                }
            }
        }
        Some(Value::Mapping(map))
    }
    match (strip(old), strip(new)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SHBE: &str = r#"
name: shbe_ls
das_endpoint: loopback
credential_ref: fk_das
datasets: [siteA/shard_a, siteB/shard_b, siteC/shard_c]
steps:
  - {site: siteA, script: init.py, params: {dataset: shard_a}}
  - {site: siteA, script: refine.py}
  - {site: siteB, script: init.py}
  - {site: siteB, script: refine.py}
  - {site: siteC, script: init.py}
  - {site: siteC, script: aggregate.py, params: {step_size: 0.5}}
results_destination: results/shbe
keep_local_copy: false
timestamp_results: false
routing:
  siteA: [siteC]
  siteB: [siteC]
  siteC: [siteA, siteB]
stop: {max_iterations: 25, metric: loss, rtol: 1.0e-3}
"#;

    fn ctx() -> ConfigContext {
        ConfigContext {
            scripts: ["init.py", "refine.py", "aggregate.py"].map(String::from).into(),
            sites: ["siteA", "siteB", "siteC"].map(SiteId::new).into(),
        }
    }

    #[test]
    fn three_site_iterative_config_is_valid() {
        let cfg = validate_config(SHBE.as_bytes(), &ctx()).unwrap();
        assert_eq!(cfg.steps.len(), 6);
        assert_eq!(cfg.sites().len(), 3);
        assert_eq!(cfg.stop.unwrap().max_iterations, 25);
        assert!(!cfg.keep_local_copy);
    }

    #[test]
    fn unknown_script_is_named() {
        let text = SHBE.replace("refine.py}\n  - {site: siteB", "missing.py}\n  - {site: siteB");
        assert_eq!(
            validate_config(text.as_bytes(), &ctx()),
            Err(ConfigError::UnknownScript("missing.py".into()))
        );
    }

    #[test]
    fn missing_results_destination_is_named() {
        let text = SHBE.replace("results_destination: results/shbe\n", "");
        let err = validate_config(text.as_bytes(), &ctx()).unwrap_err();
        assert_eq!(err, ConfigError::MissingField("results_destination".into()));
        assert_eq!(err.offending_key(), Some("results_destination"));
    }

    #[test]
    fn unknown_site_and_key() {
        let text = SHBE.replace("siteB: [siteC]", "siteZ: [siteC]");
        assert_eq!(
            validate_config(text.as_bytes(), &ctx()),
            Err(ConfigError::UnknownSite("siteZ".into()))
        );
        let text = format!("{SHBE}\nsecret: hunter2\n");
        assert_eq!(
            validate_config(text.as_bytes(), &ctx()),
            Err(ConfigError::UnknownKey("secret".into()))
        );
    }

    #[test]
    fn cyclic_routing_requires_stop() {
        let text = SHBE.replace("stop: {max_iterations: 25, metric: loss, rtol: 1.0e-3}\n", "");
        assert_eq!(
            parse_config(text.as_bytes()),
            Err(ConfigError::MissingField("stop".into()))
        );
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(parse_config(b"::: ["), Err(ConfigError::ParseError(_))));
        assert!(matches!(parse_config(b"- a\n- b"), Err(ConfigError::ParseError(_))));
        let bad_stop = SHBE.replace("max_iterations: 25", "max_iterations: 0");
        assert!(matches!(
            parse_config(bad_stop.as_bytes()),
            Err(ConfigError::InvalidValue { .. })
        ));
        let escape = SHBE.replace("results/shbe", "../outside");
        assert!(matches!(
            parse_config(escape.as_bytes()),
            Err(ConfigError::InvalidValue { .. })
        ));
    }

    #[test]
    fn params_only_detection() {
        let tweaked = SHBE.replace("step_size: 0.5", "step_size: 0.25").replace("rtol: 1.0e-3", "rtol: 1.0e-4");
        assert!(params_only_change(SHBE.as_bytes(), tweaked.as_bytes()));
        let rerouted = SHBE.replace("siteA: [siteC]", "siteA: [siteB]");
        assert!(!params_only_change(SHBE.as_bytes(), rerouted.as_bytes()));
        assert!(!params_only_change(SHBE.as_bytes(), b": :"));
    }
}
