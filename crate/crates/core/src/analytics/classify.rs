use serde::{Deserialize, Serialize};

use super::profile::VariableProfile;
use super::AnalyticsError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub good: f64,
    pub moderate: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            good: 0.7,
            moderate: 0.4,
        }
    }
}

impl Thresholds {
    /// Requires `0 < moderate < good <= 1`.
    pub fn new(good: f64, moderate: f64) -> Result<Self, AnalyticsError> {
        let t = Thresholds { good, moderate };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if 0.0 < self.moderate && self.moderate < self.good && self.good <= 1.0 {
            Ok(())
        } else {
            Err(AnalyticsError::InvalidThresholds {
                good: self.good,
                moderate: self.moderate,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationClass {
    Good,
    Moderate,
    Poor,
}

pub fn classify_correlation(r: f64, t: &Thresholds) -> CorrelationClass {
    let a = r.abs();
    if a >= t.good {
        CorrelationClass::Good
    } else if a >= t.moderate {
        CorrelationClass::Moderate
    } else {
        CorrelationClass::Poor
    }
}

/// Domain-knowledge bounds on variable spread and on the share of unique
/// values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VariableBounds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_unique_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_unique_factor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableFlag {
    pub variable: String,
    pub reason: String,
}

/// Variables whose profile falls outside `bounds`. The unique factor of a
/// categorical variable is distinct values over non-missing values.
pub fn flag_variables(profiles: &[VariableProfile], bounds: &VariableBounds) -> Vec<VariableFlag> {
    let mut flags = Vec::new();
    for p in profiles {
        if let (Some(s), Some(max)) = (p.numeric(), bounds.max_std) {
            if s.std > max {
                flags.push(VariableFlag {
                    variable: p.name.clone(),
                    reason: format!("std {} exceeds {max}", s.std),
                });
            }
        }
        if let Some(c) = p.categorical() {
            let present: usize = c.frequencies.values().sum();
            if present == 0 {
                continue;
            }
            let factor = c.distinct_count as f64 / present as f64;
            if bounds.min_unique_factor.is_some_and(|m| factor < m) {
                flags.push(VariableFlag {
                    variable: p.name.clone(),
                    reason: format!("unique factor {factor} below minimum"),
                });
            }
            if bounds.max_unique_factor.is_some_and(|m| factor > m) {
                flags.push(VariableFlag {
                    variable: p.name.clone(),
                    reason: format!("unique factor {factor} above maximum"),
                });
            }
        }
    }
    flags
}
