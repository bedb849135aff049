//! The single JSON configuration document and its validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::coopt::CooptConfig;
use crate::flocking::{SimConfig, GENE_NAMES};
use crate::ga::GaConfig;
use crate::metrics::MetricWeights;
use crate::nn::NnConfig;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{path}: {message}")]
pub struct ConfigError {
    /// Dotted field path, e.g. `ga.mutation_prob`.
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkbenchConfig {
    pub sim: SimConfig,
    pub metrics: MetricWeights,
    pub ga: GaConfig,
    pub nn: NnConfig,
    pub coopt: CooptConfig,
}

/// Pulls the field name out of a "name must ..." message so the path can
/// point at it.
fn field_of(section: &str, message: String) -> ConfigError {
    let field = message.split_whitespace().next().unwrap_or("");
    if !field.is_empty() && field.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '[' || c == ']') {
        ConfigError::new(format!("{section}.{field}"), message)
    } else {
        ConfigError::new(section, message)
    }
}

impl WorkbenchConfig {
    /// Parse a document, reporting the path of any unknown or mistyped key.
    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(if path == "." { String::from("<root>") } else { path }, e.into_inner().to_string())
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::new("<root>", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Load `path` (or defaults), apply `key.path=value` overrides, validate.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::new("<file>", format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| ConfigError::new("<root>", e.to_string()))?
            }
            None => serde_json::to_value(Self::default()).expect("default config serializes"),
        };
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        let cfg = Self::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.validate().map_err(|m| field_of("sim", m))?;
        self.metrics.validate().map_err(|m| field_of("metrics", m))?;
        self.ga.validate().map_err(|(f, m)| ConfigError::new(format!("ga.{f}"), m))?;
        self.nn.validate().map_err(|(f, m)| ConfigError::new(format!("nn.{f}"), m))?;
        self.coopt.validate(&self.sim).map_err(|(f, m)| ConfigError::new(format!("coopt.{f}"), m))?;

        for (k, [lo, hi]) in self.ga.bounds.iter().enumerate() {
            let name = GENE_NAMES[k];
            let radius = name.starts_with("f_r") || name.starts_with("l_r");
            if radius && (*lo <= 0.0 || *hi > self.sim.sensing_range) {
                return Err(ConfigError::new(
                    format!("ga.bounds[{k}]"),
                    format!("{name}: radius bounds must lie in (0, sim.sensing_range = {}]", self.sim.sensing_range),
                ));
            }
            let gain = !radius && k < 12;
            if (gain || k == 12) && *lo < 0.0 {
                return Err(ConfigError::new(format!("ga.bounds[{k}]"), format!("{name}: gains must be >= 0")));
            }
            if k >= 13 && (*lo < -1.0 || *hi > 1.0) {
                return Err(ConfigError::new(format!("ga.bounds[{k}]"), format!("{name}: offsets must lie in [-1, 1]")));
            }
        }
        if self.nn.sample_rate > self.sim.control_rate {
            return Err(ConfigError::new(
                "nn.sample_rate",
                format!("must not exceed sim.control_rate ({} Hz)", self.sim.control_rate),
            ));
        }
        if self.nn.window_seconds > self.sim.duration {
            return Err(ConfigError::new(
                "nn.window_seconds",
                format!("a {} s flight holds no {} s window", self.sim.duration, self.nn.window_seconds),
            ));
        }
        Ok(())
    }
}

/// Set `key` (dotted path, array indices as numbers) in `doc` to `raw`,
/// parsed as JSON when possible and as a string otherwise.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<(), ConfigError> {
    let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::new(key, "malformed override key"));
    }
    let mut cur = doc;
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let i: usize = part
                    .parse()
                    .map_err(|_| ConfigError::new(key, format!("`{part}` is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(i)
                    .ok_or_else(|| ConfigError::new(key, format!("index {i} out of range (length {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(ConfigError::new(key, format!("`{part}` is not inside an object or array"))),
        };
    }
    Ok(())
}
