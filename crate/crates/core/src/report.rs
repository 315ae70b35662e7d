//! Versioned run report shared by all command-line pipelines.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub command: String,
    pub software_version: String,
    /// Every flag of the invocation, defaults included.
    pub parameters: Value,
    pub seeds: Vec<u64>,
    /// Content hash per input name.
    pub input_digests: BTreeMap<String, String>,
    /// Module outputs keyed by module name.
    pub outputs: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Timestamps>,
}

impl RunReport {
    pub fn new(command: &str, parameters: Value, seeds: Vec<u64>) -> Self {
        RunReport {
            schema: SCHEMA_VERSION,
            command: command.to_string(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            parameters,
            seeds,
            input_digests: BTreeMap::new(),
            outputs: BTreeMap::new(),
            timestamps: None,
        }
    }

    pub fn with_output<T: Serialize>(mut self, key: &str, value: &T) -> Result<Self> {
        self.outputs.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: RunReport = serde_json::from_str(&text)?;
        if report.schema != SCHEMA_VERSION {
            return Err(Error::format(
                path,
                format!("report schema {} is not supported", report.schema),
            ));
        }
        Ok(report)
    }
}
