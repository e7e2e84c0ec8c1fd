//! Key=value config files. Every key mirrors a long command-line flag; the
//! command line wins when both set the same option. Unknown keys are
//! rejected rather than ignored so that typos fail loudly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::common::{CliError, CliResult};

/// Parsed config: ordered key -> raw string value.
#[derive(Debug, Default, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path, allowed: &[&str]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, allowed)
            .map_err(|msg| CliError::usage(format!("{}: {msg}", path.display())))
    }

    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("line {}: expected key=value, got {line:?}", idx + 1));
            };
            let key = key.trim();
            let value = value.trim();
            if !allowed.contains(&key) {
                return Err(format!("line {}: unknown key {key:?}", idx + 1));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(format!("line {}: duplicate key {key:?}", idx + 1));
            }
        }
        Ok(Config { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> CliResult<Option<f64>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<f64>()
                .map(Some)
                .map_err(|_| CliError::usage(format!("config key {key}: {raw:?} is not a number"))),
        }
    }

    pub fn get_u64(&self, key: &str) -> CliResult<Option<u64>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<u64>().map(Some).map_err(|_| {
                CliError::usage(format!("config key {key}: {raw:?} is not an integer"))
            }),
        }
    }
}
