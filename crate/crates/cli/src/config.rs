//! Key-value run configuration: `key = value` lines, `#` comments, flags on
//! top.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides; later entries win.
    pub fn overlay(&mut self, overrides: &[String]) -> CliResult<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("--set expects key=value, got '{o}'")))?;
            self.0.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(())
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Feeds every pair to `set`, turning its error into a config error.
    pub fn apply<E: std::fmt::Display>(&self, mut set: impl FnMut(&str, &str) -> Result<(), E>) -> CliResult<()> {
        for (k, v) in self.iter() {
            set(k, v).map_err(CliError::config)?;
        }
        Ok(())
    }
}
