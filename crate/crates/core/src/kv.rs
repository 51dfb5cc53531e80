//! Flat `namespace.key=value` text format used for experiment configs and
//! checkpoint metadata. One pair per line; `#` starts a comment line.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key=value, got {raw:?}", i + 1)))?;
            let k = k.trim();
            ensure!(!k.is_empty(), "config line {}: empty key", i + 1);
            ensure!(
                map.insert(k.to_string(), v.trim().to_string()).is_none(),
                "config line {}: duplicate key {k}",
                i + 1
            );
        }
        Ok(Self { map })
    }

    /// One `key=value` line per entry, sorted by key.
    pub fn render(&self) -> String {
        self.map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn require_str(&self, key: &str) -> Result<&str> {
        self.get_str(key)
            .ok_or_else(|| Error::invalid(format!("config key {key} is missing")))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require_str(key)?;
        raw.parse()
            .map_err(|_| Error::invalid(format!("config key {key}: cannot parse {raw:?}")))
    }

    /// Parsed value, or `default` when the key is absent.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get_str(key) {
            None => Ok(default),
            Some(_) => self.require(key),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn extend(&mut self, other: &KeyValues) {
        for (k, v) in &other.map {
            self.map.insert(k.clone(), v.clone());
        }
    }

    /// Fails on keys outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for k in self.keys() {
            ensure!(known.contains(&k), "unknown config key {k}");
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.map
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        )
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::invalid("expected a key/value object"))?;
        let mut out = Self::new();
        for (k, v) in obj {
            let s = v
                .as_str()
                .ok_or_else(|| Error::invalid(format!("value of {k} is not a string")))?;
            out.set(k, s);
        }
        Ok(out)
    }
}
