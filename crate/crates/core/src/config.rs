//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Every file carries
//! `schema_version`; keys are dotted (`model.dim_f`, `train.lr`). Readers mark
//! the keys they consume so leftovers can be reported as unknown.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl PartialEq for KvConfig {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value, got '{line}'", n + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if cfg.entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", n + 1)));
            }
        }
        match cfg.get::<u32>("schema_version")? {
            Some(SCHEMA_VERSION) => Ok(cfg),
            Some(v) => Err(Error::Config(format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})"))),
            None => Err(Error::Config("missing schema_version".into())),
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| Error::Config(format!("{key} = '{v}': {e}"))),
        }
    }

    /// Overwrites `*slot` when the key is present.
    pub fn read_into<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.remove(key);
    }

    /// Keys that no reader asked for.
    pub fn unused(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.entries.keys().filter(|k| k.as_str() != "schema_version" && !used.contains(*k)).cloned().collect()
    }

    pub fn ensure_all_used(&self) -> Result<()> {
        let left = self.unused();
        if left.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown keys: {}", left.join(", "))))
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Merges `other` over `self`.
    pub fn overlay(&mut self, other: &KvConfig) {
        for (k, v) in other.entries() {
            self.set(k, v);
        }
    }

    /// Canonical text: schema version first, then keys in sorted order.
    pub fn render(&self) -> String {
        let mut out = format!("schema_version = {SCHEMA_VERSION}\n");
        for (k, v) in &self.entries {
            if k != "schema_version" {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_render_round_trip() {
        let text = "# run\nschema_version = 1\nmodel.dim_f = 16\n\ntrain.lr=0.001\n";
        let cfg = KvConfig::parse(text).unwrap();
        assert_eq!(cfg.get::<usize>("model.dim_f").unwrap(), Some(16));
        assert_eq!(cfg.get::<f64>("train.lr").unwrap(), Some(0.001));
        let again = KvConfig::parse(&cfg.render()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn errors() {
        assert!(KvConfig::parse("a = 1").is_err());
        assert!(KvConfig::parse("schema_version = 2").is_err());
        assert!(KvConfig::parse("schema_version = 1\nnoequals").is_err());
        assert!(KvConfig::parse("schema_version = 1\na=1\na=2").is_err());
        let cfg = KvConfig::parse("schema_version = 1\nx = abc").unwrap();
        assert!(cfg.get::<u32>("x").is_err());
        let cfg = KvConfig::parse("schema_version = 1\nx = 1\ny = 2").unwrap();
        let _ = cfg.get::<u32>("x");
        assert_eq!(cfg.unused(), vec!["y".to_string()]);
    }
}
