//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may use `-` or
//! `_` interchangeably; they are normalized to `_`. Later assignments win,
//! which gives the precedence defaults < file < command line when the
//! sources are merged in that order.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

pub fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: k + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            if key.trim().is_empty() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: k + 1,
                    message: "empty key".into(),
                });
            }
            kv.set(key, value.trim());
        }
        Ok(kv)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(normalize_key(key), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parses `key` into `T` if present.
    pub fn parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("{key}: cannot parse {v:?}: {e}")))
            })
            .transpose()
    }

    /// Comma-separated list of `T`.
    pub fn parsed_list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>()
                            .map_err(|e| Error::Config(format!("{key}: cannot parse {s:?}: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Rejects keys not in `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown key {k:?}"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_merges() {
        let base = KeyValues::parse("# c\nbatch-size = 32\n\nlr=0.01\n", "f").unwrap();
        assert_eq!(base.parsed::<usize>("batch_size").unwrap(), Some(32));
        let mut merged = base.clone();
        let mut cli = KeyValues::new();
        cli.set("--lr", "0.5");
        merged.merge(&cli);
        assert_eq!(merged.parsed::<f64>("lr").unwrap(), Some(0.5));
        assert!(KeyValues::parse("novalue\n", "f").is_err());
        assert!(base.parsed::<usize>("lr").is_err());
        assert!(base.check_known(&["batch_size"]).is_err());
    }

    #[test]
    fn lists() {
        let kv = KeyValues::parse("p = 0.5, 0.25,0\n", "f").unwrap();
        assert_eq!(kv.parsed_list::<f64>("p").unwrap(), Some(vec![0.5, 0.25, 0.0]));
    }
}
