//! Flat `key=value` text shared by manifests, config files and reports.
//! Blank lines and lines starting with `#` are ignored; keys are unique.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Entries {
    map: BTreeMap<String, (String, u64)>,
}

impl Entries {
    /// Parse `text`; hyphens in keys are read as underscores.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let at = offset;
            offset += line.len() as u64;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (k, v) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::format(path, at, format!("expected key=value, got `{trimmed}`")))?;
            let key = k.trim().replace('-', "_");
            if key.is_empty() {
                return Err(Error::format(path, at, "empty key"));
            }
            if map.insert(key.clone(), (v.trim().to_string(), at)).is_some() {
                return Err(Error::format(path, at, format!("duplicate key `{key}`")));
            }
        }
        Ok(Entries { map })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(v, _)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Byte offset of the line that defined `key`.
    pub fn offset(&self, key: &str) -> u64 {
        self.map.get(key).map_or(0, |(_, o)| *o)
    }

    /// First key not in `allowed`.
    pub fn unknown_key(&self, allowed: &[&str]) -> Option<&str> {
        self.keys().find(|k| !allowed.contains(k))
    }
}

/// Comma-separated list without spaces.
pub fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn split_list<T: std::str::FromStr>(v: &str) -> Option<Vec<T>> {
    if v.is_empty() {
        return Some(Vec::new());
    }
    v.split(',').map(|s| s.trim().parse().ok()).collect()
}

/// Append `key=value\n`.
pub fn line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key}={value}");
}
