//! Command settings: an optional `key=value` config file overlaid by
//! command-line flags. Keys are flag names with `_` for `-`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{self, Entries};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

pub fn flag(key: &str) -> String {
    format!("--{}", key.replace('_', "-"))
}

impl Settings {
    /// Merge `config` (if any) with `overrides`; every key must be in `allowed`.
    pub fn resolve(config: Option<&Path>, allowed: &[&str], overrides: Vec<(&str, String)>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = config {
            let e = Entries::read(path)?;
            if let Some(k) = e.unknown_key(allowed) {
                return Err(Error::Usage(format!(
                    "{}: unknown key `{k}` at byte {}",
                    path.display(),
                    e.offset(k)
                )));
            }
            for k in e.keys() {
                values.insert(k.to_string(), e.get(k).expect("listed key").to_string());
            }
        }
        for (k, v) in overrides {
            debug_assert!(allowed.contains(&k), "flag {k} missing from its key list");
            values.insert(k.to_string(), v);
        }
        Ok(Settings { values })
    }

    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        Settings {
            values: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Usage(format!("{}: cannot parse `{v}`", flag(key))))
            })
            .transpose()
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.opt(key)?
            .ok_or_else(|| Error::Usage(format!("{} is required (flag or config key `{key}`)", flag(key))))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| kv::split_list(v).ok_or_else(|| Error::Usage(format!("{}: bad list `{v}`", flag(key)))))
            .transpose()
    }

    /// The resolved settings as `key=value` lines in key order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            kv::line(&mut out, k, v);
        }
        out
    }
}
