//! Flat namespaced `section.key = value` documents.
//!
//! Every consumer reads keys through [`FlatConfig::take`] style accessors so
//! that leftover keys can be reported as unknown after all sections have been
//! applied.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl FlatConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim();
            if key.is_empty() || !key.contains('.') {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("key `{key}` must be namespaced as section.key"),
                });
            }
            if cfg.entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(cfg)
    }

    /// Insert or replace a value; later sets win (used for flag overrides).
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::config(format!("invalid value `{v}` for `{key}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn has_section(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.entries.keys().any(|k| k.starts_with(&p))
    }

    /// Keys that were never read by any accessor.
    pub fn unused_keys(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.entries.keys().filter(|k| !used.contains(*k)).cloned().collect()
    }

    pub fn reject_unknown(&self) -> Result<()> {
        let unused = self.unused_keys();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!("unknown keys: {}", unused.join(", "))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_tracks_usage() {
        let cfg = FlatConfig::parse("# comment\nmls.prompt_token_cap = 2048\ncls.bogus = 1\n").unwrap();
        assert_eq!(cfg.get::<u32>("mls.prompt_token_cap").unwrap(), Some(2048));
        assert_eq!(cfg.unused_keys(), vec!["cls.bogus".to_string()]);
        assert!(cfg.reject_unknown().is_err());
    }

    #[test]
    fn rejects_unnamespaced_and_duplicates() {
        assert!(FlatConfig::parse("foo = 1").is_err());
        assert!(FlatConfig::parse("a.b = 1\na.b = 2").is_err());
    }

    #[test]
    fn bad_value_is_config_error() {
        let cfg = FlatConfig::parse("mls.aging_rate = fast").unwrap();
        assert!(matches!(cfg.get::<f64>("mls.aging_rate"), Err(Error::Config(_))));
    }
}
