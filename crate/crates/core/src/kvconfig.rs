//! Plain-text `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.
//! Values are trimmed; everything after the first `=` belongs to the value.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: IndexMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = IndexMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got {line:?}",
                    lineno + 1
                )));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.shift_remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `key` if present.
    pub fn parse_value<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("`{key}` = {v:?}: {e}")))
            })
            .transpose()
    }

    /// Rejects any key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.keys() {
            if !allowed.contains(&key) {
                return Err(Error::Config(format!("unknown configuration key `{key}`")));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Parses a comma-separated list such as `0.5, 0.5, 0.5`.
pub fn parse_list<T>(key: &str, value: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| Error::Config(format!("`{key}` item {s:?}: {e}")))
        })
        .collect()
}

pub fn join_list<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let cfg = KvConfig::parse("# header\n\nepochs = 3\nname = a = b\n").unwrap();
        assert_eq!(cfg.get("epochs"), Some("3"));
        assert_eq!(cfg.get("name"), Some("a = b"));
        assert_eq!(cfg.parse_value::<usize>("epochs").unwrap(), Some(3));
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(KvConfig::parse("a = 1\na = 2").is_err());
        assert!(KvConfig::parse("just words").is_err());
        assert!(KvConfig::parse(" = 4").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let cfg = KvConfig::parse("a = 1\nb = 2").unwrap();
        assert!(cfg.check_keys(&["a", "b"]).is_ok());
        assert!(matches!(cfg.check_keys(&["a"]), Err(Error::Config(_))));
    }

    #[test]
    fn render_round_trips() {
        let cfg = KvConfig::parse("x = 1.5\ny = a,b").unwrap();
        assert_eq!(KvConfig::parse(&cfg.render()).unwrap(), cfg);
    }
}
