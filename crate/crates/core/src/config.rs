//! Flat `key = value` configuration files.
//!
//! Blank lines and text after `#` are ignored. Keys carry their unit as a
//! suffix (`loss_db`, `angle_deg`); every angle in a config file is in
//! degrees. Each command declares the keys it accepts and anything else is
//! rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed configuration with the lines each key came from.
#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
    base_dir: Option<PathBuf>,
    source: String,
}

impl Config {
    pub fn empty() -> Self {
        Self { source: "config".into(), ..Self::default() }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_named(text, "config")
    }

    fn parse_named(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("");
            if body.trim().is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(Error::parse(source, line, 1, "expected `key = value`"));
            };
            let key = k.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::parse(source, line, 1, format!("invalid key `{key}`")));
            }
            let value = v.trim();
            if value.is_empty() {
                let col = body.find('=').unwrap_or(0) + 2;
                return Err(Error::parse(source, line, col, format!("`{key}` has no value")));
            }
            if entries.insert(key.to_string(), Entry { value: value.to_string(), line }).is_some() {
                return Err(Error::parse(source, line, 1, format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries, base_dir: None, source: source.to_string() })
    }

    /// Read a file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse_named(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    /// Fail on the first key not in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, e) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Input(format!(
                    "{}: line {}: unknown key `{k}` (allowed: {})",
                    self.source,
                    e.line,
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Set a value programmatically (command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), Entry { value: value.into(), line: 0 });
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn bad(&self, key: &str, what: &str) -> Error {
        let e = &self.entries[key];
        Error::Input(format!("{}: line {}: `{key}` must be {what}, got `{}`", self.source, e.line, e.value))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.str(key) {
            None => Ok(default),
            Some(v) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(self.bad(key, "a finite number")),
            },
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.str(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.bad(key, "a non-negative integer")),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.str(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(_) => Err(self.bad(key, "`true` or `false`")),
        }
    }

    /// Comma-separated numbers.
    pub fn list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.str(key) {
            None => Ok(default.to_vec()),
            Some(v) => {
                let items: std::result::Result<Vec<f64>, _> = v.split(',').map(|s| s.trim().parse::<f64>()).collect();
                match items {
                    Ok(xs) if !xs.is_empty() && xs.iter().all(|x| x.is_finite()) => Ok(xs),
                    _ => Err(self.bad(key, "a comma-separated list of numbers")),
                }
            }
        }
    }

    /// Comma-separated words.
    pub fn words_or(&self, key: &str, default: &[&str]) -> Vec<String> {
        match self.str(key) {
            None => default.iter().map(|s| s.to_string()).collect(),
            Some(v) => v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        }
    }

    /// One of `choices`.
    pub fn choice_or<'a>(&self, key: &str, choices: &[&'a str], default: &'a str) -> Result<&'a str> {
        match self.str(key) {
            None => Ok(default),
            Some(v) => choices
                .iter()
                .find(|&&c| c == v)
                .copied()
                .ok_or_else(|| self.bad(key, &format!("one of {}", choices.join(", ")))),
        }
    }

    /// Path value resolved against the config file's directory.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.str(key).map(|v| {
            let p = PathBuf::from(v);
            match (&self.base_dir, p.is_absolute()) {
                (Some(dir), false) => dir.join(p),
                _ => p,
            }
        })
    }
}
