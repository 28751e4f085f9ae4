//! Flat key/value configuration.
//!
//! A config file is TOML without tables: `key = value` lines, where values are
//! numbers, booleans, strings or flat arrays. Keys may be written with `-` or
//! `_`. Command-line `--key value` pairs take precedence over the file.

use crate::csvio::fmt_f64;
use crate::error::{HarnessError, Result};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

/// A documented configuration key.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

pub const fn key(key: &'static str, default: Option<&'static str>, help: &'static str) -> KeySpec {
    KeySpec { key, default, help }
}

/// Keys accepted by every subcommand.
pub const SHARED_KEYS: &[KeySpec] = &[
    key("seed", Some("0"), "root seed; every random stream is split from it"),
    key("out", Some("dpols-out"), "output directory"),
    key("strict_privacy", Some("false"), "suppress diagnostics outside the privacy guarantee"),
    key("plots", Some("false"), "also write SVG plots"),
];

pub fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

/// Parses a flat config file into normalized string values.
pub fn parse_config(text: &str, source_name: &str) -> Result<BTreeMap<String, String>> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let (line, column) = e
            .span()
            .map(|s| line_column(text, s.start))
            .unwrap_or((1, 1));
        HarnessError::Parse {
            source_name: source_name.to_string(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let mut out = BTreeMap::new();
    for (k, v) in table {
        let value = flatten(&v).ok_or_else(|| {
            HarnessError::usage(format!("{source_name}: key `{k}` must be a scalar or a flat array"))
        })?;
        out.insert(normalize(&k), value);
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

fn line_column(text: &str, offset: usize) -> (u64, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() as u64 + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

fn flatten(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(fmt_f64(*f)),
        toml::Value::Boolean(b) => Some(b.to_string()),
        toml::Value::Array(items) => {
            let parts: Option<Vec<String>> = items
                .iter()
                .map(|item| match item {
                    toml::Value::Array(_) | toml::Value::Table(_) => None,
                    other => flatten(other),
                })
                .collect();
            parts.map(|p| p.join(","))
        }
        toml::Value::Datetime(d) => Some(d.to_string()),
        toml::Value::Table(_) => None,
    }
}

/// Resolved parameters for one subcommand.
#[derive(Debug, Clone)]
pub struct Params {
    values: BTreeMap<String, String>,
}

impl Params {
    /// Merges defaults, then the file, then command-line overrides. Unknown
    /// keys in either source are rejected.
    pub fn resolve(
        specs: &[KeySpec],
        file: BTreeMap<String, String>,
        cli: BTreeMap<String, String>,
    ) -> Result<Self> {
        let known = |k: &str| specs.iter().chain(SHARED_KEYS).any(|s| s.key == k);
        let mut values = BTreeMap::new();
        for s in specs.iter().chain(SHARED_KEYS) {
            if let Some(d) = s.default {
                values.insert(s.key.to_string(), d.to_string());
            }
        }
        for (k, v) in file.into_iter().chain(cli) {
            let k = normalize(&k);
            if !known(&k) {
                return Err(HarnessError::usage(format!("unknown configuration key `{k}`")));
            }
            values.insert(k, v);
        }
        Ok(Self { values })
    }

    /// Parameters from explicit pairs on top of the defaults.
    pub fn from_pairs(specs: &[KeySpec], pairs: &[(&str, &str)]) -> Result<Self> {
        let cli = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Self::resolve(specs, BTreeMap::new(), cli)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.raw(key).is_some()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.trim()
                    .parse::<T>()
                    .map_err(|e| HarnessError::usage(format!("invalid value `{v}` for `{key}`: {e}")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?
            .ok_or_else(|| HarnessError::usage(format!("missing required value for `{key}`")))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        Ok(self.get::<bool>(key)?.unwrap_or(false))
    }

    /// Comma-separated list; must be non-empty when present.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(raw) = self.raw(key) else { return Ok(None) };
        let items: Vec<T> = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| HarnessError::usage(format!("invalid entry `{s}` in `{key}`: {e}")))
            })
            .collect::<Result<_>>()?;
        if items.is_empty() {
            return Err(HarnessError::usage(format!("`{key}` must not be empty")));
        }
        Ok(Some(items))
    }

    pub fn require_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.list(key)?
            .ok_or_else(|| HarnessError::usage(format!("missing required value for `{key}`")))
    }

    pub fn seed(&self) -> Result<u64> {
        self.require("seed")
    }

    /// Trial counts and sizes must be at least one.
    pub fn positive_count(&self, key: &str) -> Result<usize> {
        let v: usize = self.require(key)?;
        if v == 0 {
            return Err(HarnessError::usage(format!("`{key}` must be at least 1")));
        }
        Ok(v)
    }
}
