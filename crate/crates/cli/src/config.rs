//! Flat `key = value` parameter files.
//!
//! Keys are the field names of `GsrParams`; `#` starts a comment. Unknown
//! keys, duplicate keys and unparsable values are errors.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use gsr_nls::{GsrParams, Mode};

pub const KEYS: [&str; 13] = [
    "sigma_n",
    "patch_side",
    "stride",
    "window",
    "m",
    "c",
    "eta",
    "gamma",
    "h",
    "tau",
    "epsilon",
    "max_iter",
    "mode",
];

/// Parsed `(key, value)` pairs in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub entries: Vec<(String, String)>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                bail!("line {}: unknown key {key:?} (known: {})", i + 1, KEYS.join(", "));
            }
            if entries.iter().any(|(k, _)| k == key) {
                bail!("line {}: duplicate key {key:?}", i + 1);
            }
            entries.push((key.to_string(), value.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn sigma_n(&self) -> Result<Option<f64>> {
        self.get("sigma_n").map(|v| parse_value("sigma_n", v)).transpose()
    }

    /// Overwrites every field named in the file except `sigma_n`, which
    /// selects the schedule and is handled by the caller.
    pub fn apply(&self, params: &mut GsrParams) -> Result<()> {
        for (key, value) in &self.entries {
            match key.as_str() {
                "sigma_n" => {}
                "patch_side" => params.patch_side = parse_value(key, value)?,
                "stride" => params.stride = parse_value(key, value)?,
                "window" => params.window = parse_value(key, value)?,
                "m" => params.m = parse_value(key, value)?,
                "c" => params.c = parse_value(key, value)?,
                "eta" => params.eta = parse_value(key, value)?,
                "gamma" => params.gamma = parse_value(key, value)?,
                "h" => params.h = parse_value(key, value)?,
                "tau" => params.tau = parse_value(key, value)?,
                "epsilon" => params.epsilon = parse_value(key, value)?,
                "max_iter" => params.max_iter = parse_value(key, value)?,
                "mode" => params.mode = value.parse::<Mode>()?,
                _ => unreachable!("keys are validated while parsing"),
            }
        }
        Ok(())
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("bad value {value:?} for {key}: {e}"))
}
