//! Flat `key = value` config files and flag/config/default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};

use crate::InputError;

/// Environment variable holding the default seed.
pub const SEED_ENV: &str = "BRLKIT_SEED";

/// Keys a config file may set. They match the long flag names.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "loss",
    "t",
    "alpha",
    "gamma",
    "confusion-weight",
    "confusion-iou",
    "ambiguous-background",
    "epochs",
    "lr",
    "batch",
    "dim",
    "noise",
    "feature-seed",
    "score-threshold",
    "nms-iou",
    "curation-seed",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| InputError(format!("config line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(InputError(format!("config line {}: unknown key {key:?}", n + 1)).into());
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| InputError(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text).with_context(|| format!("in {}", p.display()))
            }
        }
    }

    /// The flag value if given, else the config value, else `None`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!(InputError(format!("config key {key}: {e}")))),
        }
    }

    pub fn pick_or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    /// Seed precedence: flag, config, `BRLKIT_SEED`, then 0.
    pub fn seed(&self, flag: Option<u64>, key: &str) -> Result<u64> {
        if let Some(s) = self.pick(flag, key)? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|e| anyhow!(InputError(format!("{SEED_ENV}={v:?}: {e}")))),
            Err(_) => Ok(0),
        }
    }
}
