//! Line-based `key = value` configuration files and the resolved run
//! configuration (flag > config file > default) echoed into every artifact.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Ordered `key = value` pairs. Blank lines and `#` comments are skipped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", idx + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", idx + 1)));
            }
            kv.set(key, value.trim());
        }
        Ok(kv)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
            })
            .transpose()
    }

    /// Replaces an existing key in place or appends a new one.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Default,
    ConfigFile,
    Flag,
    /// Taken from a dataset directory or an earlier artifact's sidecar.
    Inherited,
}

impl Provenance {
    fn as_str(self) -> &'static str {
        match self {
            Provenance::Default => "default",
            Provenance::ConfigFile => "config-file",
            Provenance::Flag => "flag",
            Provenance::Inherited => "inherited",
        }
    }
}

/// Resolved settings for one CLI invocation, remembering where each came from.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    file: KeyValues,
    resolved: Vec<(String, String, Provenance)>,
}

impl RunConfig {
    pub fn new(file: KeyValues) -> Self {
        RunConfig {
            file,
            resolved: Vec::new(),
        }
    }

    fn record(&mut self, key: &str, value: String, provenance: Provenance) {
        self.resolved.retain(|(k, _, _)| k != key);
        self.resolved.push((key.to_string(), value, provenance));
    }

    pub fn resolve<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + fmt::Display,
    {
        let value = self.resolve_opt(key, flag)?;
        Ok(match value {
            Some(v) => v,
            None => {
                self.record(key, default.to_string(), Provenance::Default);
                default
            }
        })
    }

    /// Records a value that came from neither a flag nor the config file.
    pub fn inherit<T: fmt::Display>(&mut self, key: &str, value: T) -> T {
        self.record(key, value.to_string(), Provenance::Inherited);
        value
    }

    /// Like [`RunConfig::resolve`] but without a default; unset keys are not recorded.
    pub fn resolve_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + fmt::Display,
    {
        if let Some(v) = flag {
            self.record(key, v.to_string(), Provenance::Flag);
            return Ok(Some(v));
        }
        match self.file.get_parsed::<T>(key)? {
            Some(v) => {
                self.record(key, v.to_string(), Provenance::ConfigFile);
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    pub fn provenance(&self, key: &str) -> Option<Provenance> {
        self.resolved.iter().find(|(k, _, _)| k == key).map(|(_, _, p)| *p)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.resolved
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }

    /// The resolved view as a config file: tool/version header keys, every
    /// resolved value, then a `provenance` line.
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("tool", TOOL_NAME);
        kv.set("version", TOOL_VERSION);
        for (k, v, _) in &self.resolved {
            kv.set(k, v.clone());
        }
        let provenance: Vec<String> = self
            .resolved
            .iter()
            .map(|(k, _, p)| format!("{k}:{}", p.as_str()))
            .collect();
        kv.set("provenance", provenance.join(","));
        kv
    }
}
