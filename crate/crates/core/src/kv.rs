//! Flat `key = value` text used for config files and checkpoint headers.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parse `key = value` lines. Blank lines and `#` comments are ignored;
/// duplicate keys are an error.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1)));
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if !seen.insert(k.clone()) {
            return Err(Error::Config(format!("duplicate key {k:?}")));
        }
        out.push((k, v));
    }
    Ok(out)
}

pub fn render(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn value<T>(key: &str, raw: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    raw.parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {raw:?}: {e}")))
}

/// Types that can be read from and written to flat key/value pairs.
pub trait KeyValue: Sized {
    fn to_pairs(&self) -> Vec<(String, String)>;

    /// Apply one pair; `Ok(false)` when the key is not recognised.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;

    /// Apply every pair, rejecting unknown keys.
    fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            if !self.set(k, v)? {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
        }
        Ok(())
    }
}
