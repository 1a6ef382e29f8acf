//! Config-file overrides: one `key = value` per line, `#` comments.
//! Precedence is defaults < file < explicit flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::str::FromStr;

use crate::CliError;

pub struct FileCfg {
    values: BTreeMap<String, String>,
}

impl FileCfg {
    pub fn empty() -> Self {
        FileCfg {
            values: BTreeMap::new(),
        }
    }

    /// Loads the file and rejects keys outside this command's
    /// vocabulary, so a typo never silently becomes a no-op.
    pub fn load(path: &str, allowed: &[&str]) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("config file {path}: {e}")))?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::usage(format!(
                    "config file {path} line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::usage(format!(
                    "config file {path} line {}: unknown key `{key}` (allowed: {})",
                    lineno + 1,
                    allowed.join(", ")
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(FileCfg { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                CliError::usage(format!("config key `{key}`: cannot parse `{raw}`: {e}"))
            }),
        }
    }
}

pub fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
