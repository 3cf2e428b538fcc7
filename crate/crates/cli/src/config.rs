//! Layered option resolution: command-line flags beat `REMGATE_*`
//! environment variables, which beat the key=value config file, which beats
//! built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    /// Loads the config file if one was named. Lines are `key = value`;
    /// blank lines and `#` comments are ignored.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(CliError::Usage(format!(
                        "config {} line {}: expected key=value",
                        path.display(),
                        lineno + 1
                    )));
                };
                file.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Settings { file })
    }

    /// The environment or config-file value for a key, if any. The key
    /// `fault-rate` maps to the variable `REMGATE_FAULT_RATE`.
    fn raw(&self, key: &str) -> Option<String> {
        let env_key = format!("REMGATE_{}", key.to_uppercase().replace('-', "_"));
        if let Ok(value) = std::env::var(&env_key) {
            return Some(value);
        }
        self.file.get(key).cloned()
    }

    /// Resolves one option through the layers; `None` if set nowhere.
    pub fn resolve<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.raw(key) {
            Some(text) => text.parse().map(Some).map_err(|e| {
                CliError::Usage(format!("option {key}: cannot parse {text:?}: {e}"))
            }),
            None => Ok(None),
        }
    }

    /// Like [`Settings::resolve`] with a final default.
    pub fn get<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.resolve(key, flag)?.unwrap_or(default))
    }

    /// Like [`Settings::resolve`] but the option is mandatory.
    pub fn require<T>(&self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.resolve(key, flag)?.ok_or_else(|| {
            CliError::Usage(format!(
                "missing --{key} (or REMGATE_{} or config entry {key})",
                key.to_uppercase().replace('-', "_")
            ))
        })
    }
}
