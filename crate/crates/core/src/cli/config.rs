//! Flat `key = value` run settings: a TOML file overlaid by flags.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use log::info;
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

/// Collects settings for one subcommand and every problem found while
/// resolving them, so a bad config reports all offending keys together.
#[derive(Debug, Default)]
pub struct Settings {
    table: toml::Table,
    source: Option<PathBuf>,
    seen: BTreeSet<String>,
    resolved: Vec<(String, String)>,
    problems: Vec<String>,
}

fn render(v: &toml::Value) -> String {
    v.to_string()
}

impl Settings {
    /// Loads `path` if given. Nested tables are rejected since the format
    /// is flat.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut s = Settings::default();
        let Some(path) = path else { return Ok(s) };
        let text = std::fs::read_to_string(path)?;
        s.table = text
            .parse::<toml::Table>()
            .map_err(|e| Error::Config(vec![format!("{}: {}", path.display(), e.message())]))?;
        for (k, v) in &s.table {
            if v.is_table() {
                s.problems.push(format!("{k}: nested tables are not allowed"));
            }
        }
        s.source = Some(path.to_path_buf());
        Ok(s)
    }

    fn record(&mut self, key: &str, value: toml::Value) {
        self.resolved.push((key.to_string(), render(&value)));
    }

    /// Flag value if given, else the file's value, else `None`.
    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Option<T>
    where
        T: DeserializeOwned + serde::Serialize + Clone,
    {
        self.seen.insert(key.to_string());
        let value = match flag {
            Some(v) => Some(v),
            None => match self.table.get(key).cloned() {
                Some(raw) => match raw.clone().try_into::<T>() {
                    Ok(v) => Some(v),
                    Err(_) => {
                        self.problems.push(format!("{key}: unexpected value {}", render(&raw)));
                        None
                    }
                },
                None => None,
            },
        };
        if let Some(v) = &value {
            if let Ok(tv) = toml::Value::try_from(v.clone()) {
                self.record(key, tv);
            }
        }
        value
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> T
    where
        T: DeserializeOwned + serde::Serialize + Clone,
    {
        match self.optional(key, flag) {
            Some(v) => v,
            None => {
                if let Ok(tv) = toml::Value::try_from(default.clone()) {
                    self.record(key, tv);
                }
                default
            }
        }
    }

    /// Records a problem when `value` is missing; returns a placeholder.
    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> T
    where
        T: DeserializeOwned + serde::Serialize + Clone + Default,
    {
        match self.optional(key, flag) {
            Some(v) => v,
            None => {
                if self.table.get(key).is_none() {
                    self.problems.push(format!("{key}: required"));
                }
                T::default()
            }
        }
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> PathBuf {
        PathBuf::from(self.required::<String>(key, flag.map(|p| p.to_string_lossy().into_owned())))
    }

    pub fn optional_path(&mut self, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
        self.optional::<String>(key, flag.map(|p| p.to_string_lossy().into_owned()))
            .map(PathBuf::from)
    }

    /// Adds a range or consistency problem for `key`.
    pub fn check(&mut self, ok: bool, key: &str, why: impl Display) {
        if !ok {
            self.problems.push(format!("{key}: {why}"));
        }
    }

    /// Fails with every collected problem, unknown keys included, or logs
    /// the resolved settings as a re-runnable config file.
    pub fn finish(mut self, command: &str) -> Result<Vec<(String, String)>> {
        let unknown: Vec<String> = self
            .table
            .keys()
            .filter(|k| !self.seen.contains(*k))
            .map(|k| format!("{k}: unknown key for {command}"))
            .collect();
        self.problems.extend(unknown);
        if !self.problems.is_empty() {
            return Err(Error::Config(self.problems));
        }
        match &self.source {
            Some(p) => info!("{command}: resolved config (from {})", p.display()),
            None => info!("{command}: resolved config"),
        }
        for (k, v) in &self.resolved {
            info!("  {k} = {v}");
        }
        Ok(self.resolved)
    }
}
