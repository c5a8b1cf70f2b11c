//! Flat `key = value` run settings: defaults, then a config file, then flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lvcal::{Error, Result};

pub const ECHO_FILE: &str = "config_used.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    command: String,
    values: BTreeMap<String, String>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

impl Settings {
    pub fn new(command: &str, defaults: &[(&str, &str)]) -> Self {
        let values = defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Self { command: command.to_string(), values }
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys must be known.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "command" {
                if value != self.command {
                    return Err(bad(format!("{origin}:{}: config is for `{value}`, not `{}`", n + 1, self.command)));
                }
                continue;
            }
            match self.values.get_mut(key) {
                Some(slot) => *slot = value.to_string(),
                None => return Err(bad(format!("{origin}:{}: unknown key `{key}` for `{}`", n + 1, self.command))),
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Flag overrides; `None` leaves the current value.
    pub fn apply_flags<'a>(&mut self, flags: impl IntoIterator<Item = (&'a str, Option<String>)>) {
        for (key, value) in flags {
            if let Some(v) = value {
                assert!(self.values.contains_key(key), "flag `{key}` has no default");
                self.values.insert(key.to_string(), v);
            }
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unknown settings key `{key}`"))
    }

    /// Value of `key`, or `None` when empty.
    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let v = self.raw(key);
        if v.is_empty() {
            return Ok(None);
        }
        v.parse().map(Some).map_err(|e| bad(format!("invalid value `{v}` for `{key}`: {e}")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.optional(key)?.ok_or_else(|| bad(format!("`{key}` is empty")))
    }

    /// Like [`get`](Self::get) but names the command-line flag when missing.
    pub fn required<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.optional(key)?.ok_or_else(|| bad(format!("missing required flag --{}", key.replace('_', "-"))))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.path("out").ok_or_else(|| bad("missing required flag --out"))?;
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    pub fn echo(&self) -> String {
        let mut s = format!("command = {}\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn write_echo(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(ECHO_FILE), self.echo())?;
        Ok(())
    }
}
