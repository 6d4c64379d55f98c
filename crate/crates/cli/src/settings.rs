//! Config files and flag resolution.
//!
//! A config file holds `section.key = value` lines; `#` starts a comment. Each
//! setting resolves as flag, then file, then built-in default, and the resolved
//! values are written back out in the same format as `config.txt`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub const ECHO_FILE: &str = "config.txt";

#[derive(Debug, Default)]
pub struct Settings {
    section: &'static str,
    file: BTreeMap<String, String>,
    resolved: Vec<(String, String)>,
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `section.key = value`, found `{raw}`", i + 1))?;
        let key = key.trim();
        if !key.contains('.') || key.starts_with('.') || key.ends_with('.') {
            return Err(format!("line {}: key `{key}` must have the form `section.key`", i + 1));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

impl Settings {
    pub fn load(section: &'static str, path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            None => BTreeMap::new(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                parse_config(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
        };
        Ok(Settings {
            section,
            file,
            resolved: Vec::new(),
        })
    }

    /// Flag, else file value, else `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
    {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.record(key, &v);
        Ok(v)
    }

    /// As [`Settings::get`] without a default; unset values echo as empty.
    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
    {
        let v = self.lookup(key, flag)?;
        match &v {
            Some(x) => self.record(key, x),
            None => self.record(key, &""),
        }
        Ok(v)
    }

    fn lookup<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        let full = format!("{}.{key}", self.section);
        match self.file.get(&full) {
            None => Ok(None),
            Some(s) if s.is_empty() => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("bad value `{s}` for `{full}` in config file"))),
        }
    }

    fn record(&mut self, key: &str, v: &dyn Display) {
        self.resolved.push((format!("{}.{key}", self.section), v.to_string()));
    }

    pub fn echo(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn write_echo(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let path = dir.join(ECHO_FILE);
        fs::write(&path, self.echo()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}
