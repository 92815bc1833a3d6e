//! Flat `key = value` configuration files merged with command-line flags.
//!
//! Keys use the long flag names (`-` and `_` are interchangeable). Blank
//! lines and `#` comments are ignored; flags given on the command line win.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use asgrad::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl Settings {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            values.insert(normalize(k), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Overlay command-line values; `None` leaves the file value in place.
    pub fn overlay<'a>(&mut self, flags: impl IntoIterator<Item = (&'a str, Option<String>)>) {
        for (k, v) in flags {
            if let Some(v) = v {
                self.values.insert(normalize(k), v);
            }
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing required setting {key}")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|_| Error::Config(format!("invalid entry {s:?} in {key}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            None => Ok(false),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(Error::Config(format!("invalid boolean {v:?} for {key}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let mut s = Settings::parse("gamma = 0.01\n# note\n[run]\nstrategy=pure\n", Path::new("x.cfg")).unwrap();
        s.overlay([("gamma", Some("0.02".to_string())), ("seed", None)]);
        assert_eq!(s.get::<f64>("gamma").unwrap(), Some(0.02));
        assert_eq!(s.raw("strategy"), Some("pure"));
        assert_eq!(s.get::<u64>("seed").unwrap(), None);
    }

    #[test]
    fn underscores_match_dashes() {
        let s = Settings::parse("snapshot_every = 5", Path::new("x")).unwrap();
        assert_eq!(s.get::<usize>("snapshot-every").unwrap(), Some(5));
    }

    #[test]
    fn lists_and_errors() {
        let s = Settings::parse("grid = 0.1, 0.2,\nseeds = 1,x", Path::new("x")).unwrap();
        assert_eq!(s.list::<f64>("grid").unwrap(), Some(vec![0.1, 0.2]));
        assert!(s.list::<u64>("seeds").is_err());
        assert!(Settings::parse("novalue", Path::new("x")).is_err());
    }
}
