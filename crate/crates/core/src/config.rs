//! Flat `key = value` experiment configuration.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. Values
//! are read through a [`Resolver`], which records the value actually used
//! (defaults included) and rejects keys nobody asked for.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", no + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", no + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Typed access to a [`Config`] that remembers every resolved value.
pub struct Resolver<'a> {
    cfg: &'a Config,
    resolved: RefCell<BTreeMap<String, String>>,
}

impl<'a> Resolver<'a> {
    pub fn new(cfg: &'a Config) -> Self {
        Self {
            cfg,
            resolved: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn has(&self, key: &str) -> bool {
        self.cfg.get(key).is_some()
    }

    fn parse<T: FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse()
            .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{raw}'")))
    }

    fn record(&self, key: &str, value: String) {
        self.resolved.borrow_mut().insert(key.to_string(), value);
    }

    pub fn required<T: FromStr + Display>(&self, key: &str) -> Result<T> {
        let raw = self
            .cfg
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))?;
        let v: T = self.parse(key, raw)?;
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn or<T: FromStr + Display>(&self, key: &str, default: T) -> Result<T> {
        let v = match self.cfg.get(key) {
            Some(raw) => self.parse(key, raw)?,
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(&self, key: &str) -> Result<Option<T>> {
        match self.cfg.get(key) {
            Some(_) => self.required(key).map(Some),
            None => Ok(None),
        }
    }

    /// Comma-separated list.
    pub fn list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        let v = match self.cfg.get(key) {
            Some(raw) => raw
                .split(',')
                .map(|s| self.parse::<f64>(key, s.trim()))
                .collect::<Result<Vec<_>>>()?,
            None => default.to_vec(),
        };
        self.record(key, join(&v, ","));
        Ok(v)
    }

    /// Semicolon-separated groups of comma-separated numbers.
    pub fn groups_or(&self, key: &str, default: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let v = match self.cfg.get(key) {
            Some(raw) => raw
                .split(';')
                .map(|g| g.split(',').map(|s| self.parse::<f64>(key, s.trim())).collect())
                .collect::<Result<Vec<Vec<f64>>>>()?,
            None => default.to_vec(),
        };
        let text: Vec<String> = v.iter().map(|g| join(g, ",")).collect();
        self.record(key, text.join(";"));
        Ok(v)
    }

    /// Fails on any configured key that was never resolved.
    pub fn finish(&self, context: &str) -> Result<BTreeMap<String, String>> {
        let used = self.resolved.borrow();
        let unused: BTreeSet<&str> = self.cfg.keys().filter(|k| !used.contains_key(*k)).collect();
        if let Some(k) = unused.iter().next() {
            return Err(Error::Config(format!("unknown key '{k}' for {context}")));
        }
        Ok(used.clone())
    }
}

fn join(v: &[f64], sep: &str) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

/// `key=value` lines, sorted by key, preceded by `header` as a comment.
pub fn render(header: &str, resolved: &BTreeMap<String, String>) -> String {
    let mut out = format!("# {header}\n");
    for (k, v) in resolved {
        out.push_str(&format!("{k}={v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let c = Config::parse("# head\n\nN = 10 # particles\ndt=0.1\n").unwrap();
        assert_eq!(c.get("N"), Some("10"));
        assert_eq!(c.get("dt"), Some("0.1"));
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(Config::parse("a=1\na=2").is_err());
        assert!(Config::parse("just words").is_err());
    }

    #[test]
    fn unknown_keys_are_reported() {
        let c = Config::parse("N=3\nbogus=1").unwrap();
        let r = Resolver::new(&c);
        assert_eq!(r.required::<usize>("N").unwrap(), 3);
        let err = r.finish("simulate").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn resolved_values_round_trip() {
        let c = Config::parse("dt=0.001\nlist=1, 2.5").unwrap();
        let r = Resolver::new(&c);
        r.required::<f64>("dt").unwrap();
        r.list_or("list", &[]).unwrap();
        r.or("seed", 7u64).unwrap();
        let text = render("test", &r.finish("t").unwrap());
        let back = Config::parse(&text).unwrap();
        assert_eq!(back.get("dt"), Some("0.001"));
        assert_eq!(back.get("list"), Some("1,2.5"));
        assert_eq!(back.get("seed"), Some("7"));
    }

    #[test]
    fn missing_key_names_it() {
        let c = Config::default();
        let err = Resolver::new(&c).required::<usize>("N").unwrap_err().to_string();
        assert!(err.contains("'N'"));
    }
}
