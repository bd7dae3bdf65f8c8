//! Line-oriented `key = value` configuration with `[section]` headers.
//!
//! Resolution order: built-in defaults, then the config file, then
//! command-line overrides. Sections named `<section>:<layout>` override
//! keys of `<section>` for a single layout.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const DEFAULTS: &str = include_str!("default.conf");

/// Section holding run metadata in a manifest; ignored when hashing.
pub const MANIFEST_SECTION: &str = "manifest";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, CliError> {
        let mut cfg = Config::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::Config(format!("line {lineno}: unterminated section header")))?
                    .trim();
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(CliError::Config(format!("line {lineno}: bad section name {name:?}")));
                }
                cfg.sections.entry(name.to_string()).or_default();
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {lineno}: expected `key = value`")))?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(CliError::Config(format!("line {lineno}: bad key {key:?}")));
            }
            let sec = section
                .as_ref()
                .ok_or_else(|| CliError::Config(format!("line {lineno}: `{key}` appears before any section")))?;
            let entries = cfg.sections.get_mut(sec).unwrap();
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("line {lineno}: duplicate key {sec}.{key}")));
            }
        }
        Ok(cfg)
    }

    pub fn defaults() -> Config {
        Config::parse(DEFAULTS).expect("built-in defaults parse")
    }

    /// Overlays `other`; keys must already exist in the base section (or in
    /// the parent section for layout-specific sections).
    pub fn merge(&mut self, other: &Config) -> Result<(), CliError> {
        for (sec, entries) in &other.sections {
            if sec == MANIFEST_SECTION {
                continue;
            }
            let parent = sec.split_once(':').map_or(sec.as_str(), |(p, _)| p);
            let known = self
                .sections
                .get(parent)
                .ok_or_else(|| CliError::Config(format!("unknown section [{sec}]")))?
                .clone();
            for key in entries.keys() {
                if !known.contains_key(key) {
                    return Err(CliError::Config(format!("unknown key {sec}.{key}")));
                }
            }
            let target = self.sections.entry(sec.clone()).or_default();
            for (k, v) in entries {
                target.insert(k.clone(), v.clone());
            }
        }
        Ok(())
    }

    /// Applies `section.key=value` (or a bare `key=value` when the key names
    /// exactly one section).
    pub fn set(&mut self, spec: &str) -> Result<(), CliError> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {spec:?} is not key=value")))?;
        let path = path.trim().trim_start_matches("--");
        let (sec, key) = match path.split_once('.') {
            Some((s, k)) if self.sections.contains_key(s.split(':').next().unwrap()) => (s.to_string(), k.to_string()),
            _ => {
                let owners: Vec<&String> = self
                    .sections
                    .iter()
                    .filter(|(s, e)| !s.contains(':') && e.contains_key(path))
                    .map(|(s, _)| s)
                    .collect();
                match owners.as_slice() {
                    [one] => ((*one).clone(), path.to_string()),
                    [] => return Err(CliError::Usage(format!("unknown setting {path:?}"))),
                    _ => return Err(CliError::Usage(format!("setting {path:?} is ambiguous; prefix it with a section"))),
                }
            }
        };
        let mut patch = Config::default();
        patch.sections.entry(sec).or_default().insert(key, value.trim().to_string());
        self.merge(&patch)
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    /// Looks in `[section:layout]` first, then `[section]`.
    pub fn get(&self, section: &str, key: &str, layout: Option<&str>) -> Result<&str, CliError> {
        if let Some(l) = layout {
            if let Some(v) = self.raw(&format!("{section}:{l}"), key) {
                return Ok(v);
            }
        }
        self.raw(section, key).ok_or_else(|| CliError::Config(format!("missing setting {section}.{key}")))
    }

    pub fn parse_as<T: std::str::FromStr>(&self, section: &str, key: &str, layout: Option<&str>) -> Result<T, CliError> {
        let v = self.get(section, key, layout)?;
        v.parse().map_err(|_| CliError::Config(format!("{section}.{key}: cannot parse {v:?}")))
    }

    pub fn list(&self, section: &str, key: &str, layout: Option<&str>) -> Result<Vec<String>, CliError> {
        Ok(self
            .get(section, key, layout)?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect())
    }

    pub fn list_f64(&self, section: &str, key: &str) -> Result<Vec<f64>, CliError> {
        self.list(section, key, None)?
            .iter()
            .map(|s| s.parse().map_err(|_| CliError::Config(format!("{section}.{key}: bad number {s:?}"))))
            .collect()
    }

    /// `a..b` (half open) or a comma list; entries must be distinct.
    pub fn seeds(&self) -> Result<Vec<u64>, CliError> {
        let text = self.get("experiment", "seeds", None)?;
        let bad = || CliError::Config(format!("experiment.seeds: cannot parse {text:?}"));
        let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            (a..b).collect()
        } else {
            text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
        };
        if seeds.is_empty() {
            return Err(CliError::Config("experiment.seeds is empty".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(CliError::Config("experiment.seeds must be distinct".into()));
        }
        Ok(seeds)
    }

    /// Sorted `[section]` / `key = value` text without the manifest section.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (sec, entries) in self.sections.iter().filter(|(s, _)| s.as_str() != MANIFEST_SECTION) {
            writeln!(out, "[{sec}]").unwrap();
            for (k, v) in entries {
                writeln!(out, "{k} = {v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(a, _)| a)
}

/// Defaults + optional file text + overrides, with a manifest hash check
/// when the file is a manifest.
pub fn resolve(file: Option<&str>, overrides: &[String]) -> Result<Config, CliError> {
    let mut cfg = Config::defaults();
    if let Some(text) = file {
        let user = Config::parse(text)?;
        cfg.merge(&user)?;
        if let Some(expected) = user.raw(MANIFEST_SECTION, "config_hash") {
            let mut base = Config::defaults();
            base.merge(&user)?;
            if base.hash() != expected {
                return Err(CliError::Config(format!(
                    "manifest config hash {expected} does not match its recorded config ({})",
                    base.hash()
                )));
            }
        }
    }
    for o in overrides {
        cfg.set(o)?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_resolve() {
        let cfg = Config::defaults();
        assert_eq!(cfg.parse_as::<f64>("experiment", "lambda", None).unwrap(), 20.0);
        assert_eq!(cfg.seeds().unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(cfg.parse_as::<usize>("train", "steps", Some("grid_room")).unwrap(), 6000);
        assert_eq!(cfg.parse_as::<usize>("train", "steps", Some("grid_task")).unwrap(), 3000);
    }

    #[test]
    fn overrides_and_errors() {
        let mut cfg = Config::defaults();
        cfg.set("train.lr=3e-4").unwrap();
        cfg.set("--resamples=2000").unwrap();
        assert_eq!(cfg.raw("train", "lr"), Some("3e-4"));
        assert_eq!(cfg.raw("shape", "resamples"), Some("2000"));
        assert!(cfg.set("layouts=grid_task").is_err());
        assert!(cfg.set("nope=1").is_err());
        assert!(Config::parse("[a]\nx = 1\nx = 2\n").is_err());
        assert!(Config::parse("x = 1\n").is_err());
        assert!(Config::parse("[a\n").is_err());
        let mut c = Config::defaults();
        assert!(c.merge(&Config::parse("[train]\nbogus = 1\n").unwrap()).is_err());
        assert!(c.merge(&Config::parse("[bogus]\n").unwrap()).is_err());
    }

    #[test]
    fn hash_ignores_order_and_comments() {
        let a = Config::parse("[train]\nlr = 1\nsteps = 2\n").unwrap();
        let b = Config::parse("# c\n[train]\nsteps = 2 # two\nlr = 1\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(Config::parse(&a.canonical()).unwrap(), a);
    }

    #[test]
    fn seeds_must_be_distinct() {
        let mut cfg = Config::defaults();
        cfg.set("seeds=1, 2, 1").unwrap();
        assert!(cfg.seeds().is_err());
        cfg.set("seeds=4,7").unwrap();
        assert_eq!(cfg.seeds().unwrap(), vec![4, 7]);
    }
}
