//! Line-oriented `key = value` configuration shared by nodes, clients and
//! the simulator.
//!
//! Blank lines and lines starting with `#` are ignored. A `[name]` line opens
//! a raw section whose lines are kept verbatim for the consumer to parse.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: invalid value {value:?}")]
    Invalid { key: String, value: String },
    #[error("unknown key `{0}`")]
    Unknown(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    sections: BTreeMap<String, Vec<(usize, String)>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        text.parse()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::Invalid {
                key: key.to_string(),
                value: v.to_string(),
            }),
        }
    }

    /// Comma-separated list; empty items are dropped.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Lines of a `[name]` section with their 1-based line numbers.
    pub fn section(&self, name: &str) -> &[(usize, String)] {
        self.sections.get(name).map_or(&[], Vec::as_slice)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Rejects keys and sections outside the allowed sets.
    pub fn check_keys(&self, keys: &[&str], sections: &[&str]) -> Result<(), ConfigError> {
        if let Some(k) = self.values.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(ConfigError::Unknown(k.clone()));
        }
        if let Some(s) = self.sections.keys().find(|s| !sections.contains(&s.as_str())) {
            return Err(ConfigError::Unknown(format!("[{s}]")));
        }
        Ok(())
    }
}

impl FromStr for ConfigFile {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut cfg = ConfigFile::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                if name.is_empty() {
                    return Err(ConfigError::Syntax { line: line_no, msg: "empty section name".into() });
                }
                cfg.sections.entry(name.clone()).or_default();
                section = Some(name);
                continue;
            }
            if let Some(name) = &section {
                cfg.sections.get_mut(name).expect("opened").push((line_no, line.to_string()));
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: line_no, msg: format!("expected `key = value`, got {line:?}") });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: line_no, msg: "empty key".into() });
            }
            if cfg.values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Syntax { line: line_no, msg: format!("duplicate key `{key}`") });
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_lists_and_sections() {
        let cfg: ConfigFile = "# node\nlisten = 127.0.0.1:7000\nseeds = a:1, b:2,,\n\n[events]\nt=10 join 3\nt=20 crash 1\n"
            .parse()
            .unwrap();
        assert_eq!(cfg.get("listen"), Some("127.0.0.1:7000"));
        assert_eq!(cfg.list("seeds"), vec!["a:1", "b:2"]);
        assert_eq!(cfg.list("absent"), Vec::<String>::new());
        assert_eq!(cfg.section("events").len(), 2);
        assert_eq!(cfg.section("events")[1], (7, "t=20 crash 1".to_string()));
        assert!(cfg.section("other").is_empty());
    }

    #[test]
    fn typed_access() {
        let cfg: ConfigFile = "gossip.fanout = 4\ngossip.decay = x".parse().unwrap();
        assert_eq!(cfg.parse_or("gossip.fanout", 3usize).unwrap(), 4);
        assert_eq!(cfg.parse_or("gossip.t_min_ms", 1000u64).unwrap(), 1000);
        assert!(matches!(cfg.parse_or("gossip.decay", 0.5f64), Err(ConfigError::Invalid { .. })));
        assert_eq!(cfg.require("listen"), Err(ConfigError::Missing("listen".into())));
    }

    #[test]
    fn syntax_errors_name_the_line() {
        assert_eq!(
            "a = 1\nnot a pair\n".parse::<ConfigFile>().unwrap_err(),
            ConfigError::Syntax { line: 2, msg: "expected `key = value`, got \"not a pair\"".into() }
        );
        assert!(matches!("a = 1\na = 2".parse::<ConfigFile>(), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!("= 2".parse::<ConfigFile>(), Err(ConfigError::Syntax { line: 1, .. })));
    }

    #[test]
    fn unknown_keys_rejected() {
        let cfg: ConfigFile = "listen = x\nlisen = y\n[events]\n".parse().unwrap();
        assert_eq!(cfg.check_keys(&["listen"], &["events"]), Err(ConfigError::Unknown("lisen".into())));
        assert!(cfg.check_keys(&["listen", "lisen"], &[]).is_err());
        assert!(cfg.check_keys(&["listen", "lisen"], &["events"]).is_ok());
    }
}
