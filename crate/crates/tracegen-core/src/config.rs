//! Sectioned key-value config files.
//!
//! The on-disk format is deliberately small: `key = value` lines, optional
//! `[section]` headers, `#` comments, blank lines ignored. Values keep
//! everything after the first `=` (trimmed), so commas and colons inside
//! values need no quoting. Top-level keys before any header live in the
//! unnamed section `""`.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unterminated section header `{text}`")]
    BadSection { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}` in section `[{section}]`")]
    DuplicateKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("missing required key `{key}` in section `[{section}]`")]
    MissingKey { section: String, key: String },
    #[error("key `{key}` in section `[{section}]`: expected {expected}, got `{value}`")]
    BadValue {
        section: String,
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        sections.entry(current.clone()).or_default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(ConfigError::BadSection {
                        line,
                        text: trimmed.to_string(),
                    });
                };
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line,
                    text: trimmed.to_string(),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let section = sections.get_mut(&current).expect("section inserted above");
            if section.contains_key(&key) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    section: current.clone(),
                    key,
                });
            }
            section.insert(key, value);
        }
        Ok(ConfigFile { sections })
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Raw lookup; `section` is `""` for top-level keys.
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|s| s.as_str())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(|s| s.as_str())
    }

    /// Keys of one section in lexicographic order.
    pub fn keys(&self, section: &str) -> impl Iterator<Item = &str> {
        self.sections
            .get(section)
            .into_iter()
            .flat_map(|m| m.keys().map(|s| s.as_str()))
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.get(section, key).ok_or_else(|| ConfigError::MissingKey {
            section: section.to_string(),
            key: key.to_string(),
        })
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(section, key)
            .map(|v| {
                v.parse::<f64>().map_err(|_| ConfigError::BadValue {
                    section: section.to_string(),
                    key: key.to_string(),
                    expected: "a number",
                    value: v.to_string(),
                })
            })
            .transpose()
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Result<Option<u64>, ConfigError> {
        self.get(section, key)
            .map(|v| {
                v.parse::<u64>().map_err(|_| ConfigError::BadValue {
                    section: section.to_string(),
                    key: key.to_string(),
                    expected: "a non-negative integer",
                    value: v.to_string(),
                })
            })
            .transpose()
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Result<Option<usize>, ConfigError> {
        Ok(self.get_u64(section, key)?.map(|v| v as usize))
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<Option<bool>, ConfigError> {
        self.get(section, key)
            .map(|v| match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(ConfigError::BadValue {
                    section: section.to_string(),
                    key: key.to_string(),
                    expected: "true or false",
                    value: v.to_string(),
                }),
            })
            .transpose()
    }

    /// Comma-separated list value, items trimmed, empty items dropped.
    pub fn get_list(&self, section: &str, key: &str) -> Vec<String> {
        self.get(section, key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_types() {
        let cfg = ConfigFile::parse(
            "# top\nseed = 7\nname = mixed = value\n\n[rate]\nhour.0 = 1.5\nflag = yes\nlist = a, b ,c,\n",
        )
        .unwrap();
        assert_eq!(cfg.get("", "seed"), Some("7"));
        // first `=` splits, the rest stays in the value
        assert_eq!(cfg.get("", "name"), Some("mixed = value"));
        assert_eq!(cfg.get_f64("rate", "hour.0").unwrap(), Some(1.5));
        assert_eq!(cfg.get_bool("rate", "flag").unwrap(), Some(true));
        assert_eq!(cfg.get_list("rate", "list"), vec!["a", "b", "c"]);
        assert!(cfg.get("rate", "absent").is_none());
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            ConfigFile::parse("just words"),
            Err(ConfigError::Malformed { line: 1, .. })
        ));
        assert!(matches!(
            ConfigFile::parse("[open\n"),
            Err(ConfigError::BadSection { line: 1, .. })
        ));
        assert!(matches!(
            ConfigFile::parse("[s]\na = 1\na = 2\n"),
            Err(ConfigError::DuplicateKey { line: 3, .. })
        ));
    }

    #[test]
    fn typed_getters_report_bad_values() {
        let cfg = ConfigFile::parse("x = abc\n").unwrap();
        assert!(matches!(
            cfg.get_f64("", "x"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            cfg.require("", "missing"),
            Err(ConfigError::MissingKey { .. })
        ));
    }
}
