//! Minimal INI-style config: `[section]` headers, `key = value` pairs,
//! `#` comments. Values stay strings until a typed accessor asks for them.

use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    // section -> key -> (value, line number for error reporting)
    sections: HashMap<String, HashMap<String, (String, usize)>>,
}

pub fn parse_config(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::default();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(Error::ConfigParse {
                    line: line_no,
                    msg: "unterminated section header".into(),
                });
            };
            let name = name.trim();
            if name.is_empty() {
                return Err(Error::ConfigParse {
                    line: line_no,
                    msg: "empty section name".into(),
                });
            }
            section = name.to_string();
            map.sections.entry(section.clone()).or_default();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::ConfigParse {
                line: line_no,
                msg: format!("expected key = value, got \"{line}\""),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::ConfigParse {
                line: line_no,
                msg: "empty key".into(),
            });
        }
        if section.is_empty() {
            return Err(Error::ConfigParse {
                line: line_no,
                msg: format!("key \"{key}\" appears before any [section]"),
            });
        }
        map.sections
            .get_mut(&section)
            .unwrap()
            .insert(key.to_string(), (value.trim().to_string(), line_no));
    }
    Ok(map)
}

impl ConfigMap {
    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|(v, _)| v.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key).ok_or_else(|| Error::ConfigMissing {
            section: section.to_string(),
            key: key.to_string(),
        })
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|&(_, l)| l)
            .unwrap_or(0)
    }

    fn parsed<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
        kind: &str,
    ) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| Error::ConfigParse {
                line: self.line_of(section, key),
                msg: format!("{section}.{key}: cannot parse \"{v}\" as {kind}"),
            }),
        }
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.parsed(section, key, "a number")
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Result<Option<usize>> {
        self.parsed(section, key, "a non-negative integer")
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Result<Option<u64>> {
        self.parsed(section, key, "a non-negative integer")
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<Option<bool>> {
        match self.get(section, key) {
            None => Ok(None),
            Some("true") => Ok(Some(true)),
            Some("false") => Ok(Some(false)),
            Some(v) => Err(Error::ConfigParse {
                line: self.line_of(section, key),
                msg: format!("{section}.{key}: expected true or false, got \"{v}\""),
            }),
        }
    }
}
