//! `key = value` text files with `[section]` headers.
//!
//! Used for feature-spec sidecars, model manifests, generator specs and
//! resolved experiment configs. Blank lines and lines starting with `#` are
//! ignored. Keys before the first header belong to the unnamed section `""`.
//! Serialization is sorted, so a parsed document always prints the same way.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvDocument {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl KvDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut doc = KvDocument::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| Error::Parse {
                file: origin.to_string(),
                row: lineno + 1,
                column: String::new(),
                message: message.to_string(),
            };
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err("unterminated section header"))?;
                section = name.trim().to_string();
                doc.sections.entry(section.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(err("empty key"));
            }
            let entries = doc.sections.entry(section.clone()).or_default();
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(err(&format!("duplicate key `{key}`")));
            }
        }
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl fmt::Display) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    pub fn section(&self, section: &str) -> Option<&BTreeMap<String, String>> {
        self.sections.get(section)
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }

    /// Copies every entry of `other` over this document.
    pub fn merge(&mut self, other: &KvDocument) {
        for (name, entries) in &other.sections {
            let dst = self.sections.entry(name.clone()).or_default();
            for (k, v) in entries {
                dst.insert(k.clone(), v.clone());
            }
        }
    }

    /// Typed lookup; absent keys yield `None`, unparsable ones an error.
    pub fn parse_value<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::config(format!("[{section}] {key} = {raw}: cannot parse value"))
            }),
        }
    }

    pub fn value_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        Ok(self.parse_value(section, key)?.unwrap_or(default))
    }
}

impl fmt::Display for KvDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, entries) in &self.sections {
            if entries.is_empty() {
                continue;
            }
            if !first {
                writeln!(f)?;
            }
            first = false;
            if !name.is_empty() {
                writeln!(f, "[{name}]")?;
            }
            for (k, v) in entries {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let doc = KvDocument::parse(
            "top = 1\n# comment\n[model]\nmode = intermediate\n\n[train]\nlr = 1e-5\n",
            "t",
        )
        .unwrap();
        assert_eq!(doc.get("", "top"), Some("1"));
        assert_eq!(doc.get("model", "mode"), Some("intermediate"));
        assert_eq!(doc.parse_value::<f64>("train", "lr").unwrap(), Some(1e-5));
        assert!(doc.parse_value::<usize>("model", "mode").is_err());
    }

    #[test]
    fn reports_line_of_malformed_entry() {
        let err = KvDocument::parse("[a]\nx = 1\nnonsense\n", "cfg").unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
        assert!(KvDocument::parse("[a]\nx = 1\nx = 2\n", "cfg").is_err());
    }

    #[test]
    fn display_round_trips() {
        let mut doc = KvDocument::new();
        doc.set("b", "z", 3);
        doc.set("a", "y", "hello world");
        doc.set("", "root", 0.5);
        let again = KvDocument::parse(&doc.to_string(), "t").unwrap();
        assert_eq!(doc, again);
    }
}
