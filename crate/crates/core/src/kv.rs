//! Flat `key = value` text format shared by scenario and experiment configs.
//!
//! ```text
//! # comment
//! n_sensors = 3
//! distances = 2.0, 4.5, 9.25
//! ```
//!
//! One assignment per line. Keys are `[a-z0-9_]+`. Values run to the end of
//! the line (a `#` starts a trailing comment). Arrays are comma-separated.
//! Repeated keys are an error; unknown keys are rejected by the consumer.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line_no, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
            {
                return Err(Error::config(line_no, format!("bad key `{key}`")));
            }
            if doc.entries.contains_key(key) {
                return Err(Error::config(line_no, format!("duplicate key `{key}`")));
            }
            doc.entries.insert(key.to_string(), (line_no, value.trim().to_string()));
        }
        Ok(doc)
    }

    /// Sets or replaces a key, as a command-line override would.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), (0, value.trim().to_string()));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fails on the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (key, (line, _)) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::config(*line, format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(l, _)| *l)
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(self.line(key), format!("malformed value for `{key}`: `{v}`"))),
        }
    }

    pub fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|item| {
                    let item = item.trim();
                    item.parse()
                        .map_err(|_| Error::config(self.line(key), format!("malformed element `{item}` in `{key}`")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }
}

/// Formats a float list the way the parser reads it back (shortest round-trip form).
pub fn format_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_lists_and_scalars() {
        let doc = KvDoc::parse("# header\n a = 1 \nb = 1.5, 2,3 # trailing\n\n").unwrap();
        assert_eq!(doc.parse_value::<u32>("a").unwrap(), Some(1));
        assert_eq!(doc.parse_list::<f64>("b").unwrap(), Some(vec![1.5, 2.0, 3.0]));
        assert_eq!(doc.parse_value::<u32>("missing").unwrap(), None);
    }

    #[test]
    fn rejects_duplicates_bad_lines_and_unknown_keys() {
        assert!(matches!(
            KvDoc::parse("a = 1\na = 2"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(KvDoc::parse("just words").is_err());
        assert!(KvDoc::parse("Bad-Key = 1").is_err());
        let doc = KvDoc::parse("a = 1\nzzz = 2").unwrap();
        assert!(matches!(doc.reject_unknown(&["a"]), Err(Error::Config { line: 2, .. })));
        assert!(doc.parse_list::<f64>("zzz").is_ok());
        assert!(KvDoc::parse("a = 1, x").unwrap().parse_list::<f64>("a").is_err());
    }

    #[test]
    fn list_format_round_trips() {
        let xs = [0.1, 2.0, 1.0 / 3.0, 1e-300];
        let doc = KvDoc::parse(&format!("x = {}", format_list(&xs))).unwrap();
        assert_eq!(doc.parse_list::<f64>("x").unwrap().unwrap(), xs);
    }
}
