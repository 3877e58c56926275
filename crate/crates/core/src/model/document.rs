use std::collections::BTreeMap;

use super::value::Value;
use crate::{Error, Result};

/// An ordered list of key/value pairs. Values may nest further documents.
///
/// Key order is kept as ingested but does not take part in equality.
#[derive(Debug, Clone, Default)]
pub struct Document {
    pairs: Vec<(String, Value)>,
}

impl Document {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a document, rejecting duplicate keys at this level.
    pub fn from_pairs(pairs: Vec<(String, Value)>) -> Result<Self> {
        let mut doc = Document::new();
        for (k, v) in pairs {
            if doc.get(&k).is_some() {
                return Err(Error::Schema(format!("duplicate document key '{k}'")));
            }
            doc.pairs.push((k, v));
        }
        Ok(doc)
    }

    pub fn pairs(&self) -> &[(String, Value)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(k, _)| k.as_str())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Sets `key`, replacing the value in place if it already exists.
    pub fn insert(&mut self, key: impl Into<String>, value: Value) {
        let key = key.into();
        match self.pairs.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.pairs.push((key, value)),
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<Value> {
        let idx = self.pairs.iter().position(|(k, _)| k == key)?;
        Some(self.pairs.remove(idx).1)
    }

    /// Resolves a dotted path such as `geometry.type`.
    ///
    /// Returns `Ok(None)` when any key along the path is missing or an
    /// intermediate value is not a document.
    pub fn dot_get(&self, path: &str) -> Result<Option<&Value>> {
        let segments = split_path(path)?;
        Ok(self.get_segments(&segments))
    }

    pub(crate) fn get_segments(&self, segments: &[&str]) -> Option<&Value> {
        let (first, rest) = segments.split_first()?;
        let v = self.get(first)?;
        if rest.is_empty() {
            return Some(v);
        }
        match v {
            Value::Doc(inner) => inner.get_segments(rest),
            _ => None,
        }
    }

    /// Writes `value` at a dotted path, creating intermediate documents.
    pub fn dot_set(&mut self, path: &str, value: Value) -> Result<()> {
        let segments = split_path(path)?;
        self.set_segments(&segments, value)
    }

    fn set_segments(&mut self, segments: &[&str], value: Value) -> Result<()> {
        let (first, rest) = segments.split_first().expect("non-empty path");
        if rest.is_empty() {
            self.insert(*first, value);
            return Ok(());
        }
        if self.get(first).is_none() {
            self.insert(*first, Value::Doc(Document::new()));
        }
        let slot = self
            .pairs
            .iter_mut()
            .find(|(k, _)| k == first)
            .map(|(_, v)| v)
            .expect("inserted above");
        match slot {
            Value::Doc(inner) => inner.set_segments(rest, value),
            other => Err(Error::Path(format!(
                "cannot descend into '{first}': holds a {}",
                other.type_name()
            ))),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (k, v) in &self.pairs {
            map.insert(k.clone(), v.to_json());
        }
        serde_json::Value::Object(map)
    }

    pub fn from_json_map(map: &serde_json::Map<String, serde_json::Value>) -> Document {
        Document {
            pairs: map.iter().map(|(k, v)| (k.clone(), Value::from_json(v))).collect(),
        }
    }

    pub fn parse_json(text: &str) -> Result<Document> {
        match serde_json::from_str::<serde_json::Value>(text)? {
            serde_json::Value::Object(map) => Ok(Document::from_json_map(&map)),
            other => Err(Error::Schema(format!("expected a JSON object, got {other}"))),
        }
    }

    /// JSON text with keys sorted at every level; equal documents produce
    /// equal text.
    pub fn canonical_json(&self) -> String {
        fn canon(v: &Value) -> serde_json::Value {
            match v {
                Value::Doc(d) => {
                    let sorted: BTreeMap<&str, serde_json::Value> =
                        d.pairs.iter().map(|(k, v)| (k.as_str(), canon(v))).collect();
                    serde_json::to_value(sorted).expect("string keys")
                }
                Value::List(items) => serde_json::Value::Array(items.iter().map(canon).collect()),
                other => other.to_json(),
            }
        }
        canon(&Value::Doc(self.clone())).to_string()
    }
}

impl PartialEq for Document {
    fn eq(&self, other: &Self) -> bool {
        self.pairs.len() == other.pairs.len()
            && self.pairs.iter().all(|(k, v)| other.get(k) == Some(v))
    }
}

impl Eq for Document {}

/// Splits a dotted path, rejecting empty paths and empty segments.
pub fn split_path(path: &str) -> Result<Vec<&str>> {
    if path.is_empty() {
        return Err(Error::Path("empty path".into()));
    }
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Path(format!("empty segment in path '{path}'")));
    }
    Ok(segments)
}

/// A named set of documents with no fixed schema.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Collection {
    pub name: String,
    pub docs: Vec<Document>,
}

impl Collection {
    pub fn new(name: impl Into<String>, docs: Vec<Document>) -> Self {
        Collection { name: name.into(), docs }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}
