//! Flat `key = value` text used by config files, manifests and checkpoint headers.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", lineno + 1), "expected `key = value`"))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KvMap { entries })
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn set_list<T: Display>(&mut self, key: impl Into<String>, values: &[T]) {
        let joined = values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        self.entries.insert(key.into(), joined);
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.entries
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::config(key, format!("`{v}`: {e}"))))
            .transpose()
    }

    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| Error::config(key, "missing"))
    }

    pub fn get_list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(v) = self.entries.get(key) else {
            return Ok(None);
        };
        if v.trim().is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| Error::config(key, format!("`{p}`: {e}"))))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Entries of `other` override entries of `self`.
    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_typed_access() {
        let kv = KvMap::parse("# run\ntrain.batch_size = 64\nnn.filters = 8, 16 ,32\n\n").unwrap();
        assert_eq!(kv.require::<usize>("train.batch_size").unwrap(), 64);
        assert_eq!(kv.get_list::<usize>("nn.filters").unwrap().unwrap(), vec![8, 16, 32]);
        assert!(kv.get::<usize>("missing").unwrap().is_none());
        let err = kv.require::<f64>("nope").unwrap_err();
        assert!(err.to_string().contains("nope"));
        assert!(KvMap::parse("bad line").is_err());
        assert!(matches!(kv.get::<f64>("nn.filters"), Err(Error::Config { key, .. }) if key == "nn.filters"));
    }

    #[test]
    fn text_round_trip() {
        let mut kv = KvMap::new();
        kv.set("a", 1.5);
        kv.set_list("b", &[1, 2]);
        assert_eq!(KvMap::parse(&kv.to_text()).unwrap(), kv);
    }
}
