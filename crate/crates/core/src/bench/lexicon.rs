use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

const SHIPPED: &str = include_str!("../../data/antonyms.json");

/// Attribute term to its opposite terms. Keys are stored lowercased.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AntonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl AntonymLexicon {
    pub fn new(raw: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (term, opposites) in raw {
            let key = term.trim().to_lowercase();
            if key.is_empty() || opposites.is_empty() {
                return Err(Error::Data(format!("lexicon entry `{term}` is empty")));
            }
            let mut opposites: Vec<String> = opposites.iter().map(|o| o.trim().to_lowercase()).collect();
            if opposites.iter().any(|o| *o == key || o.is_empty()) {
                return Err(Error::Data(format!(
                    "lexicon entry `{term}` maps to itself or to an empty term"
                )));
            }
            if entries.contains_key(&key) {
                return Err(Error::Data(format!(
                    "lexicon has `{key}` twice (keys are case-insensitive)"
                )));
            }
            opposites.dedup();
            entries.insert(key, opposites);
        }
        Ok(AntonymLexicon { entries })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(text).map_err(|e| Error::Data(format!("lexicon: {e}")))?;
        Self::new(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The lexicon bundled with the crate.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED).expect("bundled lexicon is valid")
    }

    pub fn opposites(&self, term: &str) -> Result<&[String]> {
        self.entries
            .get(&term.to_lowercase())
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingAntonym(term.to_string()))
    }

    pub fn contains(&self, term: &str) -> bool {
        self.entries.contains_key(&term.to_lowercase())
    }

    /// Every key and opposite.
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .flat_map(|(k, v)| std::iter::once(k.as_str()).chain(v.iter().map(String::as_str)))
    }

    /// True when every entry has exactly one opposite that maps straight back.
    pub fn is_involutive_on(&self, term: &str) -> bool {
        match self.opposites(term) {
            Ok([o]) => matches!(self.opposites(o), Ok([back]) if *back == term.to_lowercase()),
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_is_case_insensitive() {
        let lex = AntonymLexicon::from_json(r#"{"Pointed": ["Rounded"], "rounded": ["pointed"]}"#).unwrap();
        assert_eq!(lex.opposites("POINTED").unwrap(), ["rounded"]);
        assert!(lex.is_involutive_on("pointed"));
        assert_eq!(lex.opposites("square").unwrap_err().kind(), "lexicon");
    }

    #[test]
    fn rejects_self_maps_and_duplicates() {
        assert!(AntonymLexicon::from_json(r#"{"big": ["Big"]}"#).is_err());
        assert!(AntonymLexicon::from_json(r#"{"big": ["small"], "BIG": ["tiny"]}"#).is_err());
        assert!(AntonymLexicon::from_json(r#"{"big": []}"#).is_err());
    }

    #[test]
    fn shipped_lexicon_loads() {
        let lex = AntonymLexicon::shipped();
        assert!(lex.is_involutive_on("blonde"));
        assert!(!lex.is_involutive_on("straight"));
    }
}
