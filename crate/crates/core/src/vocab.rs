//! Word-level vocabulary for the Yes/No head.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercased alphanumeric runs; everything else separates words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// Sorted, deduplicated words of every text.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = texts.into_iter().flat_map(tokenize).collect();
        words.sort();
        words.dedup();
        Vocab::from(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let ids = tokenize(text)
            .into_iter()
            .map(|w| self.id(&w).ok_or(Error::UnknownToken(w)))
            .collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(Error::Data(format!("text `{text}` has no words")));
        }
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_strips_punctuation() {
        assert_eq!(
            tokenize("Does this person have a Pointed chin?"),
            ["does", "this", "person", "have", "a", "pointed", "chin"]
        );
    }

    #[test]
    fn encode_and_unknown_words() {
        let v = Vocab::build(["a b", "b c"]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.encode("C, a!").unwrap(), vec![2, 0]);
        assert_eq!(v.encode("a z").unwrap_err().kind(), "token");
        assert_eq!(v.encode("?!").unwrap_err().kind(), "data");
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocab::build(["yes no maybe"]);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["maybe","no","yes"]"#);
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }
}
