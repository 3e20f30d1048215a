use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::AntonymLexicon;
use super::records::AttributeRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    fn suffix(self) -> &'static str {
        match self {
            Polarity::Positive => "pos",
            Polarity::Negative => "neg",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn flip(self) -> Answer {
        match self {
            Answer::Yes => Answer::No,
            Answer::No => Answer::Yes,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Yes => "Yes",
            Answer::No => "No",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub image_id: String,
    pub text: String,
    pub polarity: Polarity,
    pub gold: Answer,
    pub source_attribute: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaced_with: Option<String>,
}

impl Question {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.polarity {
            Polarity::Positive => self.gold == Answer::Yes && self.replaced_with.is_none(),
            Polarity::Negative => {
                self.gold == Answer::No
                    && self
                        .replaced_with
                        .as_deref()
                        .is_some_and(|r| !r.eq_ignore_ascii_case(&self.source_attribute))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "question {} has inconsistent polarity fields",
                self.id
            )))
        }
    }

    /// The attribute word currently in the text.
    pub fn current_term(&self) -> &str {
        self.replaced_with.as_deref().unwrap_or(&self.source_attribute)
    }

    /// Id shared by a positive question and its negative.
    pub fn base_id(&self) -> &str {
        let suffix = self.polarity.suffix();
        self.id
            .strip_suffix(suffix)
            .and_then(|s| s.strip_suffix('/'))
            .unwrap_or(&self.id)
    }
}

/// Question patterns per attribute category. `{attr}` is the attribute word
/// and `{a}` the indefinite article that agrees with it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Templates {
    pub patterns: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        let pairs = [
            ("hair", "Does this person have {attr} hair?"),
            ("chin", "Does this person have {a} {attr} chin?"),
            ("nose", "Does this person have {a} {attr} nose?"),
            ("eyebrows", "Does this person have {attr} eyebrows?"),
            ("face", "Does this person have {a} {attr} face?"),
            ("skin", "Does this person have {attr} skin?"),
            ("eyes", "Does this person have {attr} eyes?"),
            ("lips", "Does this person have {attr} lips?"),
            ("mouth", "Does this person have {a} {attr} mouth?"),
            ("ears", "Does this person have {attr} ears?"),
            ("forehead", "Does this person have {a} {attr} forehead?"),
            ("beard", "Does this person have {a} {attr} beard?"),
        ];
        Templates {
            patterns: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

impl Templates {
    pub fn render(&self, category: &str, term: &str) -> Result<String> {
        let pattern = self
            .patterns
            .get(&category.to_lowercase())
            .ok_or_else(|| Error::UncoveredAttribute {
                term: term.to_string(),
                category: category.to_string(),
            })?;
        Ok(pattern.replace("{a}", article(term)).replace("{attr}", term))
    }

    /// Every word a rendered question can contain, apart from attribute terms.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.patterns
            .iter()
            .flat_map(|(k, v)| [k.as_str(), v.as_str()])
            .chain(["a", "an"])
    }
}

/// One positive question per (record, attribute term), in input order.
///
/// Ids are `{image_id}/{record}.{term}/pos` with indices into the inputs.
pub fn gen_positive(records: &[AttributeRecord], templates: &Templates) -> Result<Vec<Question>> {
    let mut out = Vec::new();
    for (r, record) in records.iter().enumerate() {
        record.validate()?;
        for (t, term) in record.attribute_terms.iter().enumerate() {
            out.push(Question {
                id: format!("{}/{r}.{t}/pos", record.image_id),
                image_id: record.image_id.clone(),
                text: templates.render(&term.category, &term.term)?,
                polarity: Polarity::Positive,
                gold: Answer::Yes,
                source_attribute: term.term.to_lowercase(),
                category: term.category.to_lowercase(),
                replaced_with: None,
            });
        }
    }
    Ok(out)
}

/// Byte range of the first whole-word, case-insensitive match of `word`.
fn find_word(text: &str, word: &str) -> Option<(usize, usize)> {
    let lower = text.to_ascii_lowercase();
    let word = word.to_ascii_lowercase();
    let is_word = |c: Option<char>| c.is_some_and(char::is_alphanumeric);
    let mut from = 0;
    while let Some(i) = lower[from..].find(&word).map(|i| i + from) {
        let end = i + word.len();
        if !is_word(lower[..i].chars().next_back()) && !is_word(lower[end..].chars().next()) {
            return Some((i, end));
        }
        from = end;
    }
    None
}

/// Replaces `old` with `new` in `text` and fixes a preceding `a`/`an`.
fn substitute(text: &str, old: &str, new: &str) -> Option<String> {
    let (start, end) = find_word(text, old)?;
    let mut head = text[..start].to_string();
    if let Some(t) = text[..start].strip_suffix(' ') {
        let split = t.rfind(' ').map_or(0, |i| i + 1);
        let art = &t[split..];
        if art.eq_ignore_ascii_case("a") || art.eq_ignore_ascii_case("an") {
            let mut fixed = article(new).to_string();
            if art.starts_with('A') {
                fixed[..1].make_ascii_uppercase();
            }
            head = format!("{}{fixed} ", &t[..split]);
        }
    }
    Some(format!("{head}{new}{}", &text[end..]))
}

/// Swaps each question's attribute for a seeded random opposite from the
/// lexicon, flipping its gold answer.
///
/// A positive becomes a negative. A negative whose replacement maps back to
/// its source attribute becomes the positive again.
pub fn gen_negative(questions: &[Question], lexicon: &AntonymLexicon, seed: u64) -> Result<Vec<Question>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    questions
        .iter()
        .map(|q| {
            let current = q.current_term();
            let opposites = lexicon.opposites(current)?;
            let pick = opposites[rng.random_range(0..opposites.len())].clone();
            let text = substitute(&q.text, current, &pick)
                .ok_or_else(|| Error::Data(format!("question {} does not contain its attribute `{current}`", q.id)))?;
            let restored = pick.eq_ignore_ascii_case(&q.source_attribute);
            let (polarity, gold, replaced_with) = if restored {
                (Polarity::Positive, Answer::Yes, None)
            } else {
                (Polarity::Negative, Answer::No, Some(pick))
            };
            Ok(Question {
                id: format!("{}/{}", q.base_id(), polarity.suffix()),
                image_id: q.image_id.clone(),
                text,
                polarity,
                gold,
                source_attribute: q.source_attribute.clone(),
                category: q.category.clone(),
                replaced_with,
            })
        })
        .collect()
}
