use serde::{Deserialize, Serialize};

use super::lexicon::AntonymLexicon;
use crate::error::{Error, Result};

/// One attribute word in a caption. `start..end` are byte offsets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeTerm {
    pub term: String,
    /// Noun the attribute describes (`chin`, `hair`, ...).
    pub category: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub image_id: String,
    pub caption: String,
    pub attribute_terms: Vec<AttributeTerm>,
}

impl AttributeRecord {
    pub fn new(
        image_id: impl Into<String>,
        caption: impl Into<String>,
        attribute_terms: Vec<AttributeTerm>,
    ) -> Result<Self> {
        let record = AttributeRecord {
            image_id: image_id.into(),
            caption: caption.into(),
            attribute_terms,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attribute_terms.is_empty() {
            return Err(Error::Data(format!(
                "record for {} has no attribute terms",
                self.image_id
            )));
        }
        for t in &self.attribute_terms {
            let span = self.caption.get(t.start..t.end);
            if !span.is_some_and(|s| s.eq_ignore_ascii_case(&t.term)) {
                return Err(Error::Data(format!(
                    "record for {}: span {}..{} does not hold `{}`",
                    self.image_id, t.start, t.end, t.term
                )));
            }
        }
        Ok(())
    }
}

/// Words of `text` with their byte spans.
fn words(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.len()));
    }
    out
}

/// Ingestion adapter for free-text captions: every lexicon term directly
/// followed by a noun becomes an attribute of that noun.
///
/// "She has blonde hair and a pointed chin." yields `blonde`/hair and
/// `pointed`/chin.
pub fn extract_terms(caption: &str, lexicon: &AntonymLexicon) -> Vec<AttributeTerm> {
    let ws = words(caption);
    ws.windows(2)
        .filter_map(|w| {
            let (s, e) = w[0];
            let term = caption[s..e].to_lowercase();
            if !lexicon.contains(&term) {
                return None;
            }
            let category = caption[w[1].0..w[1].1].to_lowercase();
            Some(AttributeTerm {
                term,
                category,
                start: s,
                end: e,
            })
        })
        .collect()
}

/// Caption-only input line, as read by the ingestion adapter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionLine {
    pub image_id: String,
    pub caption: String,
}

pub fn records_from_captions(lines: &[CaptionLine], lexicon: &AntonymLexicon) -> Result<Vec<AttributeRecord>> {
    lines
        .iter()
        .map(|l| {
            AttributeRecord::new(
                l.image_id.clone(),
                l.caption.clone(),
                extract_terms(&l.caption, lexicon),
            )
        })
        .collect()
}
