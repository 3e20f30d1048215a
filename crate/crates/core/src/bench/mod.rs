//! Attribute-hallucination benchmark: question generation from attribute
//! captions, negative questions by antonym substitution, a grouped 9:1 split
//! and Yes/No scoring.
//!
//! Questions and responses are stored as JSON lines. A questions line holds
//! `id`, `image_id`, `text`, `polarity`, `gold` plus the attribute fields; a
//! responses line holds `id` and `response_text`. The lexicon is a JSON
//! object from term to a list of opposite terms.

pub mod lexicon;
pub mod questions;
pub mod records;
pub mod scoring;
pub mod split;

pub use lexicon::AntonymLexicon;
pub use questions::{gen_negative, gen_positive, Answer, Polarity, Question, Templates};
pub use records::{extract_terms, records_from_captions, AttributeRecord, AttributeTerm, CaptionLine};
pub use scoring::{format_metric, hooa, parse_answer, score, EvalReport, Outcome, Parsed, Response, Tally};
pub use split::{split_instructions, TRAIN_RATIO};

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::format(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Positives followed by their negatives.
pub fn build_benchmark(
    records: &[AttributeRecord],
    templates: &Templates,
    lexicon: &AntonymLexicon,
    seed: u64,
) -> Result<Vec<Question>> {
    let mut questions = gen_positive(records, templates)?;
    let negatives = gen_negative(&questions, lexicon, seed)?;
    questions.extend(negatives);
    Ok(questions)
}
