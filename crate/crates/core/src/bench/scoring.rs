use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

use super::questions::{Answer, Polarity, Question};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parsed {
    Yes,
    No,
    Unparseable,
}

impl Parsed {
    fn is(self, gold: Answer) -> bool {
        matches!((self, gold), (Parsed::Yes, Answer::Yes) | (Parsed::No, Answer::No))
    }
}

/// Reads a Yes/No answer off the first word of a free-text response.
pub fn parse_answer(response: &str) -> Parsed {
    let word = response
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("");
    if word.eq_ignore_ascii_case("yes") {
        Parsed::Yes
    } else if word.eq_ignore_ascii_case("no") {
        Parsed::No
    } else {
        Parsed::Unparseable
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub id: String,
    pub response_text: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub total: usize,
    pub yes: usize,
    pub no: usize,
    pub unparseable: usize,
    pub correct: usize,
}

impl Tally {
    fn add(&mut self, parsed: Parsed, correct: bool) {
        self.total += 1;
        match parsed {
            Parsed::Yes => self.yes += 1,
            Parsed::No => self.no += 1,
            Parsed::Unparseable => self.unparseable += 1,
        }
        self.correct += usize::from(correct);
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub id: String,
    pub polarity: Polarity,
    pub gold: Answer,
    pub parsed: Parsed,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub positive_accuracy: f64,
    pub negative_accuracy: f64,
    pub hooa: f64,
    pub positive: Tally,
    pub negative: Tally,
    /// Sorted by question id.
    pub outcomes: Vec<Outcome>,
}

/// Mean of positive and negative accuracy.
pub fn hooa(positive_accuracy: f64, negative_accuracy: f64) -> f64 {
    (positive_accuracy + negative_accuracy) / 2.0
}

/// Rounds half away from zero at `decimals` places, working on the shortest
/// decimal representation of `x` so that `0.7745` gives `0.775`.
pub fn format_metric(x: f64, decimals: u32) -> String {
    let d = Decimal::from_str(&x.to_string()).or_else(|_| Decimal::from_scientific(&format!("{x:e}")));
    match d {
        Ok(d) => {
            let r = d.round_dp_with_strategy(decimals, RoundingStrategy::MidpointAwayFromZero);
            format!("{r:.prec$}", prec = decimals as usize)
        }
        Err(_) => format!("{x:.prec$}", prec = decimals as usize),
    }
}

/// Joins responses to questions by id and computes the metric.
pub fn score(questions: &[Question], responses: &[Response]) -> Result<EvalReport> {
    let mut by_id: HashMap<&str, &Response> = HashMap::with_capacity(responses.len());
    let mut extra = Vec::new();
    for r in responses {
        if by_id.insert(r.id.as_str(), r).is_some() {
            extra.push(r.id.clone());
        }
    }
    let mut seen: BTreeMap<&str, &Question> = BTreeMap::new();
    for q in questions {
        if seen.insert(q.id.as_str(), q).is_some() {
            return Err(Error::Data(format!("question id {} appears twice", q.id)));
        }
    }
    let missing: Vec<String> = seen
        .keys()
        .filter(|id| !by_id.contains_key(*id))
        .map(|s| s.to_string())
        .collect();
    extra.extend(by_id.keys().filter(|id| !seen.contains_key(*id)).map(|s| s.to_string()));
    if !missing.is_empty() || !extra.is_empty() {
        extra.sort();
        return Err(Error::Join { missing, extra });
    }

    let mut positive = Tally::default();
    let mut negative = Tally::default();
    let mut outcomes = Vec::with_capacity(seen.len());
    for (id, q) in seen {
        let parsed = parse_answer(&by_id[id].response_text);
        let correct = parsed.is(q.gold);
        match q.polarity {
            Polarity::Positive => positive.add(parsed, correct),
            Polarity::Negative => negative.add(parsed, correct),
        }
        outcomes.push(Outcome {
            id: id.to_string(),
            polarity: q.polarity,
            gold: q.gold,
            parsed,
            correct,
        });
    }
    if positive.total == 0 || negative.total == 0 {
        return Err(Error::Data(format!(
            "scoring needs both polarities, got {} positive and {} negative questions",
            positive.total, negative.total
        )));
    }
    let positive_accuracy = positive.accuracy();
    let negative_accuracy = negative.accuracy();
    Ok(EvalReport {
        positive_accuracy,
        negative_accuracy,
        hooa: hooa(positive_accuracy, negative_accuracy),
        positive,
        negative,
        outcomes,
    })
}
