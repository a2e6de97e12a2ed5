//! The semi-structured assessment format exchanged between tools.
//!
//! A response carries three labeled fields, each starting on its own line:
//!
//! ```text
//! Score: 4
//! Favorable Areas: northeast quadrant; a narrow band along the southern edge
//! Explanation: strong FeOH anomaly coinciding with the intrusive contact
//! ```
//!
//! Labels are case-insensitive and may be wrapped in markdown emphasis,
//! headings or bullets. Prose before, between or after the fields is
//! ignored. A field value runs until the next labeled line. Areas are
//! separated by semicolons or line breaks; `none` means no areas.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower and upper bound of the score scale.
pub const SCORE_MIN: f64 = 0.0;
pub const SCORE_MAX: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub tool_id: String,
    pub score: f64,
    pub areas: Vec<String>,
    pub explanation: String,
    /// Sequence number of the response event this was parsed from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_ref: Option<u64>,
}

impl Assessment {
    /// Multi-line text in the protocol format, used to hand an assessment to
    /// a downstream tool.
    pub fn to_protocol_text(&self) -> String {
        let areas = if self.areas.is_empty() { "none".to_string() } else { self.areas.join("; ") };
        format!("Score: {}\nFavorable Areas: {}\nExplanation: {}", fmt_score(self.score), areas, self.explanation)
    }
}

/// Scores print without trailing zeros: `4`, `3.25`.
pub fn fmt_score(s: f64) -> String {
    let t = format!("{s:.4}");
    let t = t.trim_end_matches('0').trim_end_matches('.');
    if t.is_empty() || t == "-0" {
        "0".into()
    } else {
        t.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ParseError {
    #[error("no score field found")]
    MissingScore,
    #[error("no explanation field found")]
    MissingExplanation,
    #[error("score field {0:?} holds no number")]
    InvalidScore(String),
    #[error("score {0} outside [0, 5]")]
    OutOfRange(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Field {
    Score,
    Areas,
    Explanation,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Score => "score",
            Field::Areas => "areas",
            Field::Explanation => "explanation",
        })
    }
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^[\s#>*_\-+•]*(?:\d+[.)][\s#>*_\-+•]*)?(score|(?:most\s+)?favou?rable\s+areas?|areas|explanation|rationale|reasoning)[\s*_]*[:=][\s*_]*(.*)$",
        )
        .expect("label pattern")
    })
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)").expect("number pattern"))
}

fn classify(label: &str) -> Field {
    let l = label.to_ascii_lowercase();
    if l == "score" {
        Field::Score
    } else if l.contains("area") {
        Field::Areas
    } else {
        Field::Explanation
    }
}

/// Strips markdown decoration that a model may leave around a value.
fn clean(s: &str) -> &str {
    s.trim().trim_matches(|c: char| c == '*' || c == '_' || c == '`').trim()
}

/// Collects the first occurrence of each field with its continuation lines.
fn fields(text: &str) -> BTreeMap<Field, String> {
    let mut out: BTreeMap<Field, String> = BTreeMap::new();
    let mut current: Option<Field> = None;
    for line in text.lines() {
        if let Some(c) = label_re().captures(line) {
            let field = classify(&c[1]);
            current = match out.entry(field) {
                // a repeated label ends the previous field but is not collected
                Entry::Occupied(_) => None,
                Entry::Vacant(slot) => {
                    slot.insert(c[2].to_string());
                    Some(field)
                }
            };
            continue;
        }
        if let Some(f) = current {
            // the score is a single line; prose after it is not part of it
            if f == Field::Score {
                current = None;
                continue;
            }
            let v = out.get_mut(&f).expect("current field present");
            v.push('\n');
            v.push_str(line);
        }
    }
    out
}

fn parse_score(raw: &str) -> Result<f64, ParseError> {
    let value = clean(raw);
    let m = number_re().find(value).ok_or_else(|| ParseError::InvalidScore(value.to_string()))?;
    let s: f64 = m.as_str().parse().map_err(|_| ParseError::InvalidScore(value.to_string()))?;
    if !s.is_finite() || !(SCORE_MIN..=SCORE_MAX).contains(&s) {
        return Err(ParseError::OutOfRange(s));
    }
    Ok(s)
}

fn parse_areas(raw: &str) -> Vec<String> {
    raw.split(['\n', ';'])
        .map(|a| clean(a.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '-' | '*' | '•' | '+'))))
        .map(|a| a.trim_end_matches(['.', ',']).trim())
        .filter(|a| !a.is_empty())
        .filter(|a| !matches!(a.to_ascii_lowercase().as_str(), "none" | "n/a" | "na" | "nil" | "no favorable areas"))
        .map(str::to_string)
        .collect()
}

/// Extracts an assessment from free model text. The returned assessment has
/// an empty `tool_id`; callers fill it in.
pub fn parse_assessment(text: &str) -> Result<Assessment, ParseError> {
    let f = fields(text);
    let score = parse_score(f.get(&Field::Score).ok_or(ParseError::MissingScore)?)?;
    let explanation = f
        .get(&Field::Explanation)
        .map(|e| e.lines().map(clean).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("\n"))
        .filter(|e| !e.is_empty())
        .ok_or(ParseError::MissingExplanation)?;
    let areas = f.get(&Field::Areas).map(|a| parse_areas(a)).unwrap_or_default();
    Ok(Assessment { tool_id: String::new(), score, areas, explanation, raw_ref: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_extraction() {
        let a = parse_assessment("Score: 4\nFavorable Areas: northeast quadrant\nExplanation: strong FeOH anomaly").unwrap();
        assert_eq!(a.score, 4.0);
        assert_eq!(a.areas, vec!["northeast quadrant"]);
        assert_eq!(a.explanation, "strong FeOH anomaly");
    }

    #[test]
    fn missing_fields() {
        assert_eq!(parse_assessment("Explanation: nothing to see"), Err(ParseError::MissingScore));
        assert_eq!(parse_assessment("Score: 2\nAreas: west"), Err(ParseError::MissingExplanation));
        assert_eq!(parse_assessment("Score: 2\nExplanation:   "), Err(ParseError::MissingExplanation));
        assert_eq!(parse_assessment(""), Err(ParseError::MissingScore));
    }

    #[test]
    fn score_bounds() {
        assert_eq!(parse_assessment("Score: 7\nExplanation: x"), Err(ParseError::OutOfRange(7.0)));
        assert_eq!(parse_assessment("Score: -1\nExplanation: x"), Err(ParseError::OutOfRange(-1.0)));
        assert!(matches!(parse_assessment("Score: high\nExplanation: x"), Err(ParseError::InvalidScore(_))));
        assert_eq!(parse_assessment("Score: 5\nExplanation: x").unwrap().score, 5.0);
        assert_eq!(parse_assessment("Score: 0\nExplanation: x").unwrap().score, 0.0);
        assert_eq!(parse_assessment("Score: 3.5/5\nExplanation: x").unwrap().score, 3.5);
    }

    #[test]
    fn tolerates_markdown_and_prose() {
        let text = "Here is my analysis of the images.\n\n## Assessment\n**Score:** 3\n- **Favorable Areas:**\n  - central intrusion\n  - eastern margin\n**Explanation:** the alteration\nforms a partial ring.\n\nLet me know if you need more.";
        let a = parse_assessment(text).unwrap();
        assert_eq!(a.score, 3.0);
        assert_eq!(a.areas, vec!["central intrusion", "eastern margin"]);
        assert!(a.explanation.starts_with("the alteration\nforms a partial ring."), "{:?}", a.explanation);
    }

    #[test]
    fn numbered_labels_with_decoration() {
        let a = parse_assessment("1. ### Score: 2.5\n2. - Favorable Areas: rim\n3. **Explanation**: ring").unwrap();
        assert_eq!((a.score, a.areas, a.explanation), (2.5, vec!["rim".to_string()], "ring".to_string()));
    }

    #[test]
    fn areas_none_and_reordering() {
        let a = parse_assessment("explanation: weak signal\nAREAS: none\nSCORE = 1").unwrap();
        assert_eq!(a.score, 1.0);
        assert!(a.areas.is_empty());
        assert_eq!(a.explanation, "weak signal");
    }

    #[test]
    fn round_trips_through_protocol_text() {
        let a = Assessment {
            tool_id: "c2".into(),
            score: 3.25,
            areas: vec!["north".into(), "south rim".into()],
            explanation: "zoned".into(),
            raw_ref: None,
        };
        let b = parse_assessment(&a.to_protocol_text()).unwrap();
        assert_eq!((b.score, b.areas, b.explanation), (a.score, a.areas, a.explanation));
    }

    proptest! {
        #[test]
        fn never_panics(s in "\\PC{0,200}") {
            let _ = parse_assessment(&s);
        }

        #[test]
        fn parsed_scores_are_in_range(s in "(Score: [-0-9.]{1,5}\n)?(Explanation: [a-z ]{0,10})?") {
            if let Ok(a) = parse_assessment(&s) {
                prop_assert!((SCORE_MIN..=SCORE_MAX).contains(&a.score));
                prop_assert!(!a.explanation.is_empty());
            }
        }

        #[test]
        fn well_formed_round_trip(score in 0.0f64..=5.0, expl in "[a-zA-Z][a-zA-Z ,]{0,40}") {
            let s = (score * 100.0).round() / 100.0;
            let text = format!("Score: {}\nFavorable Areas: north\nExplanation: {}", fmt_score(s), expl);
            let a = parse_assessment(&text).unwrap();
            prop_assert!((a.score - s).abs() < 1e-12);
            prop_assert_eq!(a.explanation, expl.trim().to_string());
        }
    }
}
