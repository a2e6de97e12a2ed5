//! Parsing of the single-call staged pipeline answer.
//!
//! The answer holds four stage sections headed `[S1]`..`[S4]` (or by stage
//! title), then `Final score: <x>` (optional) and `Final: positive|negative`.
//! The label word is mapped strictly: anything other than the two words is
//! an error, never coerced.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::protocol::{SCORE_MAX, SCORE_MIN};
use super::tools::Stage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    /// Stage texts in order S1..S4.
    pub stages: Vec<String>,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub raw: String,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PipelineError {
    #[error("stage {0} section missing")]
    MissingStage(Stage),
    #[error("no final label line")]
    MissingLabel,
    #[error("final label {0:?} is neither positive nor negative")]
    UnmappableLabel(String),
    #[error("final score {0:?} is not a number in [0, 5]")]
    InvalidScore(String),
}

/// Maps a label word to a class: `positive` to 1, `negative` to 0,
/// case-insensitively.
pub fn verbalize(word: &str) -> Result<u8, PipelineError> {
    let w = word.trim().trim_matches(|c: char| matches!(c, '*' | '_' | '`' | '"' | '\'' | '.' | '!')).trim();
    match w.to_ascii_lowercase().as_str() {
        "positive" => Ok(1),
        "negative" => Ok(0),
        _ => Err(PipelineError::UnmappableLabel(word.trim().to_string())),
    }
}

fn heading_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^[\s#>*_\-]*(?:\[\s*s([1-4])\s*\]|\bs([1-4])\b|stage\s*([1-4])\b|(geological environment analysis|remote sensing feature identification|spatial relation analysis|cross-referencing validation))[\s*_]*[:.)\-]?\s*(.*)$",
        )
        .expect("heading pattern")
    })
}

fn final_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^[\s#>*_\-]*final(?:\s+(score|label|answer|decision))?[\s*_]*:[\s*_]*(.*)$").expect("final pattern"))
}

fn stage_of(c: &regex::Captures<'_>) -> Option<usize> {
    for g in 1..=3 {
        if let Some(m) = c.get(g) {
            return m.as_str().parse::<usize>().ok().map(|n| n - 1);
        }
    }
    c.get(4).map(|m| match m.as_str().to_ascii_lowercase().as_str() {
        "geological environment analysis" => 0,
        "remote sensing feature identification" => 1,
        "spatial relation analysis" => 2,
        _ => 3,
    })
}

pub fn parse_pipeline(text: &str) -> Result<PipelineResult, PipelineError> {
    let mut stages: [Option<String>; 4] = Default::default();
    let mut current: Option<usize> = None;
    let mut label = None;
    let mut score_text = None;
    for line in text.lines() {
        if let Some(c) = final_re().captures(line) {
            current = None;
            let value = c[2].trim().to_string();
            match c.get(1).map(|m| m.as_str().to_ascii_lowercase()) {
                Some(kind) if kind == "score" => score_text = Some(value),
                _ => label = Some(value),
            }
            continue;
        }
        if let Some(c) = heading_re().captures(line) {
            if let Some(k) = stage_of(&c) {
                if stages[k].is_none() {
                    stages[k] = Some(c[5].trim().to_string());
                    current = Some(k);
                } else {
                    current = None;
                }
                continue;
            }
        }
        if let Some(k) = current {
            let s = stages[k].as_mut().expect("current stage present");
            if !s.is_empty() {
                s.push('\n');
            }
            s.push_str(line.trim_end());
        }
    }
    let mut out = Vec::with_capacity(4);
    for (k, s) in stages.into_iter().enumerate() {
        match s.map(|s| s.trim().to_string()) {
            Some(s) if !s.is_empty() => out.push(s),
            _ => return Err(PipelineError::MissingStage(Stage::ALL[k])),
        }
    }
    let label = verbalize(&label.ok_or(PipelineError::MissingLabel)?)?;
    let score = match score_text {
        None => None,
        Some(t) => {
            let v: f64 = t
                .trim_matches(|c: char| matches!(c, '*' | '_' | '`'))
                .split(|c: char| c.is_whitespace() || c == '/')
                .next()
                .unwrap_or("")
                .parse()
                .map_err(|_| PipelineError::InvalidScore(t.clone()))?;
            if !(SCORE_MIN..=SCORE_MAX).contains(&v) {
                return Err(PipelineError::InvalidScore(t));
            }
            Some(v)
        }
    };
    Ok(PipelineResult { stages: out, label, score, raw: text.to_string() })
}
