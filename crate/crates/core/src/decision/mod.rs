//! Fusing tool scores into a deposit decision.
//!
//! The decision score is a convex combination `o = sum(w_i * s_i)` of the
//! six tool scores; an area is labeled positive when `o` reaches the
//! threshold (3 by default). Weights come from a fixed strategy or are
//! fitted by cross-validated search over the simplex.

mod cv;
mod optimize;

pub use cv::{fit_weights, stratified_folds, FitConfig, FittedWeights, FoldReport};
pub use optimize::{maximize_on_simplex, project_to_simplex, simplex_grid, OptimizeResult, Optimizer};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AssessmentSet, JUDGING_TOOL_IDS, SCORE_MAX, SCORE_MIN};
use crate::fsutil::write_atomic;

pub const DEFAULT_THRESHOLD: f64 = 3.0;

/// Allowed deviation of a weight sum from 1.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error("expected {expected} scores, found {found}")]
    WrongCount { expected: usize, found: usize },
    #[error("score {0} outside [0, 5]")]
    ScoreOutOfRange(f64),
    #[error("weights are not on the simplex: {0}")]
    OffSimplex(String),
    #[error("the automatic strategy needs fitted weights")]
    MissingFitted,
    #[error("need at least {needed} records, found {found}")]
    InsufficientRecords { needed: usize, found: usize },
    #[error("fold {0} holds a single class; the objective is undefined")]
    SingleClassFold(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot access {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = DecisionError> = std::result::Result<T, E>;

/// Nonnegative weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(DecisionError::OffSimplex("no weights".into()));
        }
        if let Some(x) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(DecisionError::OffSimplex(format!("weight {x} is negative or not finite")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(DecisionError::OffSimplex(format!("weights sum to {sum}")));
        }
        Ok(WeightVector(w))
    }

    /// Scales nonnegative weights to unit sum.
    pub fn normalized(w: Vec<f64>) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) || w.iter().any(|x| *x < 0.0) {
            return Err(DecisionError::OffSimplex(format!("cannot normalize {w:?}")));
        }
        WeightVector::new(w.into_iter().map(|x| x / sum).collect())
    }

    pub fn uniform(n: usize) -> Self {
        WeightVector(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = DecisionError;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        WeightVector::new(w)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub score: f64,
    pub label: u8,
    pub threshold: f64,
}

/// Weighted score of a raw score vector and its thresholded label.
pub fn decide_scores(scores: &[f64], w: &WeightVector, threshold: f64) -> Result<Decision> {
    if scores.len() != w.len() {
        return Err(DecisionError::WrongCount { expected: w.len(), found: scores.len() });
    }
    if let Some(&s) = scores.iter().find(|s| !(SCORE_MIN..=SCORE_MAX).contains(*s)) {
        return Err(DecisionError::ScoreOutOfRange(s));
    }
    let raw: f64 = scores.iter().zip(w.as_slice()).map(|(s, w)| s * w).sum();
    // rounding can push a convex combination a hair outside its inputs
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let score = raw.clamp(lo, hi);
    Ok(Decision { score, label: u8::from(score >= threshold), threshold })
}

/// Decision for the six tool assessments of one area.
pub fn decide(set: &AssessmentSet, w: &WeightVector, threshold: f64) -> Result<Decision> {
    let scores = set
        .score_vector()
        .filter(|_| set.len() == JUDGING_TOOL_IDS.len())
        .ok_or(DecisionError::WrongCount { expected: JUDGING_TOOL_IDS.len(), found: set.len() })?;
    decide_scores(&scores, w, threshold)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Uniform over the geological, relation and validation tools only.
    Local,
    /// Uniform over all six tools.
    Mean,
    /// Fitted weights.
    Automatic,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Local, Strategy::Mean, Strategy::Automatic];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Local => "local",
            Strategy::Mean => "mean",
            Strategy::Automatic => "automatic",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "local" => Ok(Strategy::Local),
            "mean" => Ok(Strategy::Mean),
            "automatic" | "auto" => Ok(Strategy::Automatic),
            other => Err(format!("unknown strategy {other:?} (expected local, mean or automatic)")),
        }
    }
}

pub fn strategy_weights(strategy: Strategy, fitted: Option<&WeightVector>) -> Result<WeightVector> {
    match strategy {
        Strategy::Local => WeightVector::new(vec![1.0 / 3.0, 0.0, 0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0]),
        Strategy::Mean => Ok(WeightVector::uniform(JUDGING_TOOL_IDS.len())),
        Strategy::Automatic => fitted.cloned().ok_or(DecisionError::MissingFitted),
    }
}

impl FittedWeights {
    pub fn load(path: &Path) -> Result<Self> {
        let io = |message: String| DecisionError::Io { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("weights serialize") + "\n";
        write_atomic(path, text.as_bytes()).map_err(|e| DecisionError::Io { path: path.display().to_string(), message: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use proptest::prelude::*;
    use proptest::strategy::Strategy as _;

    fn w(v: &[f64]) -> WeightVector {
        WeightVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn decision_examples() {
        let d = decide_scores(&[5.0; 6], &WeightVector::uniform(6), 3.0).unwrap();
        assert_eq!((d.score, d.label), (5.0, 1));
        let d = decide_scores(&[0.0; 6], &WeightVector::uniform(6), 3.0).unwrap();
        assert_eq!((d.score, d.label), (0.0, 0));
        let d = decide_scores(&[5.0, 0.0, 0.0, 0.0, 0.0, 0.0], &w(&[0.5, 0.1, 0.1, 0.1, 0.1, 0.1]), 3.0).unwrap();
        assert!((d.score - 2.5).abs() < 1e-12);
        assert_eq!(d.label, 0);
    }

    #[test]
    fn decision_errors() {
        assert!(matches!(decide_scores(&[1.0; 5], &WeightVector::uniform(6), 3.0), Err(DecisionError::WrongCount { .. })));
        assert!(matches!(decide_scores(&[6.0; 6], &WeightVector::uniform(6), 3.0), Err(DecisionError::ScoreOutOfRange(_))));
        assert!(WeightVector::new(vec![0.5, 0.5 + 2e-9]).is_err());
        assert!(WeightVector::new(vec![0.5, 0.5 + 1e-10]).is_ok());
        assert!(WeightVector::new(vec![1.5, -0.5]).is_err());
        assert!(matches!(decide(&AssessmentSet::new(), &WeightVector::uniform(6), 3.0), Err(DecisionError::WrongCount { found: 0, .. })));
    }

    #[test]
    fn strategies() {
        assert_eq!(strategy_weights(Strategy::Mean, None).unwrap().as_slice(), &[1.0 / 6.0; 6]);
        assert_eq!(strategy_weights(Strategy::Local, None).unwrap().as_slice(), &[1.0 / 3.0, 0.0, 0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0]);
        let f = w(&[0.1, 0.5, 0.1, 0.1, 0.1, 0.1]);
        assert_eq!(strategy_weights(Strategy::Automatic, Some(&f)).unwrap(), f);
        assert!(matches!(strategy_weights(Strategy::Automatic, None), Err(DecisionError::MissingFitted)));
    }

    #[test]
    fn weights_serialize_as_arrays() {
        let f = w(&[0.25, 0.75]);
        assert_eq!(serde_json::to_string(&f).unwrap(), "[0.25,0.75]");
        assert!(serde_json::from_str::<WeightVector>("[0.3,0.3]").is_err());
    }

    fn simplex6() -> impl proptest::strategy::Strategy<Value = WeightVector> {
        proptest::collection::vec(0.0f64..1.0, 6).prop_filter_map("zero sum", |v| WeightVector::normalized(v).ok())
    }

    proptest! {
        #[test]
        fn score_lies_between_extremes(s in proptest::collection::vec(0.0f64..=5.0, 6), w in simplex6()) {
            let d = decide_scores(&s, &w, 3.0).unwrap();
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= d.score && d.score <= hi);
            prop_assert_eq!(d.label == 1, d.score >= 3.0);
        }

        #[test]
        fn raising_a_score_never_flips_positive(s in proptest::collection::vec(0.0f64..=5.0, 6), w in simplex6(), i in 0usize..6, bump in 0.0f64..5.0) {
            let before = decide_scores(&s, &w, 3.0).unwrap();
            let mut t = s.clone();
            t[i] = (t[i] + bump).min(5.0);
            let after = decide_scores(&t, &w, 3.0).unwrap();
            prop_assert!(!(before.label == 1 && after.label == 0));
        }
    }
}
