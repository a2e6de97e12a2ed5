//! Classification metrics, agreement statistics and report formatting.
//!
//! All reported metrics are percentages. Conventions for degenerate
//! inputs: an F1 score with no true positives of that class is 0; MCC with
//! any zero factor in its denominator is 0; ROC-AUC is undefined (`None`)
//! when only one class is present.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("correlation undefined: {0} has zero variance")]
    UndefinedCorrelation(&'static str),
    #[error("class counts must both be positive")]
    ZeroCounts,
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

impl Confusion {
    pub fn from_labels(y_true: &[u8], y_pred: &[u8]) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(EvalError::LengthMismatch { left: y_true.len(), right: y_pred.len() });
        }
        let mut c = Confusion::default();
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t, p) {
                (1, 1) => c.tp += 1,
                (0, 1) => c.fp += 1,
                (1, 0) => c.fn_ += 1,
                (0, 0) => c.tn += 1,
                (1 | 0, bad) | (bad, _) => return Err(EvalError::InvalidLabel(bad)),
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// F1 of the positive class, as a fraction.
    pub fn pos_f1(&self) -> f64 {
        f1(self.tp, self.fp, self.fn_)
    }

    /// F1 of the negative class, as a fraction.
    pub fn neg_f1(&self) -> f64 {
        f1(self.tn, self.fn_, self.fp)
    }

    pub fn avg_f1(&self) -> f64 {
        0.5 * (self.pos_f1() + self.neg_f1())
    }

    /// Matthews correlation in `[-1, 1]`.
    pub fn mcc(&self) -> f64 {
        let (tp, fp, fn_, tn) = (self.tp as f64, self.fp as f64, self.fn_ as f64, self.tn as f64);
        let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if den == 0.0 {
            0.0
        } else {
            (tp * tn - fp * fn_) / den.sqrt()
        }
    }
}

/// ROC-AUC as a fraction, with tied scores given their average rank.
/// `None` when either class is absent.
pub fn roc_auc(y_true: &[u8], scores: &[f64]) -> Result<Option<f64>> {
    if y_true.len() != scores.len() {
        return Err(EvalError::LengthMismatch { left: y_true.len(), right: scores.len() });
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(s));
    }
    let n_pos = y_true.iter().filter(|&&y| y == 1).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares the mean rank
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if y_true[k] == 1 {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos * n_neg) as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub pearson: f64,
    pub weighted_kappa: f64,
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.len() < 2 {
        return Err(EvalError::Empty);
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 {
        return Err(EvalError::UndefinedCorrelation("first vector"));
    }
    if sbb == 0.0 {
        return Err(EvalError::UndefinedCorrelation("second vector"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Ordinal bin of a score: nearest integer in 0..=5.
pub fn score_bin(s: f64) -> usize {
    s.round().clamp(0.0, 5.0) as usize
}

/// Cohen's kappa with quadratic disagreement weights over `k` ordinal
/// categories.
pub fn quadratic_kappa(a: &[usize], b: &[usize], k: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = a.len() as f64;
    let mut observed = vec![vec![0.0; k]; k];
    let (mut ra, mut rb) = (vec![0.0; k], vec![0.0; k]);
    for (&x, &y) in a.iter().zip(b) {
        observed[x][y] += 1.0 / n;
        ra[x] += 1.0 / n;
        rb[y] += 1.0 / n;
    }
    let denom_k = ((k - 1) * (k - 1)) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64).powi(2)) / denom_k;
            num += w * observed[i][j];
            den += w * ra[i] * rb[j];
        }
    }
    if den == 0.0 {
        return Err(EvalError::UndefinedCorrelation("both raters (single category)"));
    }
    Ok(1.0 - num / den)
}

/// Pearson correlation on the raw scores and quadratic-weighted kappa on
/// their 0..=5 bins.
pub fn agreement(a: &[f64], b: &[f64]) -> Result<Agreement> {
    let pearson = pearson(a, b)?;
    let ba: Vec<usize> = a.iter().map(|&s| score_bin(s)).collect();
    let bb: Vec<usize> = b.iter().map(|&s| score_bin(s)).collect();
    Ok(Agreement { pearson, weighted_kappa: quadratic_kappa(&ba, &bb, 6)? })
}

/// Percentage of `(score, label)` records whose label disagrees with
/// `score >= threshold`.
pub fn mismatch_rate(decisions: &[(f64, u8)], threshold: f64) -> Result<f64> {
    if decisions.is_empty() {
        return Err(EvalError::Empty);
    }
    let bad = decisions.iter().filter(|(o, y)| u8::from(*o >= threshold) != *y).count();
    Ok(100.0 * bad as f64 / decisions.len() as f64)
}

/// Counts of scores per ordinal bin 0..=5.
pub fn score_histogram(scores: &[f64]) -> [usize; 6] {
    let mut h = [0; 6];
    for &s in scores.iter().filter(|s| s.is_finite()) {
        h[score_bin(s)] += 1;
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub confusion: Confusion,
    pub pos_f1: f64,
    pub avg_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roc_auc: Option<f64>,
    pub mcc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<Agreement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatch_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<[usize; 6]>,
}

pub fn compute_metrics(y_true: &[u8], y_pred: &[u8], scores: Option<&[f64]>) -> Result<EvalReport> {
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    let c = Confusion::from_labels(y_true, y_pred)?;
    let roc_auc = match scores {
        Some(s) => roc_auc(y_true, s)?.map(|a| 100.0 * a),
        None => None,
    };
    Ok(EvalReport {
        n: y_true.len(),
        confusion: c,
        pos_f1: 100.0 * c.pos_f1(),
        avg_f1: 100.0 * c.avg_f1(),
        roc_auc,
        mcc: 100.0 * c.mcc(),
        agreement: None,
        mismatch_rate: None,
        histogram: scores.map(score_histogram),
    })
}

/// Trial-averaged metrics of a classifier that predicts positive with the
/// class prior and scores uniformly at random.
pub fn random_baseline(n_pos: usize, n_neg: usize, trials: usize, seed: u64) -> Result<EvalReport> {
    if n_pos == 0 || n_neg == 0 || trials == 0 {
        return Err(EvalError::ZeroCounts);
    }
    let n = n_pos + n_neg;
    let prior = n_pos as f64 / n as f64;
    let y_true: Vec<u8> = (0..n).map(|i| u8::from(i < n_pos)).collect();
    let per_trial: Vec<EvalReport> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let pred: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(prior))).collect();
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            compute_metrics(&y_true, &pred, Some(&scores))
        })
        .collect::<Result<_>>()?;
    let k = trials as f64;
    let mean = |f: &dyn Fn(&EvalReport) -> f64| per_trial.iter().map(f).sum::<f64>() / k;
    let mean_count = |f: &dyn Fn(&Confusion) -> u64| (per_trial.iter().map(|r| f(&r.confusion) as f64).sum::<f64>() / k).round() as u64;
    let (tp, fp, fn_) = (mean_count(&|c| c.tp), mean_count(&|c| c.fp), mean_count(&|c| c.fn_));
    Ok(EvalReport {
        n,
        confusion: Confusion { tp, fp, fn_, tn: (n as u64).saturating_sub(tp + fp + fn_) },
        pos_f1: mean(&|r| r.pos_f1),
        avg_f1: mean(&|r| r.avg_f1),
        roc_auc: Some(mean(&|r| r.roc_auc.unwrap_or(50.0))),
        mcc: mean(&|r| r.mcc),
        agreement: None,
        mismatch_rate: None,
        histogram: None,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Aligned text table, one row per named report.
pub fn format_table(rows: &[(String, EvalReport)]) -> String {
    let header = ["Method", "Pos.F1", "Avg.F1", "ROC-AUC", "MCC", "Mismatch%", "TP", "FP", "FN", "TN"];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            vec![
                name.clone(),
                format!("{:.2}", r.pos_f1),
                format!("{:.2}", r.avg_f1),
                pct(r.roc_auc),
                format!("{:.2}", r.mcc),
                pct(r.mismatch_rate),
                r.confusion.tp.to_string(),
                r.confusion.fp.to_string(),
                r.confusion.fn_.to_string(),
                r.confusion.tn.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> =
        (0..header.len()).map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0)).collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in &body {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
