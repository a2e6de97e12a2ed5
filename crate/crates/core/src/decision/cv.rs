//! Cross-validated weight fitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optimize::{maximize_on_simplex, Optimizer};
use super::{decide_scores, DecisionError, Result, WeightVector, DEFAULT_THRESHOLD};
use crate::evaluate::Confusion;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub folds: usize,
    /// Objective evaluations per fold.
    pub budget: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub threshold: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { folds: 5, budget: 64, seed: 0, optimizer: Optimizer::Bayesian, threshold: DEFAULT_THRESHOLD }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub weights: WeightVector,
    /// Training MCC (fraction) reached by the fold's optimum.
    pub objective: f64,
    pub evaluations: usize,
    /// MCC (fraction) of the fold's weights on its held-out part.
    pub validation_mcc: f64,
}

/// Fitted weights with the per-fold results they were averaged from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedWeights {
    pub weights: WeightVector,
    pub criteria: Vec<String>,
    pub config: FitConfig,
    pub records: usize,
    pub folds: Vec<FoldReport>,
}

/// Assigns record indices to `k` folds, shuffling each class separately so
/// every fold gets a near-equal share of both.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in [1u8, 0] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

/// MCC of thresholded weighted scores.
fn mcc_of(records: &[(Vec<f64>, u8)], idx: &[usize], w: &WeightVector, threshold: f64) -> f64 {
    let mut c = Confusion::default();
    for &i in idx {
        let (s, y) = &records[i];
        let p = decide_scores(s, w, threshold).map(|d| d.label).unwrap_or(0);
        match (*y, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (1, _) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    c.mcc()
}

/// Fits decision weights by k-fold cross-validation: each fold maximizes
/// training MCC over the simplex, and the result is the renormalized mean
/// of the fold optima.
pub fn fit_weights(records: &[(Vec<f64>, u8)], cfg: &FitConfig) -> Result<FittedWeights> {
    if cfg.folds < 2 {
        return Err(DecisionError::InvalidConfig(format!("folds must be at least 2, got {}", cfg.folds)));
    }
    if cfg.budget == 0 {
        return Err(DecisionError::InvalidConfig("budget must be positive".into()));
    }
    let needed = 2 * cfg.folds;
    if records.len() < needed {
        return Err(DecisionError::InsufficientRecords { needed, found: records.len() });
    }
    let dim = records[0].0.len();
    if dim == 0 || records.iter().any(|(s, _)| s.len() != dim) {
        return Err(DecisionError::InvalidConfig("records must share a nonzero criterion count".into()));
    }
    if let Some((s, _)) = records.iter().find(|(s, _)| s.iter().any(|v| !(0.0..=5.0).contains(v))) {
        return Err(DecisionError::ScoreOutOfRange(s.iter().copied().find(|v| !(0.0..=5.0).contains(v)).unwrap_or(f64::NAN)));
    }
    let labels: Vec<u8> = records.iter().map(|r| r.1).collect();
    let folds = stratified_folds(&labels, cfg.folds, cfg.seed);
    for (k, f) in folds.iter().enumerate() {
        let pos = f.iter().filter(|&&i| labels[i] == 1).count();
        if pos == 0 || pos == f.len() {
            return Err(DecisionError::SingleClassFold(k));
        }
    }

    let reports: Vec<FoldReport> = (0..cfg.folds)
        .into_par_iter()
        .map(|k| {
            let held = &folds[k];
            let train: Vec<usize> = (0..records.len()).filter(|i| held.binary_search(i).is_err()).collect();
            let objective = |x: &[f64]| -> f64 {
                match WeightVector::normalized(x.to_vec()) {
                    Ok(w) => mcc_of(records, &train, &w, cfg.threshold),
                    Err(_) => -1.0,
                }
            };
            let r = maximize_on_simplex(&objective, dim, cfg.budget, cfg.seed.wrapping_add(k as u64 + 1), cfg.optimizer);
            let weights = WeightVector::normalized(r.best).expect("optimizer returns simplex points");
            let validation_mcc = mcc_of(records, held, &weights, cfg.threshold);
            FoldReport { fold: k, weights, objective: r.value, evaluations: r.evaluations, validation_mcc }
        })
        .collect();

    let mut mean = vec![0.0; dim];
    for r in &reports {
        for (m, w) in mean.iter_mut().zip(r.weights.as_slice()) {
            *m += w / cfg.folds as f64;
        }
    }
    Ok(FittedWeights {
        weights: WeightVector::normalized(mean)?,
        criteria: (1..=dim).map(|i| format!("c{i}")).collect(),
        config: cfg.clone(),
        records: records.len(),
        folds: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::simplex_grid;
    use rand::Rng;

    /// Only criterion 2 carries the label; the others are constant.
    fn one_informative(n: usize, seed: u64) -> Vec<(Vec<f64>, u8)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let y = u8::from(i % 4 == 0);
                let s2 = if y == 1 { rng.random_range(3.5..5.0) } else { rng.random_range(0.0..2.5) };
                (vec![2.0, s2, 2.0, 2.0, 2.0, 2.0], y)
            })
            .collect()
    }

    #[test]
    fn informative_criterion_gets_the_largest_weight() {
        let data = one_informative(80, 3);
        let fit = fit_weights(&data, &FitConfig { seed: 11, ..Default::default() }).unwrap();
        let w = fit.weights.as_slice();
        assert!(w[1] > 1.0 / 6.0, "{w:?}");
        assert!((0..6).filter(|&i| i != 1).all(|i| w[1] > w[i]), "{w:?}");
        // the grid oracle agrees that weighting criterion 2 heavily is optimal
        let grid_best = simplex_grid(6, 10)
            .into_iter()
            .map(|g| (mcc_of(&data, &(0..data.len()).collect::<Vec<_>>(), &WeightVector::normalized(g.clone()).unwrap(), 3.0), g))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        assert!(grid_best.0 > 0.99);
        assert!(mcc_of(&data, &(0..data.len()).collect::<Vec<_>>(), &fit.weights, 3.0) > 0.99);
    }

    #[test]
    fn final_weights_are_the_fold_mean() {
        let data = one_informative(40, 4);
        let fit = fit_weights(&data, &FitConfig { budget: 16, ..Default::default() }).unwrap();
        assert_eq!(fit.folds.len(), 5);
        for i in 0..6 {
            let m: f64 = fit.folds.iter().map(|f| f.weights.as_slice()[i]).sum::<f64>() / 5.0;
            assert!((m - fit.weights.as_slice()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let data = one_informative(4, 1);
        assert!(matches!(fit_weights(&data, &FitConfig::default()), Err(DecisionError::InsufficientRecords { needed: 10, found: 4 })));
        let single: Vec<(Vec<f64>, u8)> = (0..12).map(|i| (vec![1.0, 2.0], u8::from(i == 0))).collect();
        assert!(matches!(fit_weights(&single, &FitConfig::default()), Err(DecisionError::SingleClassFold(_))));
    }

    #[test]
    fn folds_are_stratified_and_cover_everything() {
        let labels: Vec<u8> = (0..53).map(|i| u8::from(i % 7 == 0)).collect();
        let folds = stratified_folds(&labels, 5, 9);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..53).collect::<Vec<_>>());
        let pos: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == 1).count()).collect();
        assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
        assert_eq!(folds, stratified_folds(&labels, 5, 9));
    }

    #[test]
    fn json_round_trip() {
        let data = one_informative(40, 4);
        let fit = fit_weights(&data, &FitConfig { budget: 8, optimizer: Optimizer::RandomSearch, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.json");
        fit.save(&p).unwrap();
        assert_eq!(FittedWeights::load(&p).unwrap(), fit);
    }
}
