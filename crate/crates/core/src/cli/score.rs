//! Weight fitting, evaluation and reports over recorded runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use super::{usage, AppConfig, EvaluateArgs, FitArgs, ReportArgs};
use crate::agent::{RunMode, RunRecord};
use crate::dataset::Manifest;
use crate::decision::{decide_scores, fit_weights, strategy_weights, FitConfig, FittedWeights, Strategy, WeightVector};
use crate::evaluate::{agreement, compute_metrics, format_table, mismatch_rate, random_baseline, EvalReport};
use crate::fsutil::write_atomic;

/// One scored method over the evaluated areas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mode: RunMode,
    /// Backends named by the runs' start events.
    pub backends: BTreeSet<String>,
    pub threshold: f64,
    pub evaluated: usize,
    /// Areas without a complete result, excluded from every row.
    pub excluded: Vec<String>,
    pub rows: Vec<EvaluationRow>,
    pub random: EvalReport,
    pub random_seed: u64,
    pub random_trials: usize,
}

/// Scores `records` against the manifest labels: one row per weighting
/// strategy for judging-tool runs, one row for single-call runs, plus the
/// random-choice reference.
#[allow(clippy::too_many_arguments)]
pub fn evaluation(
    manifest: &Manifest,
    records: &[RunRecord],
    fitted: Option<&WeightVector>,
    only: Option<Strategy>,
    threshold: f64,
    expert: Option<&BTreeMap<String, f64>>,
    trials: usize,
    seed: u64,
) -> Result<Evaluation> {
    let labels = manifest.labels();
    let modes: BTreeSet<RunMode> = records.iter().filter_map(RunRecord::mode).collect();
    let mode = match modes.len() {
        0 => bail!("no runs found"),
        1 => *modes.first().expect("one mode"),
        _ => bail!("runs mix single-call and judging-tool modes; evaluate them separately"),
    };
    let backends = records.iter().filter_map(|r| r.backend().map(str::to_string)).collect();
    let mut seen = BTreeSet::new();
    for r in records {
        if !labels.contains_key(r.area_id.as_str()) {
            bail!("run for area {} which is not in the manifest", r.area_id);
        }
        if !seen.insert(r.area_id.as_str()) {
            bail!("more than one run for area {}", r.area_id);
        }
    }

    let mut excluded = Vec::new();
    let mut rows = Vec::new();
    let (y_true, n_pos) = match mode {
        RunMode::Agents => {
            let mut ids = Vec::new();
            let mut vectors = Vec::new();
            for r in records {
                match r.assessments().score_vector() {
                    Some(v) => {
                        ids.push(r.area_id.clone());
                        vectors.push(v);
                    }
                    None => excluded.push(r.area_id.clone()),
                }
            }
            if ids.is_empty() {
                bail!("no area has a complete set of assessments");
            }
            let y: Vec<u8> = ids.iter().map(|i| labels[i.as_str()]).collect();
            let strategies: Vec<Strategy> = match only {
                Some(s) => vec![s],
                None => Strategy::ALL.into_iter().filter(|s| *s != Strategy::Automatic || fitted.is_some()).collect(),
            };
            for s in strategies {
                let w = strategy_weights(s, fitted).map_err(|e| usage(format!("strategy {s}: {e}")))?;
                let decisions = vectors.iter().map(|v| decide_scores(v, &w, threshold)).collect::<Result<Vec<_>, _>>()?;
                let pred: Vec<u8> = decisions.iter().map(|d| d.label).collect();
                let scores: Vec<f64> = decisions.iter().map(|d| d.score).collect();
                let mut report = compute_metrics(&y, &pred, Some(&scores))?;
                let pairs: Vec<(f64, u8)> = decisions.iter().map(|d| (d.score, d.label)).collect();
                report.mismatch_rate = Some(mismatch_rate(&pairs, threshold)?);
                report.agreement = expert_agreement(expert, &ids, &scores)?;
                rows.push(EvaluationRow { name: format!("agents ({s})"), strategy: Some(s), weights: Some(w.as_slice().to_vec()), report });
            }
            let n_pos = y.iter().filter(|&&v| v == 1).count();
            (y, n_pos)
        }
        RunMode::Baseline => {
            let mut ids = Vec::new();
            let mut results = Vec::new();
            for r in records {
                match r.pipeline() {
                    Some(p) => {
                        ids.push(r.area_id.clone());
                        results.push(p.clone());
                    }
                    None => excluded.push(r.area_id.clone()),
                }
            }
            if ids.is_empty() {
                bail!("no area has a readable single-call answer");
            }
            let y: Vec<u8> = ids.iter().map(|i| labels[i.as_str()]).collect();
            let pred: Vec<u8> = results.iter().map(|p| p.label).collect();
            let scores: Option<Vec<f64>> = results.iter().map(|p| p.score).collect();
            let mut report = compute_metrics(&y, &pred, scores.as_deref())?;
            let pairs: Vec<(f64, u8)> = results.iter().filter_map(|p| p.score.map(|s| (s, p.label))).collect();
            if !pairs.is_empty() {
                report.mismatch_rate = Some(mismatch_rate(&pairs, threshold)?);
            }
            if let Some(s) = &scores {
                report.agreement = expert_agreement(expert, &ids, s)?;
            }
            rows.push(EvaluationRow { name: "single call".into(), strategy: None, weights: None, report });
            let n_pos = y.iter().filter(|&&v| v == 1).count();
            (y, n_pos)
        }
    };
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        bail!("evaluated areas hold a single class ({n_pos} positive, {n_neg} negative)");
    }
    Ok(Evaluation {
        mode,
        backends,
        threshold,
        evaluated: y_true.len(),
        excluded,
        rows,
        random: random_baseline(n_pos, n_neg, trials, seed)?,
        random_seed: seed,
        random_trials: trials,
    })
}

fn expert_agreement(expert: Option<&BTreeMap<String, f64>>, ids: &[String], scores: &[f64]) -> Result<Option<crate::evaluate::Agreement>> {
    let Some(expert) = expert else { return Ok(None) };
    let (a, b): (Vec<f64>, Vec<f64>) = ids.iter().zip(scores).filter_map(|(id, s)| expert.get(id).map(|e| (*s, *e))).unzip();
    if a.len() < 2 {
        bail!("expert scores cover {} of the evaluated areas; need at least 2", a.len());
    }
    Ok(Some(agreement(&a, &b)?))
}

impl Evaluation {
    pub fn table(&self) -> String {
        let mut rows: Vec<(String, EvalReport)> = self.rows.iter().map(|r| (r.name.clone(), r.report.clone())).collect();
        rows.push(("random choice".into(), self.random.clone()));
        format_table(&rows)
    }

    /// True when no run talked to a live model.
    pub fn needs_caveat(&self) -> bool {
        !self.backends.contains("http")
    }
}

pub const CAVEAT: &str = "\
Caveat: no live multimodal model was queried for these runs. The figures
measure the pipeline against a deterministic scorer (or scripted/replayed
answers) on the given data. They are not estimates of how any model would
perform on real imagery, and they say nothing about agreement with expert
judgement.";

fn load_records(cfg: &AppConfig, p: &Path) -> Result<Vec<RunRecord>> {
    let p = cfg.input(p);
    RunRecord::load_jsonl(&p).with_context(|| format!("loading runs {}", p.display()))
}

fn load_manifest(cfg: &AppConfig, p: &Path) -> Result<Manifest> {
    let p = cfg.input(p);
    Manifest::load(&p).with_context(|| format!("loading manifest {}", p.display()))
}

fn load_fitted(cfg: &AppConfig, p: Option<&Path>) -> Result<Option<FittedWeights>> {
    p.map(|p| {
        let p = cfg.input(p);
        FittedWeights::load(&p).with_context(|| format!("loading weights {}", p.display()))
    })
    .transpose()
}

pub fn fit(cfg: &AppConfig, a: FitArgs) -> Result<()> {
    let manifest = load_manifest(cfg, &a.manifest)?;
    let labels = manifest.labels();
    let records = load_records(cfg, &a.runs)?;
    let mut data = Vec::new();
    let mut skipped = 0;
    for r in &records {
        if r.mode() != Some(RunMode::Agents) {
            bail!("area {}: weights can only be fitted to judging-tool runs", r.area_id);
        }
        let y = *labels.get(r.area_id.as_str()).ok_or_else(|| anyhow!("area {} is not in the manifest", r.area_id))?;
        match r.assessments().score_vector() {
            Some(v) => data.push((v, y)),
            None => skipped += 1,
        }
    }
    let fc = FitConfig { folds: a.folds, budget: a.budget, seed: cfg.seed, optimizer: a.optimizer, threshold: a.threshold };
    let fitted = fit_weights(&data, &fc)?;
    let out = cfg.output(&a.out);
    fitted.save(&out)?;
    let w: Vec<String> = fitted.weights.as_slice().iter().map(|w| format!("{w:.3}")).collect();
    println!(
        "fitted weights [{}] from {} areas ({} incomplete skipped, seed {}); wrote {}",
        w.join(", "),
        data.len(),
        skipped,
        cfg.seed,
        out.display()
    );
    for f in &fitted.folds {
        println!("  fold {}: training MCC {:.3}, held-out MCC {:.3}", f.fold, f.objective, f.validation_mcc);
    }
    Ok(())
}

#[derive(Deserialize)]
struct ExpertRow {
    area_id: String,
    score: f64,
}

fn read_expert(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).with_context(|| format!("reading {}", path.display()))?;
    rdr.deserialize::<ExpertRow>().map(|r| r.map(|e| (e.area_id, e.score)).with_context(|| format!("parsing {}", path.display()))).collect()
}

pub fn evaluate(cfg: &AppConfig, a: EvaluateArgs) -> Result<()> {
    let manifest = load_manifest(cfg, &a.manifest)?;
    let records = load_records(cfg, &a.runs)?;
    let fitted = load_fitted(cfg, a.weights.as_deref())?;
    let expert = a.expert_scores.as_ref().map(|p| read_expert(&cfg.input(p))).transpose()?;
    let ev =
        evaluation(&manifest, &records, fitted.as_ref().map(|f| &f.weights), a.strategy, a.threshold, expert.as_ref(), a.trials, cfg.seed)?;
    let text = if a.json { serde_json::to_string_pretty(&ev)? + "\n" } else { ev.table() };
    print!("{text}");
    if !ev.excluded.is_empty() {
        eprintln!("note: {} areas without complete results were excluded", ev.excluded.len());
    }
    if let Some(o) = &a.out {
        let o = cfg.output(o);
        write_atomic(&o, text.as_bytes()).with_context(|| format!("writing {}", o.display()))?;
    }
    Ok(())
}

pub fn report(cfg: &AppConfig, a: ReportArgs) -> Result<()> {
    let manifest = load_manifest(cfg, &a.manifest)?;
    let fitted = load_fitted(cfg, a.weights.as_deref())?;
    let mut out = String::new();
    writeln!(out, "Prospectivity evaluation report")?;
    writeln!(out, "===============================")?;
    writeln!(out)?;
    writeln!(
        out,
        "Dataset: {} ({} areas, {} positive, {} negative)",
        manifest.name,
        manifest.areas.len(),
        manifest.positives,
        manifest.negatives
    )?;
    let mut caveat = true;
    for runs in &a.runs {
        let records = load_records(cfg, runs)?;
        let ev = evaluation(&manifest, &records, fitted.as_ref().map(|f| &f.weights), None, a.threshold, None, a.trials, cfg.seed)?;
        caveat &= ev.needs_caveat();
        let settings: BTreeSet<String> = records.iter().filter_map(|r| r.setting().map(|s| s.to_string())).collect();
        writeln!(out)?;
        writeln!(out, "Runs: {}", cfg.input(runs).display())?;
        writeln!(
            out,
            "  mode {}, setting {}, backend {}",
            ev.mode.as_str(),
            settings.into_iter().collect::<Vec<_>>().join("/"),
            ev.backends.iter().cloned().collect::<Vec<_>>().join("/")
        )?;
        writeln!(out, "  {} areas evaluated, {} excluded for incomplete results", ev.evaluated, ev.excluded.len())?;
        writeln!(out)?;
        out.push_str(&ev.table());
        writeln!(out)?;
        writeln!(out, "Label-score consistency (share of labels contradicting score >= {}):", ev.threshold)?;
        for r in &ev.rows {
            match r.report.mismatch_rate {
                Some(m) => writeln!(out, "  {}: {m:.2}%", r.name)?,
                None => writeln!(out, "  {}: no scores reported", r.name)?,
            }
        }
        writeln!(out, "Decision-score histogram (bins 0..5):")?;
        for r in &ev.rows {
            if let Some(h) = r.report.histogram {
                writeln!(out, "  {}: {:?}", r.name, h)?;
            }
        }
        writeln!(out, "Random choice averaged over {} trials (seed {}).", ev.random_trials, ev.random_seed)?;
    }
    if let Some(f) = &fitted {
        writeln!(out)?;
        let w: Vec<String> = f.weights.as_slice().iter().map(|w| format!("{w:.3}")).collect();
        writeln!(out, "Fitted weights ({}): [{}]", f.criteria.join(", "), w.join(", "))?;
        writeln!(
            out,
            "  {} folds, budget {}, {} optimizer, seed {}, {} records",
            f.config.folds,
            f.config.budget,
            f.config.optimizer.as_str(),
            f.config.seed,
            f.records
        )?;
    }
    if caveat {
        writeln!(out)?;
        writeln!(out, "{CAVEAT}")?;
    }
    print!("{out}");
    if let Some(o) = &a.out {
        let o = cfg.output(o);
        write_atomic(&o, out.as_bytes()).with_context(|| format!("writing {}", o.display()))?;
    }
    Ok(())
}
