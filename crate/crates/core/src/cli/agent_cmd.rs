//! `agent run`: judging every area of a manifest and recording the outcome.

use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use super::{usage, AgentRunArgs, AppConfig};
use crate::agent::backend::{Backend, BackendConfig, BackendKind, HttpBackend, MockBackend, OracleBackend, ReplayBackend, Throttled};
use crate::agent::{AgentContext, Event, PromptSet, RunMode, RunRecord, ToolGraph, JUDGING_TOOL_IDS};
use crate::dataset::{manifest_root, Manifest, SettingConfig};
use crate::decision::{decide, strategy_weights, FittedWeights, Strategy};
use crate::fsutil::write_atomic;
use crate::signature::SignatureRegistry;

#[derive(Debug, Serialize)]
struct Failure {
    area_id: String,
    error: String,
}

/// Written to `run.json` next to the transcripts.
#[derive(Debug, Serialize)]
struct RunSummary {
    manifest: String,
    mode: RunMode,
    setting: String,
    backend: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    seed: u64,
    references: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<Strategy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    threshold: f64,
    areas: usize,
    completed: usize,
    failures: Vec<Failure>,
    elapsed_ms: u64,
}

fn build_backend(bc: &BackendConfig, a: &AgentRunArgs, cfg: &AppConfig, registry: &SignatureRegistry) -> Result<Box<dyn Backend>> {
    Ok(match bc.kind {
        BackendKind::Oracle => Box::new(OracleBackend::new(registry.clone())),
        BackendKind::Mock => {
            let mut m = match &a.mock_script {
                Some(p) => {
                    let p = cfg.input(p);
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    MockBackend::from_json(&text).map_err(|e| usage(format!("--mock-script {}: {e}", p.display())))?
                }
                None => MockBackend::new(),
            };
            if a.mock_latency_ms > 0 {
                m = m.with_latency(0, a.mock_latency_ms, cfg.seed);
            }
            Box::new(m)
        }
        BackendKind::Replay => {
            let p = a.replay.as_ref().ok_or_else(|| usage("the replay backend needs --replay <runs.jsonl>"))?;
            Box::new(ReplayBackend::from_records(&RunRecord::load_jsonl(&cfg.input(p))?))
        }
        BackendKind::Http => {
            let http = HttpBackend::new(bc, registry.clone())?;
            Box::new(Throttled::new(http, bc.max_parallel, Duration::from_millis(bc.min_interval_ms)))
        }
    })
}

pub fn run(cfg: &AppConfig, a: AgentRunArgs) -> Result<()> {
    let started = Instant::now();
    let mut bc = cfg.backend.clone();
    if let Some(k) = a.backend {
        bc.kind = k;
    }
    if let Some(e) = &a.endpoint {
        bc.endpoint = Some(e.clone());
    }
    if let Some(m) = &a.model {
        bc.model = m.clone();
    }
    if let Some(t) = a.timeout_ms {
        bc.timeout_ms = t;
    }
    if let Some(r) = a.max_retries {
        bc.max_retries = r;
    }
    bc.validate().map_err(usage)?;
    if a.mock_script.is_some() && bc.kind != BackendKind::Mock {
        return Err(usage("--mock-script needs the mock backend"));
    }
    let setting = a.setting.unwrap_or(cfg.setting);

    let strategy = match (a.strategy, &a.weights) {
        (Some(s), _) => s,
        (None, Some(_)) => Strategy::Automatic,
        (None, None) => Strategy::Mean,
    };
    let fitted = match &a.weights {
        Some(p) => Some(FittedWeights::load(&cfg.input(p))?.weights),
        None => None,
    };
    let weights = match a.mode {
        RunMode::Agents => Some(strategy_weights(strategy, fitted.as_ref()).map_err(|e| usage(format!("--strategy {strategy}: {e}")))?),
        RunMode::Baseline => None,
    };

    let manifest_path = cfg.input(&a.manifest);
    let manifest = Manifest::load(&manifest_path).with_context(|| format!("loading manifest {}", manifest_path.display()))?;
    let root = manifest_root(&manifest_path);
    let areas = &manifest.areas[..a.limit.unwrap_or(usize::MAX).min(manifest.areas.len())];
    let registry = cfg.registry()?;
    let prompts = match a.prompts.as_ref().or(cfg.prompts.as_ref()) {
        Some(d) => PromptSet::load_dir(&cfg.input(d))?,
        None => PromptSet::builtin(),
    };
    let graph = if a.no_references { ToolGraph::builtin().without_references() } else { ToolGraph::builtin() };
    let setting_cfg = SettingConfig::new(setting);
    let backend = build_backend(&bc, &a, cfg, &registry)?;
    let ctx = AgentContext { backend: &*backend, prompts: &prompts, registry: &registry, max_retries: bc.max_retries };

    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build()?;
    // (record, csv row or failure message)
    let outcomes: Vec<(RunRecord, Result<Vec<String>, String>)> = pool.install(|| {
        areas
            .par_iter()
            .map(|area| {
                let outcome = match a.mode {
                    RunMode::Agents => match ctx.run_agents(area, &root, &graph, &setting_cfg) {
                        Ok(run) => {
                            let w = weights.as_ref().expect("agent runs carry weights");
                            let mut record = run.record;
                            match decide(&run.assessments, w, a.threshold) {
                                Ok(d) => {
                                    record.append(Event::Decision { decision: d, weights: w.as_slice().to_vec() });
                                    let scores = run.assessments.score_vector().unwrap_or_default();
                                    let mut row = vec![area.id.clone(), area.label.to_string()];
                                    row.extend(scores.iter().map(|s| s.to_string()));
                                    row.extend([format!("{:.4}", d.score), d.label.to_string()]);
                                    (record, Ok(row))
                                }
                                Err(e) => (record, Err(e.to_string())),
                            }
                        }
                        Err(f) => (f.record, Err(f.error.to_string())),
                    },
                    RunMode::Baseline => match ctx.run_baseline(area, &root, &setting_cfg) {
                        Ok(run) => {
                            let score = run.result.score.map_or(String::new(), |s| s.to_string());
                            (run.record, Ok(vec![area.id.clone(), area.label.to_string(), score, run.result.label.to_string()]))
                        }
                        Err(f) => (f.record, Err(f.error.to_string())),
                    },
                };
                match &outcome.1 {
                    Ok(_) => eprintln!("{}: done", area.id),
                    Err(e) => eprintln!("{}: failed: {e}", area.id),
                }
                outcome
            })
            .collect()
    });

    let out = cfg.output(&a.out);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let records: Vec<RunRecord> = outcomes.iter().map(|(r, _)| r.clone()).collect();
    RunRecord::save_jsonl(&records, &out.join("runs.jsonl"))?;

    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["area_id", "label"];
    match a.mode {
        RunMode::Agents => header.extend(JUDGING_TOOL_IDS.iter().copied().chain(["score", "prediction"])),
        RunMode::Baseline => header.extend(["score", "prediction"]),
    }
    csv.write_record(&header)?;
    let mut failures = Vec::new();
    for (record, row) in &outcomes {
        match row {
            Ok(row) => csv.write_record(row)?,
            Err(e) => failures.push(Failure { area_id: record.area_id.clone(), error: e.clone() }),
        }
    }
    write_atomic(&out.join("decisions.csv"), &csv.into_inner()?)?;

    let summary = RunSummary {
        manifest: manifest_path.display().to_string(),
        mode: a.mode,
        setting: setting.to_string(),
        backend: bc.kind,
        model: (bc.kind == BackendKind::Http).then(|| bc.model.clone()),
        seed: cfg.seed,
        references: !a.no_references,
        strategy: weights.as_ref().map(|_| strategy),
        weights: weights.as_ref().map(|w| w.as_slice().to_vec()),
        threshold: a.threshold,
        areas: areas.len(),
        completed: areas.len() - failures.len(),
        failures,
        elapsed_ms: started.elapsed().as_millis() as u64,
    };
    write_summary(&out.join("run.json"), &summary)?;
    println!(
        "{} of {} areas completed ({} mode, {} setting, {} backend); outputs in {}",
        summary.completed,
        summary.areas,
        a.mode.as_str(),
        setting,
        bc.kind,
        out.display()
    );
    if !summary.failures.is_empty() {
        bail!("{} areas failed; see {}", summary.failures.len(), out.join("run.json").display());
    }
    Ok(())
}

fn write_summary(path: &Path, s: &RunSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(s)? + "\n";
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}
