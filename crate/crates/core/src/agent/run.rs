//! Running judging tools over one area and recording what happened.

// A failed run hands back its partial transcript, so the error is large.
#![allow(clippy::result_large_err)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::backend::{Attempt, Backend, BackendErrorKind, BackendRequest, PIPELINE_TOOL_ID};
use super::baseline::{parse_pipeline, PipelineResult};
use super::prompts::PromptSet;
use super::protocol::{parse_assessment, Assessment};
use super::tools::{resolve_inputs, Stage, ToolGraph, ToolSpec, JUDGING_TOOL_IDS};
use super::AgentError;
use crate::dataset::{setting_inputs, AreaImage, AreaRecord, Setting, SettingConfig};
use crate::decision::Decision;
use crate::fsutil::write_atomic;
use crate::signature::SignatureRegistry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Agents,
    Baseline,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Agents => "agents",
            RunMode::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "agents" => Ok(RunMode::Agents),
            "baseline" => Ok(RunMode::Baseline),
            other => Err(format!("unknown mode {other:?} (expected agents or baseline)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RunStart {
        mode: RunMode,
        setting: Setting,
        backend: String,
        started_unix_ms: u64,
    },
    ToolStart {
        tool_id: String,
        stage: Stage,
        deps: Vec<String>,
    },
    Request {
        tool_id: String,
        attempt: u32,
        prompt: String,
        images: Vec<String>,
    },
    Response {
        tool_id: String,
        attempt: u32,
        text: String,
        transport: Vec<Attempt>,
    },
    BackendFailure {
        tool_id: String,
        attempt: u32,
        kind: BackendErrorKind,
        message: String,
        transport: Vec<Attempt>,
    },
    ParseFailure {
        tool_id: String,
        attempt: u32,
        error: String,
    },
    ToolComplete {
        tool_id: String,
        assessment: Assessment,
    },
    ToolFailed {
        tool_id: String,
        error: String,
    },
    Pipeline {
        result: PipelineResult,
    },
    Decision {
        decision: Decision,
        weights: Vec<f64>,
    },
    RunEnd {
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

/// One line of a run record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub area_id: String,
    pub seq: u64,
    /// Microseconds since the run started.
    pub t_us: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// Append-only, totally ordered event log shared by the tools of one run.
pub struct EventLog {
    area_id: String,
    start: Instant,
    events: Mutex<Vec<LoggedEvent>>,
}

impl EventLog {
    pub fn new(area_id: impl Into<String>) -> Self {
        EventLog { area_id: area_id.into(), start: Instant::now(), events: Mutex::new(Vec::new()) }
    }

    /// Appends an event and returns its sequence number. Sequence numbers
    /// and timestamps are assigned under the same lock, so both orders agree.
    pub fn push(&self, event: Event) -> u64 {
        let mut events = self.events.lock().unwrap_or_else(|e| e.into_inner());
        let seq = events.len() as u64;
        let t_us = self.start.elapsed().as_micros() as u64;
        events.push(LoggedEvent { area_id: self.area_id.clone(), seq, t_us, event });
        seq
    }

    pub fn into_record(self) -> RunRecord {
        RunRecord { area_id: self.area_id, events: self.events.into_inner().unwrap_or_else(|e| e.into_inner()) }
    }
}

/// Assessments of one area keyed by tool id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssessmentSet {
    by_tool: BTreeMap<String, Assessment>,
}

impl AssessmentSet {
    pub fn new() -> Self {
        AssessmentSet::default()
    }

    pub fn insert(&mut self, a: Assessment) {
        self.by_tool.insert(a.tool_id.clone(), a);
    }

    pub fn get(&self, tool_id: &str) -> Option<&Assessment> {
        self.by_tool.get(tool_id)
    }

    pub fn len(&self) -> usize {
        self.by_tool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_tool.is_empty()
    }

    pub fn tool_ids(&self) -> impl Iterator<Item = &str> {
        self.by_tool.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Assessment> {
        self.by_tool.values()
    }

    /// Scores of the six judging tools in decision-vector order, or `None`
    /// if any is missing.
    pub fn score_vector(&self) -> Option<Vec<f64>> {
        JUDGING_TOOL_IDS.iter().map(|id| self.get(id).map(|a| a.score)).collect()
    }
}

impl FromIterator<Assessment> for AssessmentSet {
    fn from_iter<I: IntoIterator<Item = Assessment>>(iter: I) -> Self {
        let mut s = AssessmentSet::new();
        for a in iter {
            s.insert(a);
        }
        s
    }
}

/// Transcript of one area's run, persisted as JSON lines.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub area_id: String,
    pub events: Vec<LoggedEvent>,
}

impl RunRecord {
    fn start(&self) -> Option<(RunMode, Setting)> {
        self.events.iter().find_map(|e| match &e.event {
            Event::RunStart { mode, setting, .. } => Some((*mode, *setting)),
            _ => None,
        })
    }

    pub fn mode(&self) -> Option<RunMode> {
        self.start().map(|s| s.0)
    }

    pub fn setting(&self) -> Option<Setting> {
        self.start().map(|s| s.1)
    }

    pub fn backend(&self) -> Option<&str> {
        self.events.iter().find_map(|e| match &e.event {
            Event::RunStart { backend, .. } => Some(backend.as_str()),
            _ => None,
        })
    }

    pub fn assessments(&self) -> AssessmentSet {
        self.events
            .iter()
            .filter_map(|e| match &e.event {
                Event::ToolComplete { assessment, .. } => Some(assessment.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn pipeline(&self) -> Option<&PipelineResult> {
        self.events.iter().rev().find_map(|e| match &e.event {
            Event::Pipeline { result } => Some(result),
            _ => None,
        })
    }

    pub fn decision(&self) -> Option<&Decision> {
        self.events.iter().rev().find_map(|e| match &e.event {
            Event::Decision { decision, .. } => Some(decision),
            _ => None,
        })
    }

    pub fn succeeded(&self) -> bool {
        self.events.iter().any(|e| matches!(e.event, Event::RunEnd { ok: true, .. }))
    }

    /// Appends an event after the run has finished.
    pub fn append(&mut self, event: Event) {
        let (seq, t_us) = self.events.last().map_or((0, 0), |e| (e.seq + 1, e.t_us));
        self.events.push(LoggedEvent { area_id: self.area_id.clone(), seq, t_us, event });
    }

    /// Dependency-order violations: a tool started before one of its
    /// dependencies completed. Empty for a well-ordered run.
    pub fn dag_violations(&self, graph: &ToolGraph) -> Vec<String> {
        let mut completed: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
        let mut violations = Vec::new();
        for e in &self.events {
            match &e.event {
                Event::ToolComplete { tool_id, .. } => {
                    completed.insert(tool_id, (e.seq, e.t_us));
                }
                Event::ToolStart { tool_id, .. } => {
                    let Some(tool) = graph.tool(tool_id) else {
                        violations.push(format!("{}: unknown tool {tool_id}", self.area_id));
                        continue;
                    };
                    for d in &tool.deps {
                        match completed.get(d.as_str()) {
                            Some(&(seq, t)) if seq < e.seq && t <= e.t_us => {}
                            _ => violations.push(format!("{}: {tool_id} started before {d} completed", self.area_id)),
                        }
                    }
                }
                _ => {}
            }
        }
        violations
    }

    /// Every parsed assessment points at a response event of the same tool.
    pub fn transcripts_complete(&self) -> bool {
        let responses: BTreeSet<(u64, &str)> = self
            .events
            .iter()
            .filter_map(|e| match &e.event {
                Event::Response { tool_id, .. } => Some((e.seq, tool_id.as_str())),
                _ => None,
            })
            .collect();
        self.events.iter().all(|e| match &e.event {
            Event::ToolComplete { tool_id, assessment } => assessment.raw_ref.is_some_and(|r| responses.contains(&(r, tool_id.as_str()))),
            _ => true,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    /// Splits a JSON-lines stream into records. A record begins at each
    /// `run_start` event or when the area id changes.
    pub fn parse_jsonl(text: &str) -> Result<Vec<RunRecord>, AgentError> {
        let mut records: Vec<RunRecord> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: LoggedEvent = serde_json::from_str(line).map_err(|err| AgentError::Record(format!("line {}: {err}", n + 1)))?;
            let fresh = matches!(e.event, Event::RunStart { .. });
            match records.last_mut() {
                Some(r) if !fresh && r.area_id == e.area_id => r.events.push(e),
                _ => records.push(RunRecord { area_id: e.area_id.clone(), events: vec![e] }),
            }
        }
        Ok(records)
    }

    pub fn load_jsonl(path: &Path) -> Result<Vec<RunRecord>, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|source| AgentError::Io { path: path.display().to_string(), source })?;
        RunRecord::parse_jsonl(&text)
    }

    pub fn save_jsonl(records: &[RunRecord], path: &Path) -> Result<(), AgentError> {
        let text: String = records.iter().map(RunRecord::to_jsonl).collect();
        write_atomic(path, text.as_bytes()).map_err(|source| AgentError::Io { path: path.display().to_string(), source })
    }
}

/// A run that stopped early: what was completed, the transcript so far and
/// the cause.
#[derive(Debug)]
pub struct RunFailure {
    pub partial: AssessmentSet,
    pub record: RunRecord,
    pub error: AgentError,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "area {}: {}", self.record.area_id, self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentsRun {
    pub assessments: AssessmentSet,
    pub record: RunRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRun {
    pub result: PipelineResult,
    pub record: RunRecord,
}

/// Shared, read-only state for running tools.
pub struct AgentContext<'a> {
    pub backend: &'a dyn Backend,
    pub prompts: &'a PromptSet,
    pub registry: &'a SignatureRegistry,
    /// Re-prompts allowed after an unreadable answer.
    pub max_retries: u32,
}

impl AgentContext<'_> {
    /// Runs one judging tool: renders its prompt, calls the backend and
    /// parses the answer, re-prompting with a format reminder when the
    /// answer cannot be read.
    pub fn run_judging_tool(
        &self,
        log: &EventLog,
        tool: &ToolSpec,
        images: &[AreaImage],
        refs: &[Assessment],
    ) -> Result<Assessment, AgentError> {
        let want: BTreeSet<&str> = tool.deps.iter().map(String::as_str).collect();
        let have: BTreeSet<&str> = refs.iter().map(|a| a.tool_id.as_str()).collect();
        if want != have || refs.len() != tool.deps.len() {
            let missing: Vec<&str> = want.difference(&have).copied().collect();
            let extra: Vec<&str> = have.difference(&want).copied().collect();
            return Err(AgentError::Precondition(format!(
                "tool {} expects references [{}]; missing [{}], unexpected [{}]",
                tool.id,
                tool.deps.join(", "),
                missing.join(", "),
                extra.join(", ")
            )));
        }
        if images.is_empty() {
            return Err(AgentError::Precondition(format!("tool {} received no images", tool.id)));
        }
        log.push(Event::ToolStart { tool_id: tool.id.clone(), stage: tool.stage, deps: tool.deps.clone() });
        let base = self.prompts.judging(tool, images, refs)?;
        let mut prompt = base.clone();
        let mut transcripts = Vec::new();
        let mut last_error = None;
        for attempt in 1..=self.max_retries + 1 {
            log.push(Event::Request {
                tool_id: tool.id.clone(),
                attempt,
                prompt: prompt.clone(),
                images: images.iter().map(|i| i.role.to_string()).collect(),
            });
            let req = BackendRequest { area_id: &log.area_id, tool_id: &tool.id, prompt: &prompt, images, references: refs, attempt };
            let reply = match self.backend.invoke(&req) {
                Ok(r) => r,
                Err(e) => {
                    log.push(Event::BackendFailure {
                        tool_id: tool.id.clone(),
                        attempt,
                        kind: e.kind,
                        message: e.message.clone(),
                        transport: e.attempts.clone(),
                    });
                    log.push(Event::ToolFailed { tool_id: tool.id.clone(), error: e.to_string() });
                    return Err(AgentError::Backend { tool_id: tool.id.clone(), source: e });
                }
            };
            let seq = log.push(Event::Response { tool_id: tool.id.clone(), attempt, text: reply.text.clone(), transport: reply.attempts });
            match parse_assessment(&reply.text) {
                Ok(mut a) => {
                    a.tool_id = tool.id.clone();
                    a.raw_ref = Some(seq);
                    log.push(Event::ToolComplete { tool_id: tool.id.clone(), assessment: a.clone() });
                    return Ok(a);
                }
                Err(e) => {
                    log.push(Event::ParseFailure { tool_id: tool.id.clone(), attempt, error: e.to_string() });
                    prompt = self.prompts.with_reminder(&base, &e.to_string())?;
                    transcripts.push(reply.text);
                    last_error = Some(e);
                }
            }
        }
        let last = last_error.expect("at least one attempt");
        log.push(Event::ToolFailed { tool_id: tool.id.clone(), error: last.to_string() });
        Err(AgentError::ParseExhausted { tool_id: tool.id.clone(), attempts: self.max_retries + 1, last, transcripts })
    }

    /// Runs every judging tool of `graph` over one area, layer by layer.
    /// Tools within a layer run concurrently; a layer starts only after the
    /// previous one has completed.
    pub fn run_agents(&self, area: &AreaRecord, root: &Path, graph: &ToolGraph, setting: &SettingConfig) -> Result<AgentsRun, RunFailure> {
        let log = EventLog::new(area.id.clone());
        log.push(Event::RunStart {
            mode: RunMode::Agents,
            setting: setting.setting,
            backend: self.backend.kind().to_string(),
            started_unix_ms: unix_ms(),
        });
        let fail = |log: EventLog, partial: AssessmentSet, error: AgentError| {
            log.push(Event::RunEnd { ok: false, error: Some(error.to_string()) });
            RunFailure { partial, record: log.into_record(), error }
        };
        let images = match setting_inputs(area, setting, root) {
            Ok(i) => i,
            Err(e) => return Err(fail(log, AssessmentSet::new(), e.into())),
        };
        let mut done = AssessmentSet::new();
        for layer in graph.judging_layers() {
            let mut jobs = Vec::with_capacity(layer.len());
            for tool in &layer {
                let inputs = match resolve_inputs(tool, &images, self.registry) {
                    Ok(i) => i,
                    Err(e) => return Err(fail(log, done, e)),
                };
                let refs: Vec<Assessment> = tool.deps.iter().filter_map(|d| done.get(d).cloned()).collect();
                jobs.push((*tool, inputs, refs));
            }
            let results: Vec<Result<Assessment, AgentError>> = std::thread::scope(|s| {
                let handles: Vec<_> = jobs
                    .iter()
                    .map(|(tool, inputs, refs)| {
                        let log = &log;
                        s.spawn(move || self.run_judging_tool(log, tool, inputs, refs))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("tool thread panicked")).collect()
            });
            let mut first_error = None;
            for r in results {
                match r {
                    Ok(a) => done.insert(a),
                    Err(e) => {
                        first_error.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_error {
                return Err(fail(log, done, e));
            }
        }
        log.push(Event::RunEnd { ok: true, error: None });
        Ok(AgentsRun { assessments: done, record: log.into_record() })
    }

    /// The one-call staged pipeline: every image of the setting in a single
    /// prompt, answered with four stage sections and a verbalized label.
    pub fn run_baseline(&self, area: &AreaRecord, root: &Path, setting: &SettingConfig) -> Result<BaselineRun, RunFailure> {
        let log = EventLog::new(area.id.clone());
        log.push(Event::RunStart {
            mode: RunMode::Baseline,
            setting: setting.setting,
            backend: self.backend.kind().to_string(),
            started_unix_ms: unix_ms(),
        });
        let result = (|| {
            let images = setting_inputs(area, setting, root)?;
            let prompt = self.prompts.pipeline(&images)?;
            log.push(Event::ToolStart { tool_id: PIPELINE_TOOL_ID.into(), stage: Stage::S1, deps: Vec::new() });
            log.push(Event::Request {
                tool_id: PIPELINE_TOOL_ID.into(),
                attempt: 1,
                prompt: prompt.clone(),
                images: images.iter().map(|i| i.role.to_string()).collect(),
            });
            let req = BackendRequest {
                area_id: &area.id,
                tool_id: PIPELINE_TOOL_ID,
                prompt: &prompt,
                images: &images,
                references: &[],
                attempt: 1,
            };
            let reply = self.backend.invoke(&req).map_err(|e| {
                log.push(Event::BackendFailure {
                    tool_id: PIPELINE_TOOL_ID.into(),
                    attempt: 1,
                    kind: e.kind,
                    message: e.message.clone(),
                    transport: e.attempts.clone(),
                });
                AgentError::Backend { tool_id: PIPELINE_TOOL_ID.into(), source: e }
            })?;
            log.push(Event::Response { tool_id: PIPELINE_TOOL_ID.into(), attempt: 1, text: reply.text.clone(), transport: reply.attempts });
            let parsed = parse_pipeline(&reply.text).inspect_err(|e| {
                log.push(Event::ParseFailure { tool_id: PIPELINE_TOOL_ID.into(), attempt: 1, error: e.to_string() });
            })?;
            log.push(Event::Pipeline { result: parsed.clone() });
            Ok::<_, AgentError>(parsed)
        })();
        match result {
            Ok(result) => {
                log.push(Event::RunEnd { ok: true, error: None });
                Ok(BaselineRun { result, record: log.into_record() })
            }
            Err(error) => {
                log.push(Event::RunEnd { ok: false, error: Some(error.to_string()) });
                Err(RunFailure { partial: AssessmentSet::new(), record: log.into_record(), error })
            }
        }
    }
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::backend::{MockBackend, MockReply, OracleBackend, ReplayBackend};
    use crate::dataset::{preprocess, synthesize_dataset, Manifest, SynthConfig};
    use crate::decision::{decide, strategy_weights, Strategy};

    fn dataset(noise: f64) -> (tempfile::TempDir, Manifest) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { positives: 2, negatives: 2, noise, size_px: 24, ..Default::default() };
        let mut m = synthesize_dataset(dir.path(), &cfg).unwrap();
        preprocess(&mut m, dir.path(), &SignatureRegistry::default(), false).unwrap();
        (dir, m)
    }

    fn run(backend: &dyn Backend, m: &Manifest, root: &Path, graph: &ToolGraph, i: usize) -> Result<AgentsRun, RunFailure> {
        let prompts = PromptSet::builtin();
        let registry = SignatureRegistry::default();
        let ctx = AgentContext { backend, prompts: &prompts, registry: &registry, max_retries: 3 };
        ctx.run_agents(&m.areas[i], root, graph, &SettingConfig::new(Setting::Standard))
    }

    #[test]
    fn tools_respect_dependencies_under_jitter() {
        let (dir, m) = dataset(0.1);
        let graph = ToolGraph::builtin();
        for seed in 0..3 {
            let backend = MockBackend::new().with_latency(0, 12, seed);
            let r = run(&backend, &m, dir.path(), &graph, 0).unwrap();
            assert_eq!(r.assessments.len(), 6);
            assert!(r.record.dag_violations(&graph).is_empty(), "{:?}", r.record.dag_violations(&graph));
            assert!(r.record.transcripts_complete());
            assert!(r.record.succeeded());
            let seqs: Vec<u64> = r.record.events.iter().map(|e| e.seq).collect();
            assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn out_of_order_start_is_reported() {
        let graph = ToolGraph::builtin();
        let log = EventLog::new("A");
        log.push(Event::ToolStart { tool_id: "c5".into(), stage: Stage::S3, deps: vec!["c2".into()] });
        let violations = log.into_record().dag_violations(&graph);
        assert_eq!(violations.len(), 3);
    }

    #[test]
    fn missing_references_are_a_precondition_failure() {
        let (dir, m) = dataset(0.0);
        let graph = ToolGraph::builtin();
        let backend = MockBackend::new();
        let prompts = PromptSet::builtin();
        let registry = SignatureRegistry::default();
        let ctx = AgentContext { backend: &backend, prompts: &prompts, registry: &registry, max_retries: 3 };
        let images = setting_inputs(&m.areas[0], &SettingConfig::new(Setting::Standard), dir.path()).unwrap();
        let c5 = graph.tool("c5").unwrap();
        let inputs = resolve_inputs(c5, &images, &registry).unwrap();
        let c2 = parse_assessment("Score: 4\nFavorable Areas: none\nExplanation: x").map(|mut a| {
            a.tool_id = "c2".into();
            a
        });
        let log = EventLog::new("A");
        let err = ctx.run_judging_tool(&log, c5, &inputs, &[c2.unwrap()]).unwrap_err();
        assert!(matches!(err, AgentError::Precondition(ref s) if s.contains("c3") && s.contains("c4")), "{err}");
        assert!(log.into_record().events.is_empty());
        assert_eq!(backend.calls("A", "c5"), 0);
    }

    #[test]
    fn unreadable_answers_exhaust_the_retries() {
        let (dir, m) = dataset(0.0);
        let backend = MockBackend::new().with_text("c2", "I think it looks promising.");
        let fail = run(&backend, &m, dir.path(), &ToolGraph::builtin(), 0).unwrap_err();
        match &fail.error {
            AgentError::ParseExhausted { tool_id, attempts, transcripts, .. } => {
                assert_eq!((tool_id.as_str(), *attempts, transcripts.len()), ("c2", 4, 4));
            }
            other => panic!("unexpected {other}"),
        }
        assert_eq!(backend.calls(&m.areas[0].id, "c2"), 4);
        let reminders = fail
            .record
            .events
            .iter()
            .filter(|e| matches!(&e.event, Event::Request { tool_id, attempt, prompt, .. } if tool_id == "c2" && *attempt > 1 && prompt.contains("Score")))
            .count();
        assert_eq!(reminders, 3);
        assert_eq!(fail.partial.tool_ids().collect::<Vec<_>>(), ["c1", "c3", "c4"]);
        assert!(!fail.record.succeeded());
    }

    #[test]
    fn a_retried_answer_recovers() {
        let (dir, m) = dataset(0.0);
        let backend = MockBackend::new().with_script(
            "c4",
            vec![MockReply::Text("no idea".into()), MockReply::Text("Score: 1.5\nFavorable Areas: none\nExplanation: faint".into())],
        );
        let r = run(&backend, &m, dir.path(), &ToolGraph::builtin(), 0).unwrap();
        assert_eq!(r.assessments.get("c4").unwrap().score, 1.5);
        assert!(r.record.transcripts_complete());
    }

    #[test]
    fn backend_failure_keeps_completed_tools() {
        let (dir, m) = dataset(0.0);
        let backend = MockBackend::new().with_script("c3", vec![MockReply::Fail { fail: "connection reset".into() }]);
        let fail = run(&backend, &m, dir.path(), &ToolGraph::builtin(), 1).unwrap_err();
        assert!(matches!(&fail.error, AgentError::Backend { tool_id, .. } if tool_id == "c3"));
        assert_eq!(fail.partial.tool_ids().collect::<Vec<_>>(), ["c1", "c2", "c4"]);
        assert!(fail
            .record
            .events
            .iter()
            .all(|e| !matches!(&e.event, Event::ToolStart { tool_id, .. } if tool_id == "c5" || tool_id == "c6")));
        assert!(matches!(fail.record.events.last().unwrap().event, Event::RunEnd { ok: false, .. }));
    }

    #[test]
    fn records_replay_to_the_same_assessments() {
        let (dir, m) = dataset(0.1);
        let oracle = OracleBackend::new(SignatureRegistry::default());
        let graph = ToolGraph::builtin();
        let records: Vec<RunRecord> = (0..m.areas.len()).map(|i| run(&oracle, &m, dir.path(), &graph, i).unwrap().record).collect();
        let path = dir.path().join("runs.jsonl");
        RunRecord::save_jsonl(&records, &path).unwrap();
        let loaded = RunRecord::load_jsonl(&path).unwrap();
        assert_eq!(loaded, records);
        let replay = ReplayBackend::from_records(&loaded);
        for (i, rec) in records.iter().enumerate() {
            let again = run(&replay, &m, dir.path(), &graph, i).unwrap();
            // sequence numbers depend on thread interleaving; contents must not
            let strip = |s: &AssessmentSet| {
                s.iter()
                    .cloned()
                    .map(|mut a| {
                        a.raw_ref = None;
                        a
                    })
                    .collect::<Vec<_>>()
            };
            assert_eq!(strip(&again.assessments), strip(&rec.assessments()));
            assert_eq!(again.record.mode(), Some(RunMode::Agents));
        }
    }

    #[test]
    fn noiseless_deposit_is_called_positive() {
        let (dir, m) = dataset(0.0);
        let oracle = OracleBackend::new(SignatureRegistry::default());
        let w = strategy_weights(Strategy::Mean, None).unwrap();
        let pos = m.areas.iter().position(|a| a.label == 1).unwrap();
        let r = run(&oracle, &m, dir.path(), &ToolGraph::builtin(), pos).unwrap();
        let d = decide(&r.assessments, &w, 3.0).unwrap();
        assert_eq!(d.label, 1, "{:?}", r.assessments.score_vector());
    }

    #[test]
    fn references_change_the_dependent_scores() {
        let (dir, m) = dataset(0.1);
        let oracle = OracleBackend::new(SignatureRegistry::default());
        let full = ToolGraph::builtin();
        let bare = full.without_references();
        let mut differs = false;
        for i in 0..m.areas.len() {
            let a = run(&oracle, &m, dir.path(), &full, i).unwrap().assessments;
            let b = run(&oracle, &m, dir.path(), &bare, i).unwrap().assessments;
            for id in ["c1", "c2", "c3", "c4"] {
                assert_eq!(a.get(id).unwrap().score, b.get(id).unwrap().score);
            }
            differs |= ["c5", "c6"].iter().any(|id| a.get(id).unwrap().score != b.get(id).unwrap().score);
        }
        assert!(differs);
    }

    #[test]
    fn baseline_makes_one_call() {
        let (dir, m) = dataset(0.0);
        let backend = MockBackend::new();
        let prompts = PromptSet::builtin();
        let registry = SignatureRegistry::default();
        let ctx = AgentContext { backend: &backend, prompts: &prompts, registry: &registry, max_retries: 3 };
        let r = ctx.run_baseline(&m.areas[0], dir.path(), &SettingConfig::new(Setting::Hard)).unwrap();
        assert_eq!(r.result.label, 1);
        assert_eq!(backend.calls(&m.areas[0].id, PIPELINE_TOOL_ID), 1);
        assert_eq!(r.record.mode(), Some(RunMode::Baseline));
        assert!(r.record.pipeline().is_some());

        let bad = MockBackend::new().with_text(PIPELINE_TOOL_ID, "[S1] a\n[S2] b\n[S3] c\n[S4] d\nFinal: maybe");
        let ctx = AgentContext { backend: &bad, ..ctx };
        let fail = ctx.run_baseline(&m.areas[0], dir.path(), &SettingConfig::new(Setting::Hard)).unwrap_err();
        assert!(matches!(fail.error, AgentError::Pipeline(_)));
        assert_eq!(bad.calls(&m.areas[0].id, PIPELINE_TOOL_ID), 1);
    }

    #[test]
    fn concatenated_records_split_per_run() {
        let mut a = EventLog::new("A");
        a.push(Event::RunStart { mode: RunMode::Baseline, setting: Setting::Easy, backend: "mock".into(), started_unix_ms: 1 });
        a.push(Event::RunEnd { ok: true, error: None });
        let a = std::mem::replace(&mut a, EventLog::new("A")).into_record();
        let text = a.to_jsonl() + &a.to_jsonl();
        let parsed = RunRecord::parse_jsonl(&text).unwrap();
        assert_eq!(parsed, vec![a.clone(), a]);
        assert!(matches!(RunRecord::parse_jsonl("{\"nope\":1}"), Err(AgentError::Record(_))));
    }
}
