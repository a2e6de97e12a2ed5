//! Judging tools, their orchestration and the model backends behind them.
//!
//! Six judging tools each score one aspect of an area on a 0 to 5 scale.
//! Four look at images alone; the relation tool also reads the three
//! alteration assessments and the validation tool reads all five earlier
//! ones. [`AgentContext::run_agents`] runs them in dependency order and
//! records every request and response; [`AgentContext::run_baseline`] asks
//! for the whole analysis in a single call instead.

pub mod backend;
mod baseline;
mod prompts;
mod protocol;
mod run;
mod tools;

pub use baseline::{parse_pipeline, verbalize, PipelineError, PipelineResult};
pub use prompts::PromptSet;
pub use protocol::{fmt_score, parse_assessment, Assessment, ParseError, SCORE_MAX, SCORE_MIN};
pub use run::{AgentContext, AgentsRun, AssessmentSet, BaselineRun, Event, EventLog, LoggedEvent, RunFailure, RunMode, RunRecord};
pub use tools::{resolve_inputs, InputSlot, ModuleKind, Stage, ToolGraph, ToolSpec, DECISION_TOOL_ID, JUDGING_TOOL_IDS};

use thiserror::Error;

use crate::dataset::DatasetError;
use backend::BackendError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid tool graph: {0}")]
    InvalidGraph(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("prompt template: {0}")]
    Prompt(String),
    #[error("tool {tool_id}: {source}")]
    Backend {
        tool_id: String,
        #[source]
        source: BackendError,
    },
    #[error("tool {tool_id}: no readable answer after {attempts} attempts ({last})")]
    ParseExhausted { tool_id: String, attempts: u32, last: ParseError, transcripts: Vec<String> },
    #[error("pipeline answer: {0}")]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("run record: {0}")]
    Record(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
