//! Answers from recorded transcripts.

use std::collections::BTreeMap;

use super::{Backend, BackendError, BackendErrorKind, BackendKind, BackendReply, BackendRequest};
use crate::agent::run::{Event, RunRecord};

type Key = (String, String, u32);

/// Replays the responses (and failures) of earlier runs, keyed by area,
/// tool and protocol attempt.
pub struct ReplayBackend {
    answers: BTreeMap<Key, Result<BackendReply, BackendError>>,
}

impl ReplayBackend {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let mut answers = BTreeMap::new();
        for r in records {
            for e in &r.events {
                match &e.event {
                    Event::Response { tool_id, attempt, text, transport } => {
                        answers.insert(
                            (r.area_id.clone(), tool_id.clone(), *attempt),
                            Ok(BackendReply { text: text.clone(), attempts: transport.clone() }),
                        );
                    }
                    Event::BackendFailure { tool_id, attempt, kind, message, transport } => {
                        answers.insert(
                            (r.area_id.clone(), tool_id.clone(), *attempt),
                            Err(BackendError { kind: *kind, message: message.clone(), attempts: transport.clone() }),
                        );
                    }
                    _ => {}
                }
            }
        }
        ReplayBackend { answers }
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn invoke(&self, req: &BackendRequest<'_>) -> Result<BackendReply, BackendError> {
        let key = (req.area_id.to_string(), req.tool_id.to_string(), req.attempt);
        self.answers.get(&key).cloned().unwrap_or_else(|| {
            Err(BackendError::new(
                BackendErrorKind::Unresolvable,
                format!("no recorded response for area {} tool {} attempt {}", req.area_id, req.tool_id, req.attempt),
            ))
        })
    }
}
