//! Scripted backend for tests and dry runs.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Attempt, Backend, BackendError, BackendErrorKind, BackendKind, BackendReply, BackendRequest, PIPELINE_TOOL_ID};

/// One scripted answer: text returned verbatim, or an injected failure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Fail { fail: String },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptEntry {
    One(MockReply),
    Many(Vec<MockReply>),
}

const DEFAULT_ASSESSMENT: &str = "Score: 3\nFavorable Areas: centre\nExplanation: scripted mock response";
const DEFAULT_PIPELINE: &str = "[S1] scripted\n[S2] scripted\n[S3] scripted\n[S4] scripted\nFinal score: 3\nFinal: positive";

/// Answers per tool id from a script. The n-th call for a given area and
/// tool gets the n-th scripted reply; the last reply repeats. Tools without
/// a script use the `*` entry, then a fixed well-formed default.
pub struct MockBackend {
    script: BTreeMap<String, Vec<MockReply>>,
    latency_ms: Option<(u64, u64)>,
    seed: u64,
    calls: Mutex<BTreeMap<(String, String), usize>>,
}

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend::new()
    }
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.iter().chain(std::iter::once(&0xff)) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend { script: BTreeMap::new(), latency_ms: None, seed: 0, calls: Mutex::new(BTreeMap::new()) }
    }

    /// Scripts the replies for one tool id (`*` for any tool).
    pub fn with_script(mut self, tool_id: impl Into<String>, replies: Vec<MockReply>) -> Self {
        self.script.insert(tool_id.into(), replies);
        self
    }

    pub fn with_text(self, tool_id: impl Into<String>, text: impl Into<String>) -> Self {
        self.with_script(tool_id, vec![MockReply::Text(text.into())])
    }

    /// Sleeps a seeded pseudo-random time in `[min_ms, max_ms]` per call.
    pub fn with_latency(mut self, min_ms: u64, max_ms: u64, seed: u64) -> Self {
        self.latency_ms = Some((min_ms.min(max_ms), max_ms.max(min_ms)));
        self.seed = seed;
        self
    }

    /// Reads a script from JSON: an object mapping tool ids to a reply or a
    /// list of replies, where a reply is a string or `{"fail": "..."}`.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let raw: BTreeMap<String, ScriptEntry> = serde_json::from_str(text)?;
        let mut m = MockBackend::new();
        for (k, v) in raw {
            let replies = match v {
                ScriptEntry::One(r) => vec![r],
                ScriptEntry::Many(rs) => rs,
            };
            m.script.insert(k, replies);
        }
        Ok(m)
    }

    /// Calls seen so far for an area and tool.
    pub fn calls(&self, area_id: &str, tool_id: &str) -> usize {
        let calls = self.calls.lock().unwrap_or_else(|e| e.into_inner());
        calls.get(&(area_id.to_string(), tool_id.to_string())).copied().unwrap_or(0)
    }

    fn reply_for(&self, tool_id: &str, n: usize) -> MockReply {
        match self.script.get(tool_id).or_else(|| self.script.get("*")) {
            Some(rs) if !rs.is_empty() => rs[n.min(rs.len() - 1)].clone(),
            _ if tool_id == PIPELINE_TOOL_ID => MockReply::Text(DEFAULT_PIPELINE.into()),
            _ => MockReply::Text(DEFAULT_ASSESSMENT.into()),
        }
    }
}

impl Backend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn invoke(&self, req: &BackendRequest<'_>) -> Result<BackendReply, BackendError> {
        let n = {
            let mut calls = self.calls.lock().unwrap_or_else(|e| e.into_inner());
            let c = calls.entry((req.area_id.to_string(), req.tool_id.to_string())).or_insert(0);
            *c += 1;
            *c - 1
        };
        let mut elapsed_ms = 0;
        if let Some((lo, hi)) = self.latency_ms {
            let key = fnv1a(&[req.area_id.as_bytes(), req.tool_id.as_bytes(), &(n as u64).to_le_bytes()]);
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ key);
            elapsed_ms = rng.random_range(lo..=hi);
            std::thread::sleep(Duration::from_millis(elapsed_ms));
        }
        match self.reply_for(req.tool_id, n) {
            MockReply::Text(text) => {
                Ok(BackendReply { text, attempts: vec![Attempt { number: 1, elapsed_ms, status: None, outcome: "ok".into() }] })
            }
            MockReply::Fail { fail } => Err(BackendError {
                kind: BackendErrorKind::Scripted,
                message: fail.clone(),
                attempts: vec![Attempt { number: 1, elapsed_ms, status: None, outcome: fail }],
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(tool: &'a str) -> BackendRequest<'a> {
        BackendRequest { area_id: "A0000", tool_id: tool, prompt: "p", images: &[], references: &[], attempt: 1 }
    }

    #[test]
    fn scripted_reply_is_verbatim() {
        let m = MockBackend::new().with_text("c1", "R");
        assert_eq!(m.invoke(&req("c1")).unwrap().text, "R");
        assert_eq!(m.invoke(&req("c2")).unwrap().text, DEFAULT_ASSESSMENT);
        assert_eq!(m.invoke(&req(PIPELINE_TOOL_ID)).unwrap().text, DEFAULT_PIPELINE);
    }

    #[test]
    fn sequences_advance_and_repeat_last() {
        let m = MockBackend::new().with_script("c1", vec![MockReply::Text("a".into()), MockReply::Text("b".into())]);
        let got: Vec<String> = (0..3).map(|_| m.invoke(&req("c1")).unwrap().text).collect();
        assert_eq!(got, ["a", "b", "b"]);
        assert_eq!(m.calls("A0000", "c1"), 3);
    }

    #[test]
    fn json_script() {
        let m = MockBackend::from_json(r#"{"c3": {"fail": "down"}, "*": ["x", "y"]}"#).unwrap();
        let e = m.invoke(&req("c3")).unwrap_err();
        assert_eq!((e.kind, e.message.as_str()), (BackendErrorKind::Scripted, "down"));
        assert_eq!(m.invoke(&req("c1")).unwrap().text, "x");
        assert_eq!(m.invoke(&req("c2")).unwrap().text, "x");
    }

    #[test]
    fn latency_is_seeded() {
        let a = MockBackend::new().with_latency(0, 3, 9);
        let b = MockBackend::new().with_latency(0, 3, 9);
        let ta = a.invoke(&req("c1")).unwrap().attempts[0].elapsed_ms;
        let tb = b.invoke(&req("c1")).unwrap().attempts[0].elapsed_ms;
        assert_eq!(ta, tb);
        assert!(ta <= 3);
    }
}
