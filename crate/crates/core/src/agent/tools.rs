//! The judging-tool registry and its dependency graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::dataset::AreaImage;
use crate::raster::BandId;
use crate::signature::SignatureRegistry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    Judging,
    Decision,
}

/// Pipeline stage a tool belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    S1,
    S2,
    S3,
    S4,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::S1, Stage::S2, Stage::S3, Stage::S4];

    pub fn title(self) -> &'static str {
        match self {
            Stage::S1 => "Geological Environment Analysis",
            Stage::S2 => "Remote Sensing Feature Identification",
            Stage::S3 => "Spatial Relation Analysis",
            Stage::S4 => "Cross-referencing Validation",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.index() + 1)
    }
}

/// What a tool looks at. Signature slots resolve differently per setting:
/// the signature image itself, the prospectivity map when only that is
/// available, or the raw bands the signature is built from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputSlot {
    Geological,
    Signature(BandId),
    AllSignatures,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub id: String,
    pub name: String,
    pub kind: ModuleKind,
    pub inputs: Vec<InputSlot>,
    pub deps: Vec<String>,
    pub stage: Stage,
    /// Name of the scoring guide in the prompt set; judging tools only.
    pub prompt: Option<String>,
}

impl ToolSpec {
    fn judging(id: &str, name: &str, inputs: Vec<InputSlot>, deps: &[&str], stage: Stage) -> Self {
        ToolSpec {
            id: id.into(),
            name: name.into(),
            kind: ModuleKind::Judging,
            inputs,
            deps: deps.iter().map(|d| d.to_string()).collect(),
            stage,
            prompt: Some(id.into()),
        }
    }
}

/// Ids of the six judging tools in decision-vector order.
pub const JUDGING_TOOL_IDS: [&str; 6] = ["c1", "c2", "c3", "c4", "c5", "c6"];

/// Id of the aggregating decision tool.
pub const DECISION_TOOL_ID: &str = "dm";

#[derive(Clone, Debug, PartialEq)]
pub struct ToolGraph {
    tools: Vec<ToolSpec>,
    layers: Vec<Vec<usize>>,
}

impl ToolGraph {
    /// Validates the registry and derives execution layers: layer 0 holds
    /// tools without dependencies, layer k tools depending only on earlier
    /// layers.
    pub fn new(tools: Vec<ToolSpec>) -> Result<Self, AgentError> {
        let mut index = BTreeMap::new();
        for (i, t) in tools.iter().enumerate() {
            if index.insert(t.id.clone(), i).is_some() {
                return Err(AgentError::InvalidGraph(format!("duplicate tool id {}", t.id)));
            }
            if t.kind == ModuleKind::Judging && t.prompt.is_none() {
                return Err(AgentError::InvalidGraph(format!("judging tool {} has no prompt template", t.id)));
            }
            if t.kind == ModuleKind::Judging && t.inputs.is_empty() {
                return Err(AgentError::InvalidGraph(format!("judging tool {} has no image inputs", t.id)));
            }
        }
        let mut indegree = vec![0usize; tools.len()];
        let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); tools.len()];
        for (i, t) in tools.iter().enumerate() {
            let unique: BTreeSet<&String> = t.deps.iter().collect();
            if unique.len() != t.deps.len() {
                return Err(AgentError::InvalidGraph(format!("tool {} lists a dependency twice", t.id)));
            }
            for d in &t.deps {
                let j = *index.get(d).ok_or_else(|| AgentError::InvalidGraph(format!("tool {} depends on unknown tool {d}", t.id)))?;
                indegree[i] += 1;
                dependents[j].push(i);
            }
        }
        let mut layers = Vec::new();
        let mut frontier: Vec<usize> = (0..tools.len()).filter(|&i| indegree[i] == 0).collect();
        let mut placed = 0;
        while !frontier.is_empty() {
            placed += frontier.len();
            let mut next = Vec::new();
            for &i in &frontier {
                for &k in &dependents[i] {
                    indegree[k] -= 1;
                    if indegree[k] == 0 {
                        next.push(k);
                    }
                }
            }
            next.sort_unstable();
            layers.push(frontier);
            frontier = next;
        }
        if placed != tools.len() {
            return Err(AgentError::InvalidGraph("dependency cycle".into()));
        }
        Ok(ToolGraph { tools, layers })
    }

    /// The six judging tools and the decision tool.
    pub fn builtin() -> Self {
        use InputSlot::*;
        let tools = vec![
            ToolSpec::judging("c1", "geological tool", vec![Geological], &[], Stage::S1),
            ToolSpec::judging("c2", "hydrothermal tool", vec![Signature(BandId::Hydrothermal)], &[], Stage::S2),
            ToolSpec::judging("c3", "propylitic tool", vec![Signature(BandId::Propylitic)], &[], Stage::S2),
            ToolSpec::judging("c4", "silicification tool", vec![Signature(BandId::Silicification)], &[], Stage::S2),
            ToolSpec::judging("c5", "relation tool", vec![AllSignatures], &["c2", "c3", "c4"], Stage::S3),
            ToolSpec::judging("c6", "validation tool", vec![Geological, AllSignatures], &["c1", "c2", "c3", "c4", "c5"], Stage::S4),
            ToolSpec {
                id: DECISION_TOOL_ID.into(),
                name: "decision module".into(),
                kind: ModuleKind::Decision,
                inputs: Vec::new(),
                deps: JUDGING_TOOL_IDS.iter().map(|s| s.to_string()).collect(),
                stage: Stage::S4,
                prompt: None,
            },
        ];
        ToolGraph::new(tools).expect("builtin graph is valid")
    }

    /// The same tools with every reference dependency removed, so each tool
    /// judges from images alone.
    pub fn without_references(&self) -> Self {
        let tools = self
            .tools
            .iter()
            .cloned()
            .map(|mut t| {
                if t.kind == ModuleKind::Judging {
                    t.deps.clear();
                }
                t
            })
            .collect();
        ToolGraph::new(tools).expect("removing edges keeps the graph acyclic")
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn tool(&self, id: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.id == id)
    }

    /// Execution layers as tool lists.
    pub fn layers(&self) -> Vec<Vec<&ToolSpec>> {
        self.layers.iter().map(|l| l.iter().map(|&i| &self.tools[i]).collect()).collect()
    }

    /// Judging layers only, in execution order, with empty layers dropped.
    pub fn judging_layers(&self) -> Vec<Vec<&ToolSpec>> {
        self.layers()
            .into_iter()
            .map(|l| l.into_iter().filter(|t| t.kind == ModuleKind::Judging).collect::<Vec<_>>())
            .filter(|l| !l.is_empty())
            .collect()
    }
}

/// Images a tool receives, chosen from the setting's images in canonical
/// order without duplicates.
pub fn resolve_inputs(tool: &ToolSpec, images: &[AreaImage], registry: &SignatureRegistry) -> Result<Vec<AreaImage>, AgentError> {
    let has = |b: &BandId| images.iter().any(|i| &i.role == b);
    let mut wanted: BTreeSet<BandId> = BTreeSet::new();
    for slot in &tool.inputs {
        let sigs: Vec<BandId> = match slot {
            InputSlot::Geological => {
                wanted.insert(BandId::Geological);
                continue;
            }
            InputSlot::Signature(b) => vec![b.clone()],
            InputSlot::AllSignatures => BandId::SIGNATURES.to_vec(),
        };
        for sig in sigs {
            if has(&sig) {
                wanted.insert(sig);
            } else if has(&BandId::Mpm) {
                wanted.insert(BandId::Mpm);
            } else if let Some(spec) = registry.signature(&sig) {
                wanted.extend(spec.bands().cloned());
            }
        }
    }
    let picked: Vec<AreaImage> = images.iter().filter(|i| wanted.contains(&i.role)).cloned().collect();
    let missing: Vec<String> = wanted.iter().filter(|b| !has(b)).map(|b| b.to_string()).collect();
    if !missing.is_empty() || picked.is_empty() {
        return Err(AgentError::Precondition(format!("tool {} needs images [{}] not in the setting", tool.id, missing.join(", "))));
    }
    Ok(picked)
}
