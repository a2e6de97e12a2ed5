//! Prompt templates.
//!
//! The built-in templates live as text files under `prompts/` in the crate
//! and are compiled in. A directory with files of the same names can
//! override any of them at run time. Placeholders are written `{name}`.

use std::collections::BTreeMap;
use std::path::Path;

use super::protocol::Assessment;
use super::tools::ToolSpec;
use super::AgentError;
use crate::dataset::AreaImage;

const BUILTIN: [(&str, &str); 10] = [
    ("judging", include_str!("../../prompts/judging.txt")),
    ("references", include_str!("../../prompts/references.txt")),
    ("reminder", include_str!("../../prompts/reminder.txt")),
    ("pipeline", include_str!("../../prompts/pipeline.txt")),
    ("c1", include_str!("../../prompts/c1.txt")),
    ("c2", include_str!("../../prompts/c2.txt")),
    ("c3", include_str!("../../prompts/c3.txt")),
    ("c4", include_str!("../../prompts/c4.txt")),
    ("c5", include_str!("../../prompts/c5.txt")),
    ("c6", include_str!("../../prompts/c6.txt")),
];

#[derive(Clone, Debug, PartialEq)]
pub struct PromptSet {
    templates: BTreeMap<String, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet::builtin()
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

fn image_list(images: &[AreaImage]) -> String {
    images.iter().enumerate().map(|(i, img)| format!("{}. {}", i + 1, img.role.description())).collect::<Vec<_>>().join("\n")
}

impl PromptSet {
    pub fn builtin() -> Self {
        PromptSet { templates: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }

    /// Built-in templates with any `<name>.txt` found in `dir` taking
    /// precedence.
    pub fn load_dir(dir: &Path) -> Result<Self, AgentError> {
        let mut set = PromptSet::builtin();
        let entries = std::fs::read_dir(dir).map_err(|e| AgentError::Prompt(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| AgentError::Prompt(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let text = std::fs::read_to_string(&path).map_err(|e| AgentError::Prompt(format!("{}: {e}", path.display())))?;
            set.templates.insert(name.to_string(), text);
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Result<&str, AgentError> {
        self.templates.get(name).map(String::as_str).ok_or_else(|| AgentError::Prompt(format!("no template named {name:?}")))
    }

    /// Full prompt for a judging tool. References are serialized as whole
    /// assessments (score, areas and explanation).
    pub fn judging(&self, tool: &ToolSpec, images: &[AreaImage], refs: &[Assessment]) -> Result<String, AgentError> {
        let guide_name = tool.prompt.as_deref().ok_or_else(|| AgentError::Prompt(format!("tool {} has no template", tool.id)))?;
        let references = if refs.is_empty() {
            String::new()
        } else {
            let body = refs.iter().map(|a| format!("[{}]\n{}", a.tool_id, a.to_protocol_text())).collect::<Vec<_>>().join("\n\n");
            fill(self.get("references")?, &[("assessments", &body)])
        };
        Ok(fill(
            self.get("judging")?,
            &[
                ("tool_name", &tool.name),
                ("images", &image_list(images)),
                ("references", &references),
                ("scoring_guide", self.get(guide_name)?.trim_end()),
            ],
        ))
    }

    /// A judging prompt with the format reminder appended after a failed
    /// parse.
    pub fn with_reminder(&self, prompt: &str, error: &str) -> Result<String, AgentError> {
        Ok(format!("{prompt}{}", fill(self.get("reminder")?, &[("error", error)])))
    }

    /// The single staged prompt used by the one-call pipeline.
    pub fn pipeline(&self, images: &[AreaImage]) -> Result<String, AgentError> {
        Ok(fill(self.get("pipeline")?, &[("images", &image_list(images))]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::tools::ToolGraph;
    use crate::raster::BandId;

    fn img(role: BandId) -> AreaImage {
        AreaImage { path: role.as_str().into(), role }
    }

    #[test]
    fn every_judging_tool_has_a_guide_and_renders_fully() {
        let set = PromptSet::builtin();
        let g = ToolGraph::builtin();
        for layer in g.judging_layers() {
            for tool in layer {
                let p = set.judging(tool, &[img(BandId::Geological)], &[]).unwrap();
                assert!(!p.contains('{'), "unfilled placeholder in {}: {p}", tool.id);
                assert!(p.contains("Score:"));
            }
        }
    }

    #[test]
    fn references_are_serialized_whole() {
        let set = PromptSet::builtin();
        let g = ToolGraph::builtin();
        let r = Assessment { tool_id: "c2".into(), score: 4.0, areas: vec!["core".into()], explanation: "intense".into(), raw_ref: None };
        let p = set.judging(g.tool("c5").unwrap(), &[img(BandId::Hydrothermal)], &[r]).unwrap();
        assert!(p.contains("[c2]\nScore: 4\nFavorable Areas: core\nExplanation: intense"));
        let reminded = set.with_reminder(&p, "no score field found").unwrap();
        assert!(reminded.starts_with(&p) && reminded.contains("no score field found"));
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c1.txt"), "CUSTOM GUIDE").unwrap();
        let set = PromptSet::load_dir(dir.path()).unwrap();
        let g = ToolGraph::builtin();
        assert!(set.judging(g.tool("c1").unwrap(), &[img(BandId::Geological)], &[]).unwrap().contains("CUSTOM GUIDE"));
        assert!(set.pipeline(&[img(BandId::Geological)]).unwrap().contains("[S4]"));
    }
}
