//! Prompt rendering for every stage: task brainstorming, the five
//! data-synthesis families, preference judging, and revision.
//!
//! Templates are plain text files with `{slot}` placeholders plus a JSON
//! manifest naming each template's input slots and sampled-option slots, so
//! prompt wording is auditable and editable without a rebuild. A builtin
//! copy of the default templates is compiled in.

use crate::taxonomy::TopicPath;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown template '{0}'")]
    UnknownTemplate(String),
    #[error("template '{template}' references unknown slot '{slot}'")]
    UnknownSlot { template: String, slot: String },
    #[error("unterminated '{{' in template '{0}'")]
    Unterminated(String),
    #[error("judge prompt needs at least 2 candidates, got {0}")]
    InsufficientCandidates(usize),
    #[error("datum must be non-empty")]
    EmptyDatum,
    #[error("failed to read template manifest {path}: {msg}")]
    Manifest { path: String, msg: String },
}

/// The five synthesis task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Classification,
    Sts,
    Retrieval,
    MatchShortShort,
    MatchLongLong,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 5] = [
        TaskFamily::Classification,
        TaskFamily::Sts,
        TaskFamily::Retrieval,
        TaskFamily::MatchShortShort,
        TaskFamily::MatchLongLong,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskFamily::Classification => "classification",
            TaskFamily::Sts => "sts",
            TaskFamily::Retrieval => "retrieval",
            TaskFamily::MatchShortShort => "match_short_short",
            TaskFamily::MatchLongLong => "match_long_long",
        }
    }

    /// The ratio groups used for mixing: both matching families share one.
    pub fn group(&self) -> &'static str {
        match self {
            TaskFamily::Classification => "classification",
            TaskFamily::Sts => "sts",
            TaskFamily::Retrieval => "retrieval",
            TaskFamily::MatchShortShort | TaskFamily::MatchLongLong => "matching",
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A short natural-language task statement, kept with the topic that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescription {
    pub text: String,
    pub family: TaskFamily,
    pub topic: TopicPath,
}

/// A fully rendered data-synthesis prompt with every sampled slot recorded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisPrompt {
    pub family: TaskFamily,
    pub task: TaskDescription,
    pub placeholder_choices: BTreeMap<String, String>,
    pub rendered: String,
}

#[derive(Debug, Clone, Deserialize)]
struct ManifestEntry {
    file: String,
    inputs: Vec<String>,
    #[serde(default)]
    options: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
struct Manifest {
    templates: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Clone)]
struct Template {
    raw: String,
    inputs: Vec<String>,
    options: BTreeMap<String, Vec<String>>,
}

/// A loaded template directory.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, Template>,
}

macro_rules! builtin {
    ($map:ident, $name:literal) => {
        $map.insert($name.to_string(), include_str!(concat!("../templates/", $name, ".txt")).to_string());
    };
}

impl TemplateSet {
    /// The compiled-in default templates.
    pub fn builtin() -> Self {
        let mut files: BTreeMap<String, String> = BTreeMap::new();
        builtin!(files, "brainstorm_classification");
        builtin!(files, "brainstorm_sts");
        builtin!(files, "brainstorm_retrieval");
        builtin!(files, "brainstorm_match_short_short");
        builtin!(files, "brainstorm_match_long_long");
        builtin!(files, "synth_classification");
        builtin!(files, "synth_sts");
        builtin!(files, "synth_retrieval");
        builtin!(files, "synth_match_short_short");
        builtin!(files, "synth_match_long_long");
        builtin!(files, "judge");
        builtin!(files, "revise");
        let manifest: Manifest =
            serde_json::from_str(include_str!("../templates/manifest.json")).expect("builtin manifest");
        Self::assemble(manifest, |entry| {
            let name = entry.file.trim_end_matches(".txt");
            files.get(name).cloned().ok_or_else(|| PromptError::Manifest {
                path: entry.file.clone(),
                msg: "builtin template file missing".into(),
            })
        })
        .expect("builtin templates")
    }

    /// Loads templates from a directory holding the text files and
    /// `manifest.json`.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let manifest_path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| PromptError::Manifest {
            path: manifest_path.display().to_string(),
            msg: e.to_string(),
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| PromptError::Manifest {
                path: manifest_path.display().to_string(),
                msg: e.to_string(),
            })?;
        Self::assemble(manifest, |entry| {
            let p = dir.join(&entry.file);
            std::fs::read_to_string(&p).map_err(|e| PromptError::Manifest {
                path: p.display().to_string(),
                msg: e.to_string(),
            })
        })
    }

    fn assemble<F>(manifest: Manifest, mut read: F) -> Result<Self, PromptError>
    where
        F: FnMut(&ManifestEntry) -> Result<String, PromptError>,
    {
        let mut templates = BTreeMap::new();
        for (name, entry) in manifest.templates {
            let raw = read(&entry)?.trim_end().to_string();
            templates.insert(
                name,
                Template {
                    raw,
                    inputs: entry.inputs,
                    options: entry.options,
                },
            );
        }
        Ok(TemplateSet { templates })
    }

    pub fn raw(&self, name: &str) -> Option<&str> {
        self.templates.get(name).map(|t| t.raw.as_str())
    }

    /// Substitutes every `{slot}` in the template. Input slots come from
    /// `inputs`; option slots are sampled once per name from the manifest's
    /// option list (repeat occurrences reuse the choice) and recorded.
    pub fn render(
        &self,
        name: &str,
        inputs: &BTreeMap<String, String>,
        seed: u64,
    ) -> Result<(String, BTreeMap<String, String>), PromptError> {
        let template = self
            .templates
            .get(name)
            .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut choices: BTreeMap<String, String> = BTreeMap::new();
        let rendered = substitute(&template.raw, name, |slot| {
            if let Some(v) = inputs.get(slot) {
                return Ok(v.clone());
            }
            if let Some(chosen) = choices.get(slot) {
                return Ok(chosen.clone());
            }
            if let Some(opts) = template.options.get(slot) {
                let v = opts
                    .choose(&mut rng)
                    .expect("manifest option lists are non-empty")
                    .clone();
                choices.insert(slot.to_string(), v.clone());
                return Ok(v);
            }
            Err(PromptError::UnknownSlot {
                template: name.to_string(),
                slot: slot.to_string(),
            })
        })?;
        debug_assert!(
            template.inputs.iter().all(|i| inputs.contains_key(i)),
            "caller filled all declared inputs"
        );
        Ok((rendered, choices))
    }
}

/// One-pass `{slot}` substitution over the raw template. Values are never
/// rescanned, so braces inside substituted values are inert.
fn substitute<F>(raw: &str, name: &str, mut value_of: F) -> Result<String, PromptError>
where
    F: FnMut(&str) -> Result<String, PromptError>,
{
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after
            .find('}')
            .ok_or_else(|| PromptError::Unterminated(name.to_string()))?;
        let slot = &after[..end];
        out.push_str(&value_of(slot)?);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Stateless renderer over a template set.
#[derive(Debug, Clone)]
pub struct PromptForge {
    templates: TemplateSet,
}

impl Default for PromptForge {
    fn default() -> Self {
        PromptForge {
            templates: TemplateSet::builtin(),
        }
    }
}

impl PromptForge {
    pub fn new(templates: TemplateSet) -> Self {
        PromptForge { templates }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    /// Family-specific brainstorm prompt for an (already truncated) topic.
    pub fn render_brainstorm(
        &self,
        family: TaskFamily,
        topic: &TopicPath,
    ) -> Result<String, PromptError> {
        let mut inputs = BTreeMap::new();
        inputs.insert("topic".to_string(), topic.to_string());
        let (rendered, _) = self
            .templates
            .render(&format!("brainstorm_{}", family.as_str()), &inputs, 0)?;
        Ok(rendered)
    }

    /// Data-synthesis prompt for a task, with randomized option slots
    /// chosen deterministically from `seed`.
    pub fn render_synthesis(
        &self,
        family: TaskFamily,
        task: &TaskDescription,
        seed: u64,
    ) -> Result<SynthesisPrompt, PromptError> {
        let mut inputs = BTreeMap::new();
        inputs.insert("task".to_string(), task.text.clone());
        inputs.insert("topic".to_string(), task.topic.to_string());
        let (rendered, placeholder_choices) = self
            .templates
            .render(&format!("synth_{}", family.as_str()), &inputs, seed)?;
        Ok(SynthesisPrompt {
            family,
            task: task.clone(),
            placeholder_choices,
            rendered,
        })
    }

    /// Preference-judgment prompt: embeds the original data prompt and the
    /// candidate list serialized as a JSON array with explicit zero-based
    /// `index` fields.
    pub fn render_judge(
        &self,
        data_prompt: &str,
        candidates: &[String],
    ) -> Result<String, PromptError> {
        if candidates.len() < 2 {
            return Err(PromptError::InsufficientCandidates(candidates.len()));
        }
        let list: Vec<serde_json::Value> = candidates
            .iter()
            .enumerate()
            .map(|(index, data)| serde_json::json!({ "index": index, "data": data }))
            .collect();
        let mut inputs = BTreeMap::new();
        inputs.insert("data_prompt".to_string(), data_prompt.to_string());
        inputs.insert(
            "data_list".to_string(),
            serde_json::to_string(&list).expect("candidate list serializes"),
        );
        let (rendered, _) = self.templates.render("judge", &inputs, 0)?;
        Ok(rendered)
    }

    /// Revision prompt: embeds the original prompt and the datum and asks
    /// for relevance/completeness/accuracy review plus a revised version.
    pub fn render_revise(&self, data_prompt: &str, datum: &str) -> Result<String, PromptError> {
        if datum.trim().is_empty() {
            return Err(PromptError::EmptyDatum);
        }
        let mut inputs = BTreeMap::new();
        inputs.insert("data_prompt".to_string(), data_prompt.to_string());
        inputs.insert("data_example".to_string(), datum.to_string());
        let (rendered, _) = self.templates.render("revise", &inputs, 0)?;
        Ok(rendered)
    }
}
