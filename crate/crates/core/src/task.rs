//! Task files: schema, validation, difficulty taxonomy, and intent templates.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvaluatorSpec;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task file parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("task {task_id}: invalid `{field}`: {reason}")]
    Validation {
        task_id: String,
        field: &'static str,
        reason: String,
    },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template slot `{slot}` has no binding")]
    MissingBinding { slot: String },
    #[error("template has an unterminated slot at byte {offset}")]
    UnterminatedSlot { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    Classifieds,
    Reddit,
    Shopping,
    Multi,
}

impl Site {
    pub const ALL: [Site; 4] = [Site::Classifieds, Site::Reddit, Site::Shopping, Site::Multi];

    pub fn as_str(self) -> &'static str {
        match self {
            Site::Classifieds => "classifieds",
            Site::Reddit => "reddit",
            Site::Shopping => "shopping",
            Site::Multi => "multi",
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Easy,
    Medium,
    Hard,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Easy, Level::Medium, Level::Hard];

    pub fn rank(self) -> u8 {
        match self {
            Level::Easy => 1,
            Level::Medium => 2,
            Level::Hard => 3,
        }
    }

    fn from_rank(rank: u8) -> Level {
        match rank {
            0 | 1 => Level::Easy,
            2 => Level::Medium,
            _ => Level::Hard,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Easy => "easy",
            Level::Medium => "medium",
            Level::Hard => "hard",
        }
    }

    /// Action difficulty implied by an estimated human action count.
    pub fn from_action_count(actions: usize) -> Level {
        match actions {
            0..=3 => Level::Easy,
            4..=9 => Level::Medium,
            _ => Level::Hard,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mean of the two component ranks, ties rounding up.
pub fn derive_overall_difficulty(action: Level, visual: Level) -> Level {
    let sum = action.rank() + visual.rank();
    Level::from_rank(sum.div_ceil(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DifficultyRating {
    pub action_difficulty: Level,
    pub visual_difficulty: Level,
    pub overall: Level,
}

impl DifficultyRating {
    pub fn new(action: Level, visual: Level) -> Self {
        Self {
            action_difficulty: action,
            visual_difficulty: visual,
            overall: derive_overall_difficulty(action, visual),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetTag {
    OcrRequired,
    ExactImageMatch,
    ImageInput,
}

impl SubsetTag {
    pub const ALL: [SubsetTag; 3] = [
        SubsetTag::OcrRequired,
        SubsetTag::ExactImageMatch,
        SubsetTag::ImageInput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SubsetTag::OcrRequired => "ocr_required",
            SubsetTag::ExactImageMatch => "exact_image_match",
            SubsetTag::ImageInput => "image_input",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub site: Site,
    pub start_url: String,
    pub intent: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intent_template: Option<String>,
    pub input_images: Vec<PathBuf>,
    pub evaluators: Vec<EvaluatorSpec>,
    pub difficulty: DifficultyRating,
    pub achievable: bool,
    pub subset_tags: BTreeSet<SubsetTag>,
}

impl TaskSpec {
    /// Absolute start URL: absolute URLs pass through, site-relative ones are
    /// joined onto the base for the task's site.
    pub fn resolve_start_url(&self, bases: &BTreeMap<Site, String>) -> Result<String, TaskError> {
        resolve_site_url(&self.start_url, self.site, bases).map_err(|reason| TaskError::Validation {
            task_id: self.task_id.clone(),
            field: "start_url",
            reason,
        })
    }

    pub fn has_tag(&self, tag: SubsetTag) -> bool {
        self.subset_tags.contains(&tag)
    }
}

/// Joins a possibly site-relative URL onto the configured base for `site`.
pub fn resolve_site_url(
    raw: &str,
    site: Site,
    bases: &BTreeMap<Site, String>,
) -> Result<String, String> {
    if url::Url::parse(raw).is_ok() {
        return Ok(raw.to_string());
    }
    let base = bases
        .get(&site)
        .ok_or_else(|| format!("relative URL `{raw}` but no base URL configured for site {site}"))?;
    let base = url::Url::parse(base).map_err(|e| format!("bad base URL `{base}`: {e}"))?;
    base.join(raw)
        .map(|u| u.to_string())
        .map_err(|e| format!("cannot join `{raw}`: {e}"))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDifficulty {
    action_difficulty: Level,
    visual_difficulty: Level,
    #[serde(default)]
    overall: Option<Level>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    task_id: String,
    site: Site,
    start_url: String,
    intent: String,
    #[serde(default)]
    intent_template: Option<String>,
    #[serde(default)]
    input_images: Vec<PathBuf>,
    evaluators: Vec<EvaluatorSpec>,
    difficulty: RawDifficulty,
    #[serde(default = "default_true")]
    achievable: bool,
    #[serde(default)]
    subset_tags: BTreeSet<SubsetTag>,
}

fn default_true() -> bool {
    true
}

fn invalid(task_id: &str, field: &'static str, reason: impl Into<String>) -> TaskError {
    TaskError::Validation {
        task_id: task_id.to_string(),
        field,
        reason: reason.into(),
    }
}

fn validate(raw: RawTask) -> Result<TaskSpec, TaskError> {
    let id = raw.task_id.as_str();
    if id.trim().is_empty() {
        return Err(invalid(id, "task_id", "empty"));
    }
    if raw.intent.trim().is_empty() {
        return Err(invalid(id, "intent", "empty"));
    }
    if raw.start_url.trim().is_empty() {
        return Err(invalid(id, "start_url", "empty"));
    }
    if raw.evaluators.is_empty() {
        return Err(invalid(id, "evaluators", "at least one evaluator required"));
    }
    for ev in &raw.evaluators {
        ev.validate().map_err(|reason| invalid(id, "evaluators", reason))?;
    }
    let has_images = !raw.input_images.is_empty();
    if has_images != raw.subset_tags.contains(&SubsetTag::ImageInput) {
        return Err(invalid(
            id,
            "subset_tags",
            "image_input tag must be present exactly when input_images is nonempty",
        ));
    }
    if !raw.achievable {
        let fuzzy_only = raw.evaluators.len() == 1
            && matches!(raw.evaluators[0], EvaluatorSpec::FuzzyMatch { .. });
        if !fuzzy_only {
            return Err(invalid(
                id,
                "evaluators",
                "unachievable task must carry exactly one fuzzy_match evaluator",
            ));
        }
    }
    let derived = derive_overall_difficulty(
        raw.difficulty.action_difficulty,
        raw.difficulty.visual_difficulty,
    );
    if let Some(overall) = raw.difficulty.overall {
        if overall != derived {
            return Err(invalid(
                id,
                "difficulty",
                format!("overall `{overall}` disagrees with derived `{derived}`"),
            ));
        }
    }
    Ok(TaskSpec {
        task_id: raw.task_id,
        site: raw.site,
        start_url: raw.start_url,
        intent: raw.intent,
        intent_template: raw.intent_template,
        input_images: raw.input_images,
        evaluators: raw.evaluators,
        difficulty: DifficultyRating::new(
            raw.difficulty.action_difficulty,
            raw.difficulty.visual_difficulty,
        ),
        achievable: raw.achievable,
        subset_tags: raw.subset_tags,
    })
}

/// Parses and validates a task file (a JSON array of task objects).
pub fn parse_task_file(bytes: &[u8]) -> Result<Vec<TaskSpec>, TaskError> {
    let raw: Vec<RawTask> = serde_json::from_slice(bytes).map_err(|e| TaskError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for task in raw {
        if !seen.insert(task.task_id.clone()) {
            return Err(invalid(&task.task_id, "task_id", "duplicate task_id"));
        }
        out.push(validate(task)?);
    }
    Ok(out)
}

pub fn serialize_task_file(tasks: &[TaskSpec]) -> String {
    serde_json::to_string_pretty(tasks).expect("task specs serialize")
}

/// A parsed task file together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct TaskSet {
    pub base_dir: PathBuf,
    pub tasks: Vec<TaskSpec>,
}

impl TaskSet {
    pub fn load(path: &Path) -> Result<Self, TaskError> {
        let bytes = std::fs::read(path).map_err(|source| TaskError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let tasks = parse_task_file(&bytes)?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { base_dir, tasks })
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        if relative.is_absolute() {
            relative.to_path_buf()
        } else {
            self.base_dir.join(relative)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentTemplate {
    pub template: String,
    pub bindings: BTreeMap<String, String>,
}

impl IntentTemplate {
    pub fn new(template: impl Into<String>) -> Self {
        Self {
            template: template.into(),
            bindings: BTreeMap::new(),
        }
    }

    pub fn bind(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.bindings.insert(name.into(), value.into());
        self
    }

    /// Slot names in order of first appearance.
    pub fn slots(&self) -> Result<Vec<String>, TaskError> {
        let mut out: Vec<String> = Vec::new();
        let mut rest = self.template.as_str();
        let mut offset = 0;
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or(TaskError::UnterminatedSlot {
                offset: offset + start,
            })?;
            let name = after[..end].trim().to_string();
            if !out.contains(&name) {
                out.push(name);
            }
            let consumed = start + 2 + end + 2;
            offset += consumed;
            rest = &rest[consumed..];
        }
        Ok(out)
    }
}

/// Replaces every `{{name}}` slot with its binding. Substituted values are
/// not rescanned.
pub fn expand_template(t: &IntentTemplate) -> Result<String, TaskError> {
    let mut out = String::with_capacity(t.template.len());
    let mut rest = t.template.as_str();
    let mut offset = 0;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or(TaskError::UnterminatedSlot {
            offset: offset + start,
        })?;
        let name = after[..end].trim();
        let value = t
            .bindings
            .get(name)
            .ok_or_else(|| TaskError::MissingBinding {
                slot: name.to_string(),
            })?;
        out.push_str(value);
        let consumed = start + 2 + end + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    out.push_str(rest);
    Ok(out)
}
