//! Deterministic fake backend driven by a JSON digest table.
//!
//! Script entries may name requests semantically (an image path plus a
//! question, a judge triple); the loader rebuilds the exact messages the
//! gateway would send and stores them under their request digest.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use super::{
    caption_messages, judge_messages, request_digest, vqa_messages, Backend, CompletionRequest,
    RequestKind, TransportError,
};
use crate::raster::{Raster, RasterError};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("backend script parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("backend script entry {index} in `{section}`: {reason}")]
    Entry {
        section: &'static str,
        index: usize,
        reason: String,
    },
    #[error("cannot read backend script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] RasterError),
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptDefaults {
    #[serde(default = "default_chat")]
    pub chat: String,
    #[serde(default = "default_caption")]
    pub caption: String,
    #[serde(default = "default_vqa")]
    pub vqa: String,
    #[serde(default = "default_judge")]
    pub judge: String,
}

fn default_chat() -> String {
    "I cannot determine an action. In summary, the next action I will perform is ```stop []```".into()
}
fn default_caption() -> String {
    "an image".into()
}
fn default_vqa() -> String {
    "unknown".into()
}
fn default_judge() -> String {
    "incorrect".into()
}

impl Default for ScriptDefaults {
    fn default() -> Self {
        Self {
            chat: default_chat(),
            caption: default_caption(),
            vqa: default_vqa(),
            judge: default_judge(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompletionEntry {
    digest: String,
    text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionEntry {
    #[serde(default)]
    image: Option<PathBuf>,
    #[serde(default)]
    digest: Option<String>,
    text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VqaEntry {
    #[serde(default)]
    image: Option<PathBuf>,
    #[serde(default)]
    digest: Option<String>,
    question: String,
    answer: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JudgeEntry {
    intent: String,
    reference: String,
    prediction: String,
    label: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    #[serde(default)]
    defaults: ScriptDefaults,
    #[serde(default)]
    completions: Vec<CompletionEntry>,
    #[serde(default)]
    agents: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    captions: Vec<CaptionEntry>,
    #[serde(default)]
    vqa: Vec<VqaEntry>,
    #[serde(default)]
    judge: Vec<JudgeEntry>,
}

/// A fake backend: a pure function of the request digest, plus per-task
/// step scripts for chat requests tagged with an episode step.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    table: HashMap<String, String>,
    /// Caption/VQA entries keyed by raster digest, for images supplied by digest.
    captions_by_image: HashMap<String, String>,
    vqa_by_image: HashMap<(String, String), String>,
    agents: BTreeMap<String, Vec<String>>,
    defaults: ScriptDefaults,
}

impl ScriptedBackend {
    pub fn new(defaults: ScriptDefaults) -> Self {
        Self {
            defaults,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let bytes = std::fs::read(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_bytes(&bytes, base)
    }

    /// Parses a script; image paths resolve against `base_dir`.
    pub fn from_bytes(bytes: &[u8], base_dir: &Path) -> Result<Self, ScriptError> {
        let file: ScriptFile = serde_json::from_slice(bytes).map_err(|e| ScriptError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let mut backend = ScriptedBackend::new(file.defaults);
        for entry in file.completions {
            backend.table.insert(entry.digest, entry.text);
        }
        backend.agents = file.agents;

        let mut image_cache: HashMap<PathBuf, Arc<Raster>> = HashMap::new();
        let mut resolve = |section: &'static str,
                           index: usize,
                           image: &Option<PathBuf>,
                           digest: &Option<String>|
         -> Result<ImageRef, ScriptError> {
            match (image, digest) {
                (Some(p), None) => {
                    let full = base_dir.join(p);
                    if let Some(hit) = image_cache.get(&full) {
                        return Ok(ImageRef::Pixels(hit.clone()));
                    }
                    let raster = Arc::new(Raster::load(&full).map_err(|e| ScriptError::Entry {
                        section,
                        index,
                        reason: e.to_string(),
                    })?);
                    image_cache.insert(full, raster.clone());
                    Ok(ImageRef::Pixels(raster))
                }
                (None, Some(d)) => Ok(ImageRef::Digest(d.clone())),
                _ => Err(ScriptError::Entry {
                    section,
                    index,
                    reason: "exactly one of `image` or `digest` is required".into(),
                }),
            }
        };

        for (i, entry) in file.captions.into_iter().enumerate() {
            match resolve("captions", i, &entry.image, &entry.digest)? {
                ImageRef::Pixels(img) => {
                    backend.table.insert(
                        request_digest(RequestKind::Caption, &caption_messages(img)),
                        entry.text,
                    );
                }
                ImageRef::Digest(d) => {
                    backend.captions_by_image.insert(d, entry.text);
                }
            }
        }
        for (i, entry) in file.vqa.into_iter().enumerate() {
            match resolve("vqa", i, &entry.image, &entry.digest)? {
                ImageRef::Pixels(img) => {
                    backend.table.insert(
                        request_digest(RequestKind::Vqa, &vqa_messages(img, &entry.question)),
                        entry.answer,
                    );
                }
                ImageRef::Digest(d) => {
                    backend.vqa_by_image.insert((d, entry.question), entry.answer);
                }
            }
        }
        for entry in file.judge {
            backend.table.insert(
                request_digest(
                    RequestKind::Judge,
                    &judge_messages(&entry.intent, &entry.reference, &entry.prediction),
                ),
                entry.label,
            );
        }
        Ok(backend)
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, text: impl Into<String>) {
        self.table.insert(digest.into(), text.into());
    }

    pub fn insert_agent(&mut self, task_id: impl Into<String>, steps: Vec<String>) {
        self.agents.insert(task_id.into(), steps);
    }

    pub fn agent_script(&self, task_id: &str) -> Option<&[String]> {
        self.agents.get(task_id).map(Vec::as_slice)
    }

    fn image_digest(request: &CompletionRequest) -> Option<String> {
        request.messages.iter().flat_map(|m| &m.parts).find_map(|p| match p {
            super::Part::Image(r) => Some(r.digest()),
            super::Part::Text(_) => None,
        })
    }

    fn lookup(&self, request: &CompletionRequest) -> String {
        let digest = request_digest(request.kind, &request.messages);
        if let Some(hit) = self.table.get(&digest) {
            return hit.clone();
        }
        match request.kind {
            RequestKind::Chat => request
                .tag
                .as_ref()
                .and_then(|tag| self.agents.get(&tag.task_id)?.get(tag.step).cloned())
                .unwrap_or_else(|| self.defaults.chat.clone()),
            RequestKind::Caption => Self::image_digest(request)
                .and_then(|d| self.captions_by_image.get(&d).cloned())
                .unwrap_or_else(|| self.defaults.caption.clone()),
            RequestKind::Vqa => {
                let question = request
                    .messages
                    .last()
                    .map(|m| m.text_content())
                    .unwrap_or_default();
                Self::image_digest(request)
                    .and_then(|d| self.vqa_by_image.get(&(d, question)).cloned())
                    .unwrap_or_else(|| self.defaults.vqa.clone())
            }
            RequestKind::Judge => self.defaults.judge.clone(),
        }
    }
}

enum ImageRef {
    Pixels(Arc<Raster>),
    Digest(String),
}

impl Backend for ScriptedBackend {
    fn send(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        Ok(self.lookup(request))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{
        BackendProfile, ChatMessage, EpisodeTag, Gateway, JudgeVerdict, Role, SamplingConfig,
    };
    use super::*;

    fn gateway(b: ScriptedBackend) -> Gateway {
        Gateway::new(BackendProfile::fake("fake", true), Arc::new(b))
    }

    #[test]
    fn digest_entry_is_returned() {
        let msgs = vec![ChatMessage::text(Role::User, "obs")];
        let d = request_digest(RequestKind::Chat, &msgs);
        let script = format!(
            r#"{{"completions": [{{"digest": "{d}", "text": "In summary, the next action I will perform is ```click [11]```"}}]}}"#
        );
        let b = ScriptedBackend::from_bytes(script.as_bytes(), Path::new(".")).unwrap();
        let g = gateway(b);
        assert_eq!(
            g.complete(msgs.clone(), SamplingConfig::GENERAL, None).unwrap(),
            "In summary, the next action I will perform is ```click [11]```"
        );
        // identical requests, identical answers
        assert_eq!(
            g.complete(msgs.clone(), SamplingConfig::GENERAL, None).unwrap(),
            g.complete(msgs, SamplingConfig::GENERAL, None).unwrap()
        );
    }

    #[test]
    fn defaults_for_unscripted_requests() {
        let g = gateway(ScriptedBackend::default());
        let img = Arc::new(Raster::filled(1, 1, [0, 0, 0]));
        assert_eq!(g.vqa(img.clone(), "Is this green?").unwrap(), "unknown");
        assert_eq!(g.caption(img).unwrap(), "an image");
    }

    #[test]
    fn digest_keyed_images() {
        let img = Arc::new(Raster::filled(1, 1, [0, 0, 0]));
        let script = format!(
            r#"{{"captions": [{{"digest": "{d}", "text": "black pixel"}}],
                "vqa": [{{"digest": "{d}", "question": "Is this shirt green? (yes/no)", "answer": "yes"}},
                        {{"digest": "{d}", "question": "Is this a polo shirt? (yes/no)", "answer": "no"}}]}}"#,
            d = img.digest()
        );
        let g = gateway(ScriptedBackend::from_bytes(script.as_bytes(), Path::new(".")).unwrap());
        assert_eq!(g.caption(img.clone()).unwrap(), "black pixel");
        assert_eq!(g.vqa(img.clone(), "Is this shirt green? (yes/no)").unwrap(), "yes");
        assert_eq!(g.vqa(img, "Is this a polo shirt? (yes/no)").unwrap(), "no");
    }

    #[test]
    fn judge_entries_are_semantic() {
        let script = r#"{"judge": [{"intent": "Why?", "reference": "no such item", "prediction": "it does not exist", "label": "partially correct"}]}"#;
        let g = gateway(ScriptedBackend::from_bytes(script.as_bytes(), Path::new(".")).unwrap());
        assert_eq!(
            g.judge_fuzzy("Why?", "no such item", "it does not exist").unwrap(),
            JudgeVerdict::PartiallyCorrect
        );
        assert_eq!(
            g.judge_fuzzy("Why?", "no such item", "something else").unwrap(),
            JudgeVerdict::Incorrect
        );
    }

    #[test]
    fn agent_steps_follow_tag() {
        let script = r#"{"agents": {"t1": ["a", "b"]}}"#;
        let g = gateway(ScriptedBackend::from_bytes(script.as_bytes(), Path::new(".")).unwrap());
        let tag = |step| {
            Some(EpisodeTag {
                task_id: "t1".into(),
                step,
                attempt: 0,
            })
        };
        let msgs = || vec![ChatMessage::text(Role::User, "x")];
        assert_eq!(g.complete(msgs(), SamplingConfig::GENERAL, tag(1)).unwrap(), "b");
        assert!(g
            .complete(msgs(), SamplingConfig::GENERAL, tag(5))
            .unwrap()
            .contains("stop"));
    }

    #[test]
    fn malformed_script_is_parse_error() {
        assert!(matches!(
            ScriptedBackend::from_bytes(b"{\"agents\": 3}", Path::new(".")),
            Err(ScriptError::Parse { .. })
        ));
        assert!(matches!(
            ScriptedBackend::from_bytes(br#"{"captions": [{"text": "x"}]}"#, Path::new(".")),
            Err(ScriptError::Entry { .. })
        ));
    }
}
