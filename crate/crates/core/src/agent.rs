//! Prompted agent loop: observe, ask the model, parse, act, repeat.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{parse_action, ParsedAction};
use crate::browser::{BrowserError, SessionHandle, Transition};
use crate::gateway::{ChatMessage, EpisodeTag, Gateway, GatewayError, Part, Role, SamplingConfig};
use crate::observation::{build_observation, truncate_to_budget, Captioner, Observation, ObservationConfig, ObservationMode, TextBudget};
use crate::raster::{Raster, RasterError};
use crate::som::SomProvider;
use crate::task::{Site, TaskSpec};

const BUILTIN_SYSTEM: &str = include_str!("../assets/prompts/system.txt");
const BUILTIN_EXAMPLES: &str = include_str!("../assets/prompts/examples.json");
const BUILTIN_SHOTS: [(&str, &[u8]); 3] = [
    ("example_shopping.png", include_bytes!("../assets/prompts/example_shopping.png")),
    ("example_reddit.png", include_bytes!("../assets/prompts/example_reddit.png")),
    ("example_classifieds.png", include_bytes!("../assets/prompts/example_classifieds.png")),
];

const PARSE_RETRY_NOTE: &str = "That reply could not be executed. End your reply with the summary sentence \
followed by exactly one command in triple backticks, using an id from the current observation.";

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("prompt asset {path}: {message}")]
    Io { path: String, message: String },
    #[error("prompt examples: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("example screenshot {path}: {source}")]
    Image { path: String, source: RasterError },
}

/// One worked example shown before the live turn.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PromptExample {
    pub site: Site,
    pub url: String,
    pub objective: String,
    pub previous_action: String,
    pub som_observation: String,
    pub tree_observation: String,
    pub som_response: String,
    pub tree_response: String,
    pub screenshot: String,
}

#[derive(Debug, Clone)]
pub struct PromptAssets {
    pub system: String,
    pub examples: Vec<(PromptExample, Arc<Raster>)>,
}

impl PromptAssets {
    /// The assets compiled into the crate.
    pub fn builtin() -> Self {
        let examples: Vec<PromptExample> =
            serde_json::from_str(BUILTIN_EXAMPLES).expect("builtin examples parse");
        let examples = examples
            .into_iter()
            .map(|e| {
                let bytes = BUILTIN_SHOTS
                    .iter()
                    .find(|(name, _)| *name == e.screenshot)
                    .map(|(_, b)| *b)
                    .expect("builtin screenshot present");
                let img = Raster::decode(bytes).expect("builtin screenshot decodes");
                (e, Arc::new(img))
            })
            .collect();
        Self {
            system: BUILTIN_SYSTEM.to_string(),
            examples,
        }
    }

    /// Loads `system.txt`, `examples.json`, and the screenshots it names.
    pub fn load_dir(dir: &Path) -> Result<Self, AssetError> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| AssetError::Io {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        };
        let system = read("system.txt")?;
        let examples: Vec<PromptExample> = serde_json::from_str(&read("examples.json")?)?;
        let examples = examples
            .into_iter()
            .map(|e| {
                let p = dir.join(&e.screenshot);
                let img = Raster::load(&p).map_err(|source| AssetError::Image {
                    path: p.display().to_string(),
                    source,
                })?;
                Ok((e, Arc::new(img)))
            })
            .collect::<Result<Vec<_>, AssetError>>()?;
        Ok(Self { system, examples })
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub mode: ObservationMode,
    /// In-context examples to include: 0, 1, or 3.
    pub k_examples: usize,
    pub max_steps: usize,
    pub sampling: SamplingConfig,
    pub observation_budget: TextBudget,
    pub assets: Arc<PromptAssets>,
    /// Re-queries allowed after an unparseable reply.
    pub retry_on_parse_failure: usize,
}

impl AgentConfig {
    pub const DEFAULT_MAX_STEPS: usize = 30;

    pub fn new(mode: ObservationMode) -> Self {
        Self {
            mode,
            k_examples: 3,
            max_steps: Self::DEFAULT_MAX_STEPS,
            sampling: SamplingConfig::GENERAL,
            observation_budget: TextBudget::DEFAULT,
            assets: Arc::new(PromptAssets::builtin()),
            retry_on_parse_failure: 1,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if ![0, 1, 3].contains(&self.k_examples) {
            return Err(format!("k_examples must be 0, 1, or 3, got {}", self.k_examples));
        }
        if self.k_examples > self.assets.examples.len() {
            return Err(format!(
                "{} examples requested but only {} available",
                self.k_examples,
                self.assets.examples.len()
            ));
        }
        if self.max_steps == 0 {
            return Err("max_steps must be at least 1".into());
        }
        self.observation_budget.validate()?;
        self.sampling.validate()
    }
}

/// Text of the user turn. Field order: observation, URL, tabs, objective, images, previous action.
pub fn user_turn_text(
    observation: &str,
    url: &str,
    tabs: Option<&str>,
    objective: &str,
    images: Option<&str>,
    previous_action: &str,
) -> String {
    let mut out = format!("OBSERVATION:\n{observation}\nURL: {url}\n");
    if let Some(t) = tabs {
        out.push_str(&format!("TABS: {t}\n"));
    }
    out.push_str(&format!("OBJECTIVE: {objective}\n"));
    if let Some(i) = images {
        out.push_str(&format!("IMAGES:\n{i}\n"));
    }
    out.push_str(&format!("PREVIOUS ACTION: {previous_action}"));
    out
}

/// Describes the task's input images for the IMAGES block.
pub fn images_block(mode: ObservationMode, count: usize, captions: &[String]) -> Option<String> {
    if count == 0 {
        return None;
    }
    let lines: Vec<String> = (0..count)
        .map(|i| {
            let cap = captions.get(i).map(String::as_str);
            match (mode.has_images(), cap) {
                (true, Some(c)) => format!("({}) attached after the screenshot; description: {c}", i + 1),
                (true, None) => format!("({}) attached after the screenshot", i + 1),
                (false, Some(c)) => format!("({}) description: {c}", i + 1),
                (false, None) => format!("({}) supplied but not viewable in this mode", i + 1),
            }
        })
        .collect();
    Some(lines.join("\n"))
}

/// System message, `k` example pairs, then the live user turn.
pub fn build_prompt(
    config: &AgentConfig,
    task: &TaskSpec,
    observation: &Observation,
    input_captions: &[String],
    previous_action: Option<&str>,
) -> Vec<ChatMessage> {
    let mode = config.mode;
    let mut messages = vec![ChatMessage::text(Role::System, config.assets.system.clone())];
    for (ex, shot) in config.assets.examples.iter().take(config.k_examples) {
        let (obs, resp) = if mode.is_som() {
            (&ex.som_observation, &ex.som_response)
        } else {
            (&ex.tree_observation, &ex.tree_response)
        };
        let text = user_turn_text(obs, &ex.url, None, &ex.objective, None, &ex.previous_action);
        let mut parts = vec![Part::Text(text)];
        if mode.has_images() {
            parts.push(Part::Image(shot.clone()));
        }
        messages.push(ChatMessage { role: Role::User, parts });
        messages.push(ChatMessage::text(Role::Assistant, resp.clone()));
    }
    let tabs = if observation.tabs.len() > 1 {
        Some(observation.tabs_header())
    } else {
        None
    };
    let input_count = task.input_images.len();
    let text = user_turn_text(
        &observation.text_payload,
        &observation.url,
        tabs.as_deref(),
        &task.intent,
        images_block(mode, input_count, input_captions).as_deref(),
        previous_action.unwrap_or("None"),
    );
    let mut parts = vec![Part::Text(text)];
    if mode.has_images() {
        parts.extend(observation.image_payloads.iter().cloned().map(Part::Image));
    }
    messages.push(ChatMessage { role: Role::User, parts });
    messages
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepAction {
    Parsed { action: ParsedAction },
    ParseFailure { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum StepResult {
    Ok,
    Terminal { answer: String },
    Error { error: BrowserError },
    NotExecuted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: usize,
    pub observation_digest: String,
    pub url: String,
    pub raw_output: String,
    pub action: StepAction,
    pub result: StepResult,
    /// Kept out of the serialized trajectory so reruns compare byte-for-byte.
    #[serde(skip)]
    pub wall_ms: u128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stopped,
    MaxSteps,
    Error,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Stopped => "stopped",
            Termination::MaxSteps => "max_steps",
            Termination::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub mode: ObservationMode,
    pub steps: Vec<TrajectoryStep>,
    pub final_answer: String,
    pub final_url: Option<String>,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "record")]
enum TrajectoryLine {
    Episode {
        task_id: String,
        mode: ObservationMode,
    },
    Step(TrajectoryStep),
    End {
        final_answer: String,
        final_url: Option<String>,
        termination: Termination,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

impl Trajectory {
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![TrajectoryLine::Episode {
            task_id: self.task_id.clone(),
            mode: self.mode,
        }];
        lines.extend(self.steps.iter().cloned().map(TrajectoryLine::Step));
        lines.push(TrajectoryLine::End {
            final_answer: self.final_answer.clone(),
            final_url: self.final_url.clone(),
            termination: self.termination,
            error: self.error.clone(),
        });
        let mut out = String::new();
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("trajectory json"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut end = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: TrajectoryLine =
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            match rec {
                TrajectoryLine::Episode { task_id, mode } => header = Some((task_id, mode)),
                TrajectoryLine::Step(s) => steps.push(s),
                TrajectoryLine::End {
                    final_answer,
                    final_url,
                    termination,
                    error,
                } => end = Some((final_answer, final_url, termination, error)),
            }
        }
        let (task_id, mode) = header.ok_or("missing episode record")?;
        let (final_answer, final_url, termination, error) = end.ok_or("missing end record")?;
        Ok(Self {
            task_id,
            mode,
            steps,
            final_answer,
            final_url,
            termination,
            error,
        })
    }

    /// Invariants: step numbers strictly increase, at most `max_steps`, and
    /// `stopped` exactly when the last action is a stop.
    pub fn check(&self, max_steps: usize) -> Result<(), String> {
        if self.steps.len() > max_steps {
            return Err(format!("{} steps exceed the cap of {max_steps}", self.steps.len()));
        }
        if self.steps.windows(2).any(|w| w[1].step <= w[0].step) {
            return Err("step numbers are not increasing".into());
        }
        let last_is_stop = matches!(
            self.steps.last().map(|s| &s.action),
            Some(StepAction::Parsed { action }) if action.is_stop()
        );
        if last_is_stop != (self.termination == Termination::Stopped) {
            return Err(format!(
                "termination {} disagrees with the last action",
                self.termination.as_str()
            ));
        }
        Ok(())
    }
}

/// Backends and providers an episode uses.
#[derive(Clone, Copy)]
pub struct AgentDeps<'a> {
    pub chat: &'a Gateway,
    pub captioner: Option<&'a dyn Captioner>,
    pub som: Option<&'a dyn SomProvider>,
}

impl std::fmt::Debug for AgentDeps<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentDeps")
            .field("chat", &self.chat.profile().name)
            .field("captioner", &self.captioner.is_some())
            .field("som", &self.som.is_some())
            .finish()
    }
}

/// Called after every step with the step record and the observation it was based on.
pub type StepSink<'a> = &'a mut dyn FnMut(&TrajectoryStep, &Observation);

fn ask_model(
    deps: &AgentDeps<'_>,
    config: &AgentConfig,
    task: &TaskSpec,
    observation: &Observation,
    captions: &[String],
    previous: Option<&str>,
    tag: EpisodeTag,
) -> Result<(Vec<ChatMessage>, String), GatewayError> {
    let messages = build_prompt(config, task, observation, captions, previous);
    match deps.chat.complete(messages.clone(), config.sampling, Some(tag.clone())) {
        Err(GatewayError::OverBudget { used, limit, .. }) => {
            // shrink the observation by the overshoot and try once more
            let budget = deps.chat.profile().context_budget;
            let over_chars = (used - limit) * budget.limit_chars().div_ceil(budget.max_units.max(1));
            let len = observation.text_payload.chars().count();
            let mut smaller = observation.clone();
            smaller.text_payload =
                truncate_to_budget(&observation.text_payload, &TextBudget::chars(len.saturating_sub(over_chars + 64).max(1)));
            let messages = build_prompt(config, task, &smaller, captions, previous);
            let text = deps.chat.complete(messages.clone(), config.sampling, Some(tag))?;
            Ok((messages, text))
        }
        other => other.map(|text| (messages, text)),
    }
}

/// Runs one episode from the session's current page.
pub fn run_episode(
    task: &TaskSpec,
    session: &mut SessionHandle,
    input_images: &[Arc<Raster>],
    config: &AgentConfig,
    deps: &AgentDeps<'_>,
    mut on_step: Option<StepSink<'_>>,
) -> Trajectory {
    let mut traj = Trajectory {
        task_id: task.task_id.clone(),
        mode: config.mode,
        steps: Vec::new(),
        final_answer: String::new(),
        final_url: None,
        termination: Termination::MaxSteps,
        error: None,
    };
    let captions: Vec<String> = match deps.captioner.filter(|_| config.mode.has_captions()) {
        Some(c) => input_images
            .iter()
            .map(|img| c.caption(img.clone()).unwrap_or_else(|_| "unavailable".into()))
            .collect(),
        None => Vec::new(),
    };
    let obs_cfg = ObservationConfig {
        mode: config.mode,
        budget: config.observation_budget,
        captioner: deps.captioner,
        som: deps.som,
    };
    let mut previous: Option<String> = None;

    for step in 0..config.max_steps {
        let started = Instant::now();
        let observation = match build_observation(session, input_images, &obs_cfg) {
            Ok(o) => o,
            Err(e) => {
                traj.termination = Termination::Error;
                traj.error = Some(format!("observation at step {step}: {e}"));
                break;
            }
        };
        let mut attempt = 0;
        let tag = |attempt| EpisodeTag {
            task_id: task.task_id.clone(),
            step,
            attempt,
        };
        let (mut messages, mut raw) =
            match ask_model(deps, config, task, &observation, &captions, previous.as_deref(), tag(0)) {
                Ok(v) => v,
                Err(e) => {
                    traj.termination = Termination::Error;
                    traj.error = Some(format!("model call at step {step}: {e}"));
                    break;
                }
            };
        let mut parsed = parse_action(&raw);
        while parsed.is_err() && attempt < config.retry_on_parse_failure {
            attempt += 1;
            let reason = parsed.as_ref().err().map(|e| e.reason.clone()).unwrap_or_default();
            tracing::debug!(task = %task.task_id, step, %reason, "re-asking after parse failure");
            messages.push(ChatMessage::text(Role::Assistant, raw.clone()));
            messages.push(ChatMessage::text(Role::User, format!("{PARSE_RETRY_NOTE} ({reason})")));
            match deps.chat.complete(messages.clone(), config.sampling, Some(tag(attempt))) {
                Ok(text) => {
                    raw = text;
                    parsed = parse_action(&raw);
                }
                Err(e) => {
                    traj.termination = Termination::Error;
                    traj.error = Some(format!("model call at step {step}: {e}"));
                    break;
                }
            }
        }
        if traj.termination == Termination::Error {
            break;
        }

        let (action, result) = match parsed {
            Err(f) => (StepAction::ParseFailure { reason: f.reason }, StepResult::NotExecuted),
            Ok(action) => {
                let result = match session.execute_action(&action, &observation) {
                    Ok(Transition::Ok) => StepResult::Ok,
                    Ok(Transition::Terminal(answer)) => StepResult::Terminal { answer },
                    Err(error) => StepResult::Error { error },
                };
                (StepAction::Parsed { action }, result)
            }
        };
        let record = TrajectoryStep {
            step,
            observation_digest: observation.digest(),
            url: observation.url.clone(),
            raw_output: raw,
            action,
            result,
            wall_ms: started.elapsed().as_millis(),
        };
        if let Some(sink) = on_step.as_mut() {
            sink(&record, &observation);
        }
        previous = Some(match (&record.action, &record.result) {
            (StepAction::Parsed { action }, StepResult::Error { error }) => format!("{action} (failed: {error})"),
            (StepAction::Parsed { action }, _) => action.to_string(),
            (StepAction::ParseFailure { .. }, _) => "None (the previous reply had no valid command)".into(),
        });
        let outcome = record.result.clone();
        let parse_failed = matches!(record.action, StepAction::ParseFailure { .. });
        traj.steps.push(record);
        match outcome {
            StepResult::Terminal { answer } => {
                traj.final_answer = answer;
                traj.termination = Termination::Stopped;
                break;
            }
            StepResult::Error { error } if error.is_fatal() => {
                traj.termination = Termination::Error;
                traj.error = Some(format!("browser at step {step}: {error}"));
                break;
            }
            _ if parse_failed => {
                traj.termination = Termination::Error;
                traj.error = Some(format!("unparseable model output at step {step}"));
                break;
            }
            _ => {}
        }
    }
    traj.final_url = session.current_url().ok();
    traj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::browser::TabInfo;
    use std::collections::BTreeMap;

    fn task() -> TaskSpec {
        crate::task::parse_task_file(
            br#"[{"task_id": "t", "site": "shopping", "start_url": "http://s.test/",
                  "intent": "Find the fax price.",
                  "evaluators": [{"type": "exact_match", "reference": "$1"}],
                  "difficulty": {"action_difficulty": "easy", "visual_difficulty": "easy"}}]"#,
        )
        .unwrap()
        .remove(0)
    }

    fn obs(mode: ObservationMode) -> Observation {
        let shot = Arc::new(Raster::filled(4, 4, [1, 1, 1]));
        Observation {
            url: "http://s.test/".into(),
            tabs: vec![TabInfo {
                index: 0,
                title: "Home".into(),
                url: "http://s.test/".into(),
                focused: true,
            }],
            mode,
            text_payload: "[1] [A] [Home]".into(),
            screenshot: shot.clone(),
            image_payloads: if mode.has_images() { vec![shot] } else { vec![] },
            som_manifest: None,
            targets: BTreeMap::new(),
            truncated: false,
        }
    }

    #[test]
    fn builtin_assets_load() {
        let a = PromptAssets::builtin();
        assert_eq!(a.examples.len(), 3);
        for (e, _) in &a.examples {
            assert!(parse_action(&e.som_response).is_ok());
            assert!(parse_action(&e.tree_response).is_ok());
        }
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/prompts");
        assert_eq!(PromptAssets::load_dir(&dir).unwrap().examples.len(), 3);
    }

    #[test]
    fn zero_shot_is_system_plus_user() {
        let mut cfg = AgentConfig::new(ObservationMode::AccTree);
        cfg.k_examples = 0;
        let m = build_prompt(&cfg, &task(), &obs(cfg.mode), &[], None);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].role, Role::System);
        let text = m[1].text_content();
        assert!(text.starts_with("OBSERVATION:\n[1] [A] [Home]\nURL: http://s.test/\nOBJECTIVE: Find the fax price.\n"));
        assert!(text.ends_with("PREVIOUS ACTION: None"));
    }

    #[test]
    fn som_three_shot_has_images_everywhere() {
        let cfg = AgentConfig::new(ObservationMode::SomScreenshotCaps);
        let m = build_prompt(&cfg, &task(), &obs(cfg.mode), &[], Some("click [3]"));
        assert_eq!(m.len(), 8);
        for pair in m[1..7].chunks(2) {
            assert_eq!(pair[0].role, Role::User);
            assert_eq!(pair[0].image_count(), 1);
            assert_eq!(pair[1].role, Role::Assistant);
        }
        assert_eq!(m[7].image_count(), 1);
        assert!(m[7].text_content().ends_with("PREVIOUS ACTION: click [3]"));
    }

    #[test]
    fn text_modes_never_carry_images() {
        for mode in [ObservationMode::AccTree, ObservationMode::AccTreeCaps] {
            let cfg = AgentConfig::new(mode);
            let m = build_prompt(&cfg, &task(), &obs(mode), &[], None);
            assert!(m.iter().all(|m| !m.has_images()));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = AgentConfig::new(ObservationMode::AccTree);
        assert!(cfg.validate().is_ok());
        cfg.k_examples = 2;
        assert!(cfg.validate().is_err());
        cfg.k_examples = 1;
        cfg.max_steps = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn images_block_by_mode() {
        assert_eq!(images_block(ObservationMode::AccTree, 0, &[]), None);
        assert_eq!(
            images_block(ObservationMode::AccTreeCaps, 1, &["a green shirt".into()]).unwrap(),
            "(1) description: a green shirt"
        );
        assert!(images_block(ObservationMode::SomScreenshotCaps, 1, &[])
            .unwrap()
            .contains("attached"));
    }

    #[test]
    fn trajectory_jsonl_round_trip() {
        let t = Trajectory {
            task_id: "t".into(),
            mode: ObservationMode::AccTree,
            steps: vec![TrajectoryStep {
                step: 0,
                observation_digest: "d".into(),
                url: "u".into(),
                raw_output: "x ```stop [a]```".into(),
                action: StepAction::Parsed {
                    action: ParsedAction::Stop { answer: "a".into() },
                },
                result: StepResult::Terminal { answer: "a".into() },
                wall_ms: 5,
            }],
            final_answer: "a".into(),
            final_url: Some("u".into()),
            termination: Termination::Stopped,
            error: None,
        };
        let text = t.to_jsonl();
        assert!(!text.contains("wall_ms"));
        let mut back = Trajectory::from_jsonl(&text).unwrap();
        back.steps[0].wall_ms = 5;
        assert_eq!(back, t);
        assert!(t.check(30).is_ok());
    }
}
