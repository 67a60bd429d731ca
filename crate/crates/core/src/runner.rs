//! Runs a task set: one session and episode per task, evaluation, and the
//! on-disk run directory.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_episode, AgentConfig, AgentDeps, Termination, Trajectory};
use crate::browser::SessionHandle;
use crate::eval::{evaluate_task, EpisodeResult, EvalContext, ResolverRegistry, RewardOutcome};
use crate::gateway::Gateway;
use crate::observation::Captioner;
use crate::raster::Raster;
use crate::report::{render_text, RunReport, TaskRow};
use crate::som::SomProvider;
use crate::task::{Site, TaskSet, TaskSpec};

pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const RESULT_FILE: &str = "result.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
/// Wall-clock times live apart from the report so reports stay reproducible.
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Invoked before each task to put the environment back into its initial state.
pub type ResetHook = Arc<dyn Fn(&TaskSpec) -> Result<(), String> + Send + Sync>;

/// Runs `sh -c <command>` with `WEBTASK_TASK_ID` set; nonzero exit is an error.
pub fn command_reset_hook(command: impl Into<String>) -> ResetHook {
    let command = command.into();
    Arc::new(move |task: &TaskSpec| {
        let status = std::process::Command::new("sh")
            .arg("-c")
            .arg(&command)
            .env("WEBTASK_TASK_ID", &task.task_id)
            .status()
            .map_err(|e| format!("reset hook `{command}`: {e}"))?;
        if status.success() {
            Ok(())
        } else {
            Err(format!("reset hook `{command}` exited with {status}"))
        }
    })
}

/// Opens a fresh browser session for a task.
pub trait SessionFactory: Send + Sync {
    fn open(&self, task: &TaskSpec) -> Result<SessionHandle, String>;

    /// True when every opened session gets its own environment, so tasks may
    /// run concurrently without a reset hook.
    fn isolated(&self) -> bool {
        false
    }
}

#[derive(Clone)]
pub struct RunConfig {
    pub agent: AgentConfig,
    pub site_bases: BTreeMap<Site, String>,
    pub parallelism: usize,
    pub out_dir: PathBuf,
    pub resume: bool,
    pub reset_hook: Option<ResetHook>,
    pub save_screenshots: bool,
}

impl std::fmt::Debug for RunConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunConfig")
            .field("agent", &self.agent.mode)
            .field("site_bases", &self.site_bases)
            .field("parallelism", &self.parallelism)
            .field("out_dir", &self.out_dir)
            .field("resume", &self.resume)
            .field("reset_hook", &self.reset_hook.is_some())
            .finish()
    }
}

impl RunConfig {
    pub fn new(agent: AgentConfig, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            agent,
            site_bases: BTreeMap::new(),
            parallelism: 1,
            out_dir: out_dir.into(),
            resume: false,
            reset_hook: None,
            save_screenshots: true,
        }
    }
}

/// Backends shared by all tasks of a run.
#[derive(Clone, Copy)]
pub struct RunDeps<'a> {
    pub chat: &'a Gateway,
    pub captioner: Option<&'a (dyn Captioner + Sync)>,
    pub som: Option<&'a dyn SomProvider>,
    pub judge: &'a Gateway,
    pub vqa: &'a Gateway,
    pub registry: &'a ResolverRegistry,
}

/// Contents of `<out>/<task_id>/result.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskResult {
    pub row: TaskRow,
    pub reward: Option<RewardOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn task_dir(out: &Path, task_id: &str) -> PathBuf {
    out.join(task_id)
}

pub fn step_image_name(step: usize) -> String {
    format!("step_{step:03}.png")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_result(path: &Path) -> Option<TaskResult> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn failed_row(task: &TaskSpec, error: String) -> TaskResult {
    TaskResult {
        row: TaskRow::new(task, 0, true, 0, Termination::Error),
        reward: None,
        error: Some(error),
    }
}

/// Checks everything that would make every episode fail before any of them starts.
pub fn validate(tasks: &TaskSet, config: &RunConfig, factory: &dyn SessionFactory, deps: &RunDeps<'_>) -> Result<(), RunError> {
    config.agent.validate().map_err(RunError::Config)?;
    if config.parallelism == 0 {
        return Err(RunError::Config("parallelism must be at least 1".into()));
    }
    if config.parallelism > 1 && config.reset_hook.is_none() && !factory.isolated() {
        return Err(RunError::Config(
            "parallelism > 1 needs a reset hook or isolated sessions".into(),
        ));
    }
    if config.parallelism > 1 && !factory.isolated() {
        tracing::warn!(
            parallelism = config.parallelism,
            "sessions share one environment; the reset hook must give each task its own copy"
        );
    }
    let missing = deps.registry.missing_for(&tasks.tasks);
    if !missing.is_empty() {
        return Err(RunError::Config(format!("unknown URL resolvers: {}", missing.join(", "))));
    }
    if config.agent.mode.is_som() && deps.som.is_none() {
        return Err(RunError::Config("SoM mode needs a mark provider".into()));
    }
    if config.agent.mode.has_images() && !deps.chat.profile().supports_images {
        return Err(RunError::Config(format!(
            "mode {} needs an image-capable chat backend",
            config.agent.mode
        )));
    }
    for task in &tasks.tasks {
        task.resolve_start_url(&config.site_bases)
            .map_err(|e| RunError::Config(e.to_string()))?;
        for img in &task.input_images {
            let path = tasks.resolve(img);
            if !path.is_file() {
                return Err(RunError::Config(format!(
                    "task {}: input image {} not found",
                    task.task_id,
                    path.display()
                )));
            }
        }
    }
    Ok(())
}

fn run_one(
    task: &TaskSpec,
    tasks: &TaskSet,
    config: &RunConfig,
    factory: &dyn SessionFactory,
    deps: &RunDeps<'_>,
) -> Result<TaskResult, RunError> {
    let dir = task_dir(&config.out_dir, &task.task_id);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    if let Some(hook) = &config.reset_hook {
        if let Err(e) = hook(task) {
            return Ok(failed_row(task, e));
        }
    }
    let mut images = Vec::with_capacity(task.input_images.len());
    for p in &task.input_images {
        match Raster::load(&tasks.resolve(p)) {
            Ok(r) => images.push(Arc::new(r)),
            Err(e) => return Ok(failed_row(task, format!("input image {}: {e}", p.display()))),
        }
    }
    let mut session = match factory.open(task) {
        Ok(s) => s,
        Err(e) => return Ok(failed_row(task, format!("session: {e}"))),
    };
    let start = task
        .resolve_start_url(&config.site_bases)
        .map_err(|e| RunError::Config(e.to_string()))?;
    if let Err(e) = session.goto(&start) {
        let _ = session.close();
        return Ok(failed_row(task, format!("start page: {e}")));
    }

    let agent_deps = AgentDeps {
        chat: deps.chat,
        captioner: deps.captioner.map(|c| c as &dyn Captioner),
        som: deps.som,
    };
    let mut image_error: Option<RunError> = None;
    let mut sink = |step: &crate::agent::TrajectoryStep, obs: &crate::observation::Observation| {
        if !config.save_screenshots || image_error.is_some() {
            return;
        }
        let path = dir.join(step_image_name(step.step));
        let written = obs
            .screenshot
            .encode_png()
            .map_err(|e| std::io::Error::other(e.to_string()))
            .and_then(|png| fs::write(&path, png));
        if let Err(source) = written {
            image_error = Some(RunError::Io {
                path: path.display().to_string(),
                source,
            });
        }
    };
    let trajectory: Trajectory = run_episode(task, &mut session, &images, &config.agent, &agent_deps, Some(&mut sink));
    if let Some(e) = image_error {
        let _ = session.close();
        return Err(e);
    }
    let traj_path = dir.join(TRAJECTORY_FILE);
    fs::write(&traj_path, trajectory.to_jsonl()).map_err(io_err(&traj_path))?;

    let ctx = EvalContext {
        judge: deps.judge,
        vqa: deps.vqa,
        registry: deps.registry,
        site_bases: &config.site_bases,
        task_dir: &tasks.base_dir,
    };
    let episode = EpisodeResult {
        final_answer: &trajectory.final_answer,
        final_url: trajectory.final_url.as_deref(),
    };
    let reward = evaluate_task(task, &episode, &mut session, &ctx);
    if let Err(e) = session.close() {
        tracing::warn!(task = %task.task_id, error = %e, "closing session");
    }
    Ok(TaskResult {
        row: TaskRow::new(
            task,
            reward.score,
            reward.unevaluated,
            trajectory.steps.len(),
            trajectory.termination,
        ),
        reward: Some(reward),
        error: trajectory.error,
    })
}

/// Runs every task and writes the run directory. Per-task failures become
/// rows; only configuration and output errors abort.
pub fn run(
    tasks: &TaskSet,
    config: &RunConfig,
    factory: &dyn SessionFactory,
    deps: &RunDeps<'_>,
) -> Result<RunReport, RunError> {
    validate(tasks, config, factory, deps)?;
    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;

    let results: Mutex<Vec<Option<TaskResult>>> = Mutex::new(vec![None; tasks.tasks.len()]);
    let timings: Mutex<BTreeMap<String, u128>> = Mutex::new(BTreeMap::new());
    let fatal: Mutex<Option<RunError>> = Mutex::new(None);
    let next = AtomicUsize::new(0);

    let worker = || loop {
        if fatal.lock().expect("fatal lock").is_some() {
            return;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(task) = tasks.tasks.get(i) else { return };
        let result_path = task_dir(&config.out_dir, &task.task_id).join(RESULT_FILE);
        if config.resume {
            if let Some(done) = read_result(&result_path) {
                tracing::info!(task = %task.task_id, "resume: keeping existing result");
                results.lock().expect("results lock")[i] = Some(done);
                continue;
            }
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| run_one(task, tasks, config, factory, deps)))
            .unwrap_or_else(|panic| {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Ok(failed_row(task, format!("episode panicked: {msg}")))
            });
        let written = outcome.and_then(|r| {
            let dir = task_dir(&config.out_dir, &task.task_id);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            write_json(&result_path, &r)?;
            Ok(r)
        });
        match written {
            Ok(r) => {
                tracing::info!(task = %task.task_id, score = r.row.score, steps = r.row.steps, "task finished");
                results.lock().expect("results lock")[i] = Some(r);
                timings
                    .lock()
                    .expect("timings lock")
                    .insert(task.task_id.clone(), started.elapsed().as_millis());
            }
            Err(e) => {
                fatal.lock().expect("fatal lock").get_or_insert(e);
            }
        }
    };
    std::thread::scope(|s| {
        for _ in 1..config.parallelism.min(tasks.tasks.len().max(1)) {
            s.spawn(worker);
        }
        worker();
    });
    if let Some(e) = fatal.into_inner().expect("fatal lock") {
        return Err(e);
    }

    let rows: Vec<TaskRow> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every task produced a result").row)
        .collect();
    let report = RunReport::from_rows(rows);
    let json_path = config.out_dir.join(REPORT_JSON);
    fs::write(&json_path, report.to_json()).map_err(io_err(&json_path))?;
    let text_path = config.out_dir.join(REPORT_TEXT);
    fs::write(&text_path, render_text(&report)).map_err(io_err(&text_path))?;

    let timings_path = config.out_dir.join(TIMINGS_FILE);
    let mut all: BTreeMap<String, u128> = fs::read_to_string(&timings_path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    all.extend(timings.into_inner().expect("timings lock"));
    write_json(&timings_path, &all)?;
    Ok(report)
}
