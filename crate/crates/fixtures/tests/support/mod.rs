//! Helpers for running the fixture task pack end to end.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use webtask_core::agent::AgentConfig;
use webtask_core::browser::Viewport;
use webtask_core::gateway::{BackendProfile, Gateway, ScriptedBackend};
use webtask_core::observation::ObservationMode;
use webtask_core::report::RunReport;
use webtask_core::runner::{run, RunConfig, RunDeps};
use webtask_core::som::SomProvider;
use webtask_core::task::TaskSet;
use webtask_fixtures::{
    fixture_registry, fixture_som_provider, http_reset_hook, scripts_dir, site_bases, tasks_file, www_dir,
    FixtureServer, FixtureSessionFactory, HostLog,
};

pub struct FixtureRun {
    pub report: RunReport,
    pub hosts: Vec<String>,
}

pub fn load_script(name: &str) -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::load(&scripts_dir().join(name)).expect("script loads"))
}

pub fn gateway(backend: Arc<ScriptedBackend>) -> Gateway {
    Gateway::new(BackendProfile::fake("scripted", true), backend)
}

/// Runs `tasks` against one shared server, resetting it before every task.
pub fn run_pack(tasks: &TaskSet, script: &str, mode: ObservationMode, out: &Path, parallelism: usize) -> FixtureRun {
    let server = Arc::new(FixtureServer::start(&www_dir()).expect("server starts"));
    let log = HostLog::default();
    let factory = FixtureSessionFactory::shared(server.clone(), Viewport::DEFAULT).with_host_log(log.clone());
    let mut config = RunConfig::new(AgentConfig::new(mode), out);
    config.site_bases = site_bases();
    config.parallelism = parallelism;
    config.reset_hook = Some(http_reset_hook(server.addr()));
    run_with(tasks, config, &factory, script, log)
}

/// Same, with a fresh server per task and no reset hook.
pub fn run_pack_isolated(tasks: &TaskSet, script: &str, mode: ObservationMode, out: &Path, parallelism: usize) -> FixtureRun {
    let log = HostLog::default();
    let factory = FixtureSessionFactory::isolated(www_dir(), Viewport::DEFAULT).with_host_log(log.clone());
    let mut config = RunConfig::new(AgentConfig::new(mode), out);
    config.site_bases = site_bases();
    config.parallelism = parallelism;
    run_with(tasks, config, &factory, script, log)
}

pub fn run_with(tasks: &TaskSet, config: RunConfig, factory: &FixtureSessionFactory, script: &str, log: HostLog) -> FixtureRun {
    run_with_som(tasks, config, factory, script, log, &fixture_som_provider())
}

pub fn run_with_som(
    tasks: &TaskSet,
    config: RunConfig,
    factory: &FixtureSessionFactory,
    script: &str,
    log: HostLog,
    som: &dyn SomProvider,
) -> FixtureRun {
    let gw = gateway(load_script(script));
    let registry = fixture_registry();
    let deps = RunDeps {
        chat: &gw,
        captioner: Some(&gw),
        som: Some(som),
        judge: &gw,
        vqa: &gw,
        registry: &registry,
    };
    let report = run(tasks, &config, factory, &deps).expect("run completes");
    let hosts = log.lock().expect("host log").clone();
    FixtureRun { report, hosts }
}

/// Tasks whose pages never change, so URL-keyed manifests describe them fully.
pub const STATIC_TASKS: [&str; 7] = ["ads-001", "ads-002", "ads-003", "forum-002", "forum-003", "shop-001", "shop-004"];

pub fn static_tasks() -> TaskSet {
    let mut tasks = fixture_tasks();
    tasks.tasks.retain(|t| STATIC_TASKS.contains(&t.task_id.as_str()));
    tasks
}

/// SoM run with the annotator replaced by the recorded manifests.
pub fn run_pack_precomputed(tasks: &TaskSet, script: &str, out: &Path) -> FixtureRun {
    let stored = webtask_fixtures::precomputed_som().expect("manifests load");
    let log = HostLog::default();
    let factory = FixtureSessionFactory::isolated(www_dir(), Viewport::DEFAULT).with_host_log(log.clone());
    let mut config = RunConfig::new(AgentConfig::new(ObservationMode::SomScreenshotCaps), out);
    config.site_bases = site_bases();
    run_with_som(tasks, config, &factory, script, log, &stored)
}

pub fn fixture_tasks() -> TaskSet {
    TaskSet::load(&tasks_file()).expect("task pack loads")
}

pub fn successes(report: &RunReport) -> usize {
    report.rows.iter().filter(|r| r.score == 1).count()
}

/// Hosts the fixture browser may contact.
pub fn allowed_host(host: &str) -> bool {
    host.ends_with(".test") || host == "127.0.0.1" || host == "localhost"
}
