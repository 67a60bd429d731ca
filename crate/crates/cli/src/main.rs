use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use webtask_cdp::CdpSessionFactory;
use webtask_core::agent::AgentConfig;
use webtask_core::browser::Viewport;
use webtask_core::eval::ResolverRegistry;
use webtask_core::gateway::{
    BackendKind, BackendProfile, Gateway, RemoteChatBackend, SamplingConfig, ScriptedBackend, MODEL_VAR,
};
use webtask_core::observation::{ObservationMode, TextBudget};
use webtask_core::report::RunReport;
use webtask_core::runner::{command_reset_hook, run, RunConfig, RunDeps, SessionFactory};
use webtask_core::som::{PrecomputedSomProvider, ScriptSomProvider, SomProvider};
use webtask_core::task::{Site, TaskSet};
use webtask_fixtures::{fixture_registry, fixture_som_provider, http_reset_hook, FixtureServer, FixtureSessionFactory};

/// Site base URLs are read from these variables for live runs.
const SITE_VARS: [(Site, &str); 3] = [
    (Site::Classifieds, "WEBTASK_CLASSIFIEDS_URL"),
    (Site::Reddit, "WEBTASK_REDDIT_URL"),
    (Site::Shopping, "WEBTASK_SHOPPING_URL"),
];

#[derive(Parser)]
#[command(name = "webtask", version, about = "Run web agents against task files and score them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task in a task file and write trajectories plus a report.
    Run(RunArgs),
}

#[derive(Parser)]
struct RunArgs {
    #[arg(long)]
    tasks: PathBuf,
    /// acc_tree, acc_tree_caps, multimodal, or som
    #[arg(long, value_parser = ObservationMode::parse)]
    mode: ObservationMode,
    /// Chat-completion endpoint; falls back to WEBTASK_ENDPOINT.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 3, value_parser = parse_examples)]
    examples: usize,
    #[arg(long, default_value_t = AgentConfig::DEFAULT_MAX_STEPS)]
    max_steps: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    resume: bool,
    /// Shell command run before every task (WEBTASK_TASK_ID is set).
    #[arg(long)]
    reset_hook: Option<String>,
    #[arg(long, value_parser = Viewport::parse)]
    viewport: Option<Viewport>,
    /// Answer every model call from a scripted digest table.
    #[arg(long)]
    fake_backends: Option<PathBuf>,
    /// Serve this fixture site root in-process instead of driving a browser.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// DevTools address of a browser started with --remote-debugging-port.
    #[arg(long, env = "WEBTASK_BROWSER", default_value = "127.0.0.1:9222")]
    browser: String,
    /// Directory holding annotate.js and clear.js for SoM runs.
    #[arg(long)]
    som_scripts: Option<PathBuf>,
    /// Directory of recorded mark manifests, used instead of the annotator.
    #[arg(long, conflicts_with = "som_scripts")]
    som_manifests: Option<PathBuf>,
    /// Append one JSON line per model call here.
    #[arg(long)]
    call_log: Option<PathBuf>,
    #[arg(long)]
    no_screenshots: bool,
}

fn parse_examples(raw: &str) -> Result<usize, String> {
    match raw {
        "0" => Ok(0),
        "1" => Ok(1),
        "3" => Ok(3),
        _ => Err(format!("`{raw}` is not one of 0, 1, 3")),
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let Command::Run(args) = Cli::parse().command;
    let report = run_command(args)?;
    let a = &report.aggregates;
    println!(
        "{} tasks, success {} ({} unevaluated)",
        report.rows.len(),
        a.overall.percent(),
        a.unevaluated
    );
    Ok(())
}

fn chat_gateway(args: &RunArgs) -> Result<Gateway> {
    let gateway = match &args.fake_backends {
        Some(path) => {
            let backend = ScriptedBackend::load(path).with_context(|| format!("loading {}", path.display()))?;
            Gateway::new(BackendProfile::fake("scripted", true), Arc::new(backend))
        }
        None => {
            let backend = RemoteChatBackend::from_env(args.endpoint.as_deref()).map_err(anyhow::Error::msg)?;
            let profile = BackendProfile {
                name: std::env::var(MODEL_VAR).unwrap_or_else(|_| "default".into()),
                kind: BackendKind::RemoteChat,
                endpoint: args.endpoint.clone(),
                supports_images: true,
                context_budget: TextBudget::DEFAULT,
                sampling: SamplingConfig::GENERAL,
            };
            Gateway::new(profile, Arc::new(backend))
        }
    };
    match &args.call_log {
        Some(path) => gateway
            .with_call_log(path)
            .with_context(|| format!("opening call log {}", path.display())),
        None => Ok(gateway),
    }
}

fn live_site_bases() -> BTreeMap<Site, String> {
    SITE_VARS
        .iter()
        .filter_map(|(site, var)| Some((*site, std::env::var(var).ok()?)))
        .collect()
}

fn run_command(args: RunArgs) -> Result<RunReport> {
    let tasks = TaskSet::load(&args.tasks).with_context(|| format!("loading {}", args.tasks.display()))?;
    let mut agent = AgentConfig::new(args.mode);
    agent.k_examples = args.examples;
    agent.max_steps = args.max_steps;
    let mut config = RunConfig::new(agent, &args.out);
    config.parallelism = args.parallel;
    config.resume = args.resume;
    config.save_screenshots = !args.no_screenshots;
    config.reset_hook = args.reset_hook.clone().map(command_reset_hook);
    let viewport = args.viewport.unwrap_or(Viewport::DEFAULT);

    let chat = chat_gateway(&args)?;
    let mut som: Option<Box<dyn SomProvider>> = match (&args.som_scripts, &args.som_manifests) {
        (Some(dir), _) => Some(Box::new(
            ScriptSomProvider::from_dir(dir).with_context(|| format!("reading annotator from {}", dir.display()))?,
        )),
        (_, Some(dir)) => Some(Box::new(PrecomputedSomProvider::load_dir(dir)?)),
        _ => None,
    };

    // the server must outlive the run
    let _server: Option<Arc<FixtureServer>>;
    let factory: Box<dyn SessionFactory>;
    let registry: ResolverRegistry;
    match &args.fixtures {
        Some(root) => {
            config.site_bases = webtask_fixtures::site_bases();
            registry = fixture_registry();
            som.get_or_insert_with(|| Box::new(fixture_som_provider()));
            if args.parallel > 1 {
                _server = None;
                factory = Box::new(FixtureSessionFactory::isolated(root, viewport));
            } else {
                let server = Arc::new(FixtureServer::start(root)?);
                config.reset_hook.get_or_insert_with(|| http_reset_hook(server.addr()));
                factory = Box::new(FixtureSessionFactory::shared(server.clone(), viewport));
                _server = Some(server);
            }
        }
        None => {
            config.site_bases = live_site_bases();
            registry = ResolverRegistry::new();
            _server = None;
            factory = Box::new(CdpSessionFactory::new(&args.browser, viewport));
        }
    }
    if args.mode.is_som() && som.is_none() {
        bail!("--mode som needs --som-scripts or --som-manifests");
    }

    let deps = RunDeps {
        chat: &chat,
        captioner: Some(&chat),
        som: som.as_deref(),
        judge: &chat,
        vqa: &chat,
        registry: &registry,
    };
    Ok(run(&tasks, &config, factory.as_ref(), &deps)?)
}
