//! Hermetic fixture sites for webtask: a small multi-host HTTP server, an
//! in-process browser that renders its pages, and the checked-in site pack
//! with tasks, scripted backends, and golden files.

pub mod browser;
pub mod dom;
pub mod layout;
pub mod pack;
pub mod page;
pub mod server;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use webtask_core::browser::{SessionHandle, Viewport};
use webtask_core::eval::{ExtractKind, ResolverRegistry};
use webtask_core::runner::{ResetHook, SessionFactory};
use webtask_core::som::{PrecomputedSomProvider, ScriptSomProvider, SomError};
use webtask_core::task::{Site, TaskSpec};

pub use browser::{FixtureBrowser, HostLog, ANNOTATE_SCRIPT, CLEAR_SCRIPT};
pub use pack::{golden_slug, PageEntry, PageManifest};
pub use server::{FixtureServer, SiteState, RESET_PATH};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture data: {0}")]
    Data(String),
    #[error("cannot bind fixture server: {0}")]
    Bind(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FixtureError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        FixtureError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// The checked-in site pack.
pub fn pack_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("site")
}

/// Served hosts live under here.
pub fn www_dir() -> PathBuf {
    pack_dir().join("www")
}

pub fn tasks_file() -> PathBuf {
    pack_dir().join("tasks.json")
}

pub fn scripts_dir() -> PathBuf {
    pack_dir().join("scripts")
}

pub fn som_dir() -> PathBuf {
    pack_dir().join("som")
}

pub fn manifest_file() -> PathBuf {
    pack_dir().join("manifest.json")
}

pub fn golden_dir() -> PathBuf {
    pack_dir().join("golden")
}

/// Base URLs of the fixture sites. The hosts only resolve inside a
/// [`FixtureBrowser`].
pub fn site_bases() -> BTreeMap<Site, String> {
    BTreeMap::from([
        (Site::Classifieds, "http://classifieds.test/".to_string()),
        (Site::Reddit, "http://reddit.test/".to_string()),
        (Site::Shopping, "http://shopping.test/".to_string()),
    ])
}

/// Resolvers referenced by the fixture tasks.
pub fn fixture_registry() -> ResolverRegistry {
    let mut reg = ResolverRegistry::new();
    reg.register("shopping_get_latest_order_url", |session: &mut SessionHandle, ctx| {
        let base = ctx
            .site_bases
            .get(&Site::Shopping)
            .ok_or("no shopping base URL")?
            .trim_end_matches('/')
            .to_string();
        session.goto(&format!("{base}/orders")).map_err(|e| e.to_string())?;
        let links = session
            .browser()
            .locate("a.order-link", ExtractKind::Text)
            .map_err(|e| e.to_string())?;
        // newest order is listed first
        let first = links.first().ok_or("no orders")?;
        let n = first
            .text
            .trim()
            .strip_prefix("Order #")
            .and_then(|n| n.parse::<u32>().ok())
            .ok_or_else(|| format!("unexpected order link `{}`", first.text))?;
        Ok(format!("{base}/orders/{n}"))
    });
    reg
}

/// Annotator emulation: the fixture browser answers these scripts itself.
pub fn fixture_som_provider() -> ScriptSomProvider {
    ScriptSomProvider {
        annotate_script: ANNOTATE_SCRIPT.to_string(),
        clear_script: CLEAR_SCRIPT.to_string(),
    }
}

/// Manifests recorded from the fixture pages.
pub fn precomputed_som() -> Result<PrecomputedSomProvider, SomError> {
    PrecomputedSomProvider::load_dir(&som_dir())
}

/// Restores server state with `POST /__reset`.
pub fn http_reset_hook(addr: std::net::SocketAddr) -> ResetHook {
    Arc::new(move |_task: &TaskSpec| {
        let url = format!("http://{addr}{RESET_PATH}");
        ureq::post(&url)
            .call()
            .map(|_| ())
            .map_err(|e| format!("reset via {url}: {e}"))
    })
}

enum Backing {
    Shared(Arc<FixtureServer>),
    /// A fresh server per session.
    Isolated(PathBuf),
}

/// Opens fixture browsers for the runner.
pub struct FixtureSessionFactory {
    backing: Backing,
    viewport: Viewport,
    host_log: Option<HostLog>,
}

impl FixtureSessionFactory {
    pub fn shared(server: Arc<FixtureServer>, viewport: Viewport) -> Self {
        Self {
            backing: Backing::Shared(server),
            viewport,
            host_log: None,
        }
    }

    pub fn isolated(root: impl Into<PathBuf>, viewport: Viewport) -> Self {
        Self {
            backing: Backing::Isolated(root.into()),
            viewport,
            host_log: None,
        }
    }

    /// Appends every host any opened browser resolves to `log`.
    pub fn with_host_log(mut self, log: HostLog) -> Self {
        self.host_log = Some(log);
        self
    }
}

impl SessionFactory for FixtureSessionFactory {
    fn open(&self, _task: &TaskSpec) -> Result<SessionHandle, String> {
        let server = match &self.backing {
            Backing::Shared(s) => s.clone(),
            Backing::Isolated(root) => Arc::new(FixtureServer::start(root).map_err(|e| e.to_string())?),
        };
        let browser = FixtureBrowser::with_server(server.clone(), self.viewport, self.host_log.clone());
        Ok(SessionHandle::new(Box::new(browser), format!("fixture://{}", server.addr())))
    }

    fn isolated(&self) -> bool {
        matches!(self.backing, Backing::Isolated(_))
    }
}
