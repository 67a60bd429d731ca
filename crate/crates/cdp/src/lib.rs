//! A [`Browser`](webtask_core::Browser) over the Chrome DevTools protocol.
//!
//! Point it at a browser started with `--remote-debugging-port`; each task
//! gets its own page target.

mod ax;
mod browser;
mod conn;
mod keys;

use thiserror::Error;

use webtask_core::browser::{BrowserError, SessionHandle, SettlePolicy, Viewport};
use webtask_core::runner::SessionFactory;
use webtask_core::task::TaskSpec;

pub use ax::convert_ax_tree;
pub use browser::{discover, CdpBrowser};
pub use keys::key_events;

#[derive(Debug, Error)]
pub enum CdpError {
    #[error("connection: {0}")]
    Socket(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("{method} failed: {message} (code {code})")]
    Remote { method: String, code: i64, message: String },
    #[error("malformed protocol message: {0}")]
    Malformed(String),
    #[error("discovery via {0}: {1}")]
    Discovery(String, String),
}

impl From<CdpError> for BrowserError {
    fn from(e: CdpError) -> Self {
        match e {
            CdpError::Socket(m) => BrowserError::SessionLost(m),
            CdpError::Timeout(m) => BrowserError::Timeout(m),
            e @ CdpError::Remote { .. } => BrowserError::Protocol(e.to_string()),
            CdpError::Malformed(m) => BrowserError::Protocol(m),
            e @ CdpError::Discovery(..) => BrowserError::SessionLost(e.to_string()),
        }
    }
}

/// Opens one connection and page target per task.
#[derive(Debug, Clone)]
pub struct CdpSessionFactory {
    pub endpoint: String,
    pub viewport: Viewport,
    pub settle: SettlePolicy,
}

impl CdpSessionFactory {
    pub fn new(endpoint: impl Into<String>, viewport: Viewport) -> Self {
        Self {
            endpoint: endpoint.into(),
            viewport,
            settle: SettlePolicy::default(),
        }
    }
}

impl SessionFactory for CdpSessionFactory {
    fn open(&self, _task: &TaskSpec) -> Result<SessionHandle, String> {
        let browser = CdpBrowser::connect(&self.endpoint, self.viewport, self.settle).map_err(|e| e.to_string())?;
        Ok(SessionHandle::new(Box::new(browser), self.endpoint.clone()))
    }
}
