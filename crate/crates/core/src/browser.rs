//! Browser control surface and the action executor.
//!
//! [`Browser`] is implemented by a wire-protocol driver for real browsers and
//! by the in-process fixture browser. [`SessionHandle`] owns one browser and
//! serializes every action and capture made through it.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{KeyCombo, ParsedAction, ScrollDirection};
use crate::eval::ExtractKind;
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum BrowserError {
    #[error("element not found: {0}")]
    ElementNotFound(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("session lost: {0}")]
    SessionLost(String),
    #[error("script error: {0}")]
    ScriptError(String),
    #[error("navigation failed: {0}")]
    Navigation(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl BrowserError {
    /// Errors after which the session cannot be used any more.
    pub fn is_fatal(&self) -> bool {
        matches!(self, BrowserError::SessionLost(_))
    }
}

pub type BrowserResult<T> = Result<T, BrowserError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Viewport {
    pub width: u32,
    pub height: u32,
}

impl Viewport {
    pub const DEFAULT: Viewport = Viewport {
        width: 1280,
        height: 2048,
    };
    /// Profile for short-context backends.
    pub const SHORT: Viewport = Viewport {
        width: 1280,
        height: 720,
    };

    /// Parses `WxH`.
    pub fn parse(raw: &str) -> Result<Self, String> {
        let (w, h) = raw
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("viewport `{raw}` is not WxH"))?;
        let width: u32 = w.trim().parse().map_err(|_| format!("bad width in `{raw}`"))?;
        let height: u32 = h.trim().parse().map_err(|_| format!("bad height in `{raw}`"))?;
        if width == 0 || height == 0 {
            return Err("viewport dimensions must be positive".into());
        }
        Ok(Self { width, height })
    }

    /// Pixels moved by one scroll action: 75% of the viewport height.
    pub fn scroll_step(&self) -> u32 {
        self.height * 3 / 4
    }
}

impl Default for Viewport {
    fn default() -> Self {
        Viewport::DEFAULT
    }
}

impl fmt::Display for Viewport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// When a page counts as settled before an observation is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SettlePolicy {
    pub network_idle: Duration,
    pub cap: Duration,
    pub action_timeout: Duration,
}

impl Default for SettlePolicy {
    fn default() -> Self {
        Self {
            network_idle: Duration::from_millis(500),
            cap: Duration::from_secs(10),
            action_timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabInfo {
    pub index: usize,
    pub title: String,
    pub url: String,
    pub focused: bool,
}

/// How a browser implementation addresses one element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementTarget {
    /// CSS selector matching exactly one element.
    Css(String),
    /// Protocol-level backend node id.
    Node(i64),
}

impl fmt::Display for ElementTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementTarget::Css(s) => f.write_str(s),
            ElementTarget::Node(n) => write!(f, "node:{n}"),
        }
    }
}

/// One accessibility-tree node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxNode {
    pub node_id: u64,
    pub role: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub properties: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub ignored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ElementTarget>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<AxNode>,
}

impl AxNode {
    pub fn new(node_id: u64, role: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            node_id,
            role: role.into(),
            name: name.into(),
            properties: BTreeMap::new(),
            ignored: false,
            target: None,
            children: Vec::new(),
        }
    }

    /// Pre-order walk.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a AxNode, usize)) {
        fn go<'a>(n: &'a AxNode, depth: usize, f: &mut dyn FnMut(&'a AxNode, usize)) {
            f(n, depth);
            for c in &n.children {
                go(c, depth + 1, f);
            }
        }
        go(self, 0, f);
    }

    pub fn count_role(&self, role: &str) -> usize {
        let mut n = 0;
        self.walk(&mut |node, _| {
            if !node.ignored && node.role == role {
                n += 1;
            }
        });
        n
    }

    pub fn find(&self, node_id: u64) -> Option<&AxNode> {
        if self.node_id == node_id {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(node_id))
    }

    pub fn find_mut(&mut self, node_id: u64) -> Option<&mut AxNode> {
        if self.node_id == node_id {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.find_mut(node_id))
    }
}

/// URL, title, screenshot, and accessibility tree from one settled page.
#[derive(Debug, Clone)]
pub struct PageSnapshot {
    pub url: String,
    pub title: String,
    pub screenshot: Arc<Raster>,
    pub accessibility: AxNode,
}

/// Content pulled out of the page by an evaluator locator.
#[derive(Debug, Clone)]
pub struct LocatedElement {
    pub text: String,
    pub image: Option<Raster>,
}

pub trait Browser: Send {
    fn viewport(&self) -> Viewport;
    fn goto(&mut self, url: &str) -> BrowserResult<()>;
    fn go_back(&mut self) -> BrowserResult<()>;
    fn go_forward(&mut self) -> BrowserResult<()>;
    /// Opens an empty tab and focuses it.
    fn new_tab(&mut self) -> BrowserResult<()>;
    fn focus_tab(&mut self, index: usize) -> BrowserResult<()>;
    /// Closes the focused tab. Closing the last tab leaves one blank tab.
    fn close_tab(&mut self) -> BrowserResult<()>;
    fn tabs(&mut self) -> BrowserResult<Vec<TabInfo>>;
    fn click(&mut self, target: &ElementTarget) -> BrowserResult<()>;
    fn hover(&mut self, target: &ElementTarget) -> BrowserResult<()>;
    fn type_text(&mut self, target: &ElementTarget, text: &str, press_enter: bool) -> BrowserResult<()>;
    fn press(&mut self, keys: &KeyCombo) -> BrowserResult<()>;
    fn scroll(&mut self, direction: ScrollDirection) -> BrowserResult<()>;
    fn current_url(&mut self) -> BrowserResult<String>;
    fn snapshot(&mut self) -> BrowserResult<PageSnapshot>;
    fn execute_script(
        &mut self,
        source: &str,
        args: &[serde_json::Value],
    ) -> BrowserResult<serde_json::Value>;
    /// All elements matching a CSS selector, in document order.
    fn locate(&mut self, selector: &str, extract: ExtractKind) -> BrowserResult<Vec<LocatedElement>>;
    /// Pixels of an image element.
    fn element_image(&mut self, target: &ElementTarget) -> BrowserResult<Raster>;
    fn close(&mut self) -> BrowserResult<()> {
        Ok(())
    }
}

/// Maps observation element ids to browser targets.
pub trait ElementResolver {
    fn resolve(&self, id: u64) -> Option<ElementTarget>;
}

impl ElementResolver for BTreeMap<u64, ElementTarget> {
    fn resolve(&self, id: u64) -> Option<ElementTarget> {
        self.get(&id).cloned()
    }
}

/// Outcome of one executed action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "answer", rename_all = "snake_case")]
pub enum Transition {
    Ok,
    Terminal(String),
}

/// A single-owner browser session.
pub struct SessionHandle {
    browser: Box<dyn Browser>,
    endpoint: String,
}

impl fmt::Debug for SessionHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionHandle")
            .field("endpoint", &self.endpoint)
            .field("viewport", &self.browser.viewport())
            .finish()
    }
}

impl SessionHandle {
    pub fn new(browser: Box<dyn Browser>, endpoint: impl Into<String>) -> Self {
        Self {
            browser,
            endpoint: endpoint.into(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn viewport(&self) -> Viewport {
        self.browser.viewport()
    }

    pub fn browser(&mut self) -> &mut dyn Browser {
        self.browser.as_mut()
    }

    pub fn tabs(&mut self) -> BrowserResult<Vec<TabInfo>> {
        self.browser.tabs()
    }

    pub fn focused_tab(&mut self) -> BrowserResult<usize> {
        let tabs = self.browser.tabs()?;
        tabs.iter()
            .find(|t| t.focused)
            .map(|t| t.index)
            .ok_or_else(|| BrowserError::Protocol("no focused tab".into()))
    }

    pub fn current_url(&mut self) -> BrowserResult<String> {
        self.browser.current_url()
    }

    pub fn goto(&mut self, url: &str) -> BrowserResult<()> {
        self.browser.goto(url)
    }

    pub fn capture_snapshot(&mut self) -> BrowserResult<PageSnapshot> {
        self.browser.snapshot()
    }

    pub fn execute_script(
        &mut self,
        source: &str,
        args: &[serde_json::Value],
    ) -> BrowserResult<serde_json::Value> {
        self.browser.execute_script(source, args)
    }

    pub fn close(&mut self) -> BrowserResult<()> {
        self.browser.close()
    }

    /// Runs one action against the focused tab.
    pub fn execute_action(
        &mut self,
        action: &ParsedAction,
        resolver: &dyn ElementResolver,
    ) -> BrowserResult<Transition> {
        let target = |id: u64| {
            resolver
                .resolve(id)
                .ok_or_else(|| BrowserError::ElementNotFound(format!("no element with id {id}")))
        };
        let b = self.browser.as_mut();
        match action {
            ParsedAction::Click { id } => b.click(&target(*id)?)?,
            ParsedAction::Hover { id } => b.hover(&target(*id)?)?,
            ParsedAction::Type {
                id,
                text,
                press_enter,
            } => b.type_text(&target(*id)?, text, *press_enter)?,
            ParsedAction::Press { keys } => b.press(keys)?,
            ParsedAction::Scroll { direction } => b.scroll(*direction)?,
            ParsedAction::NewTab => b.new_tab()?,
            ParsedAction::TabFocus { index } => {
                let count = b.tabs()?.len();
                if *index >= count {
                    return Err(BrowserError::InvalidArgument(format!(
                        "tab index {index} out of range ({count} tabs)"
                    )));
                }
                b.focus_tab(*index)?
            }
            ParsedAction::TabClose => b.close_tab()?,
            ParsedAction::Goto { url } => b.goto(url)?,
            ParsedAction::GoBack => b.go_back()?,
            ParsedAction::GoForward => b.go_forward()?,
            ParsedAction::Stop { answer } => return Ok(Transition::Terminal(answer.clone())),
        }
        Ok(Transition::Ok)
    }
}
