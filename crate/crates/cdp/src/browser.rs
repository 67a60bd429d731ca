use std::collections::HashSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};
use webtask_core::action::{KeyCombo, ScrollDirection};
use webtask_core::browser::{
    AxNode, Browser, BrowserError, BrowserResult, ElementTarget, LocatedElement, PageSnapshot, SettlePolicy, TabInfo,
    Viewport,
};
use webtask_core::eval::ExtractKind;
use webtask_core::raster::Raster;

use crate::ax::convert_ax_tree;
use crate::conn::{Connection, Event};
use crate::keys::key_events;
use crate::CdpError;

const OBJECT_GROUP: &str = "webtask";

const RECT_FN: &str = "function(scroll) {
  if (scroll) this.scrollIntoView({block: 'nearest', inline: 'nearest'});
  const r = this.getBoundingClientRect();
  return [r.left, r.top, r.width, r.height, window.scrollX, window.scrollY];
}";

const TEXT_FN: &str = "function() {
  if (this instanceof HTMLInputElement || this instanceof HTMLTextAreaElement || this instanceof HTMLSelectElement) return this.value;
  return this.innerText ?? this.textContent ?? '';
}";

const CLEAR_FN: &str = "function() {
  if (typeof this.value === 'string') {
    this.value = '';
    this.dispatchEvent(new Event('input', {bubbles: true}));
  } else if (this.isContentEditable) {
    this.textContent = '';
  }
}";

struct Tab {
    target_id: String,
    session_id: String,
    loading_frames: HashSet<String>,
    inflight: HashSet<String>,
    pending_dialog: bool,
}

/// A browser driven over the DevTools websocket. Each tab is a page target
/// attached in flattened-session mode.
pub struct CdpBrowser {
    conn: Connection,
    viewport: Viewport,
    settle: SettlePolicy,
    tabs: Vec<Tab>,
    focused: usize,
}

/// Resolves `host:port` to the browser websocket URL; `ws://` URLs pass through.
pub fn discover(endpoint: &str) -> Result<String, CdpError> {
    if endpoint.starts_with("ws://") || endpoint.starts_with("wss://") {
        return Ok(endpoint.to_string());
    }
    let base = endpoint.trim_end_matches('/');
    let base = if base.starts_with("http://") { base.to_string() } else { format!("http://{base}") };
    let url = format!("{base}/json/version");
    let body: Value = ureq::get(&url)
        .timeout(Duration::from_secs(5))
        .call()
        .map_err(|e| CdpError::Discovery(url.clone(), e.to_string()))?
        .into_json()
        .map_err(|e| CdpError::Discovery(url.clone(), e.to_string()))?;
    body.get("webSocketDebuggerUrl")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| CdpError::Discovery(url, "no webSocketDebuggerUrl".into()))
}

impl CdpBrowser {
    /// Connects and opens one blank tab.
    pub fn connect(endpoint: &str, viewport: Viewport, settle: SettlePolicy) -> Result<Self, CdpError> {
        let url = discover(endpoint)?;
        let mut b = Self {
            conn: Connection::open(&url)?,
            viewport,
            settle,
            tabs: Vec::new(),
            focused: 0,
        };
        b.open_tab()?;
        Ok(b)
    }

    fn call(&mut self, method: &str, params: Value) -> Result<Value, CdpError> {
        self.conn.call(None, method, params, self.settle.action_timeout)
    }

    fn page_call(&mut self, method: &str, params: Value) -> Result<Value, CdpError> {
        let session = self.tabs[self.focused].session_id.clone();
        self.conn.call(Some(&session), method, params, self.settle.action_timeout)
    }

    fn open_tab(&mut self) -> Result<(), CdpError> {
        let created = self.call("Target.createTarget", json!({"url": "about:blank"}))?;
        let target_id = created["targetId"]
            .as_str()
            .ok_or_else(|| CdpError::Malformed("createTarget without targetId".into()))?
            .to_string();
        let attached = self.call("Target.attachToTarget", json!({"targetId": target_id, "flatten": true}))?;
        let session_id = attached["sessionId"]
            .as_str()
            .ok_or_else(|| CdpError::Malformed("attachToTarget without sessionId".into()))?
            .to_string();
        self.tabs.push(Tab {
            target_id,
            session_id,
            loading_frames: HashSet::new(),
            inflight: HashSet::new(),
            pending_dialog: false,
        });
        self.focused = self.tabs.len() - 1;
        for domain in ["Page", "Network", "Runtime", "DOM", "Accessibility"] {
            self.page_call(&format!("{domain}.enable"), json!({}))?;
        }
        let Viewport { width, height } = self.viewport;
        self.page_call(
            "Emulation.setDeviceMetricsOverride",
            json!({"width": width, "height": height, "deviceScaleFactor": 1, "mobile": false}),
        )?;
        self.activate()
    }

    fn activate(&mut self) -> Result<(), CdpError> {
        let target = self.tabs[self.focused].target_id.clone();
        self.call("Target.activateTarget", json!({"targetId": target}))?;
        Ok(())
    }

    fn absorb(&mut self, ev: Event) -> bool {
        let Some(tab) = self.tabs.iter_mut().find(|t| Some(&t.session_id) == ev.session.as_ref()) else {
            return false;
        };
        let field = |k: &str| ev.params.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
        match ev.method.as_str() {
            "Page.frameStartedLoading" => {
                tab.loading_frames.insert(field("frameId"));
            }
            "Page.frameStoppedLoading" => {
                tab.loading_frames.remove(&field("frameId"));
            }
            "Network.requestWillBeSent" => {
                tab.inflight.insert(field("requestId"));
            }
            "Network.loadingFinished" | "Network.loadingFailed" => {
                tab.inflight.remove(&field("requestId"));
            }
            "Page.javascriptDialogOpening" => tab.pending_dialog = true,
            "Page.loadEventFired" | "Page.frameNavigated" => {}
            _ => return false,
        }
        true
    }

    /// Waits until the focused tab has no loading frames and the network has
    /// been idle for the configured window.
    fn wait_settled(&mut self) -> Result<(), CdpError> {
        let start = Instant::now();
        let mut quiet_since = Instant::now();
        loop {
            for ev in self.conn.drain_queued() {
                if self.absorb(ev) {
                    quiet_since = Instant::now();
                }
            }
            if self.tabs[self.focused].pending_dialog {
                self.tabs[self.focused].pending_dialog = false;
                self.page_call("Page.handleJavaScriptDialog", json!({"accept": true}))?;
                quiet_since = Instant::now();
                continue;
            }
            let tab = &self.tabs[self.focused];
            let idle = tab.loading_frames.is_empty() && tab.inflight.is_empty();
            if idle && quiet_since.elapsed() >= self.settle.network_idle {
                return Ok(());
            }
            if start.elapsed() >= self.settle.cap {
                return Err(CdpError::Timeout(format!(
                    "page settle after {:?}: {} frame(s) loading, {} request(s) in flight",
                    self.settle.cap,
                    tab.loading_frames.len(),
                    tab.inflight.len()
                )));
            }
            let wait = self.settle.network_idle.min(Duration::from_millis(50));
            if let Some(ev) = self.conn.next_event(wait)? {
                if self.absorb(ev) {
                    quiet_since = Instant::now();
                }
            }
        }
    }

    /// After actions a slow page is logged, not fatal; the next capture decides.
    fn settle_after_action(&mut self) -> BrowserResult<()> {
        match self.wait_settled() {
            Err(CdpError::Timeout(msg)) => {
                tracing::warn!(%msg, "page still busy after action");
                Ok(())
            }
            other => other.map_err(Into::into),
        }
    }

    fn evaluate(&mut self, expression: &str, by_value: bool) -> BrowserResult<Value> {
        let reply = self.page_call(
            "Runtime.evaluate",
            json!({"expression": expression, "returnByValue": by_value, "awaitPromise": true, "objectGroup": OBJECT_GROUP}),
        )?;
        if let Some(ex) = reply.get("exceptionDetails") {
            return Err(BrowserError::ScriptError(exception_text(ex)));
        }
        Ok(reply["result"].clone())
    }

    fn call_on(&mut self, object_id: &str, function: &str, args: &[Value]) -> BrowserResult<Value> {
        let arguments: Vec<Value> = args.iter().map(|a| json!({"value": a})).collect();
        let reply = self.page_call(
            "Runtime.callFunctionOn",
            json!({"objectId": object_id, "functionDeclaration": function, "arguments": arguments,
                   "returnByValue": true, "awaitPromise": true}),
        )?;
        if let Some(ex) = reply.get("exceptionDetails") {
            return Err(BrowserError::ScriptError(exception_text(ex)));
        }
        Ok(reply["result"].get("value").cloned().unwrap_or(Value::Null))
    }

    fn object_for(&mut self, target: &ElementTarget) -> BrowserResult<String> {
        let object = match target {
            ElementTarget::Css(sel) => {
                let sel_json = json!(sel).to_string();
                let expr = format!(
                    "(() => {{ const m = document.querySelectorAll({sel_json}); \
                     if (m.length !== 1) throw new Error(m.length + ' elements match ' + {sel_json}); return m[0]; }})()"
                );
                self.evaluate(&expr, false).map_err(|e| match e {
                    BrowserError::ScriptError(m) => BrowserError::ElementNotFound(m),
                    other => other,
                })?
            }
            ElementTarget::Node(id) => {
                let reply = self
                    .page_call("DOM.resolveNode", json!({"backendNodeId": id, "objectGroup": OBJECT_GROUP}))
                    .map_err(|e| match e {
                        CdpError::Remote { message, .. } => BrowserError::ElementNotFound(format!("node {id}: {message}")),
                        other => other.into(),
                    })?;
                reply["object"].clone()
            }
        };
        object
            .get("objectId")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BrowserError::ElementNotFound(format!("{target} is not an element")))
    }

    /// Viewport rect and scroll offsets: [x, y, w, h, scrollX, scrollY].
    fn rect(&mut self, object_id: &str, scroll: bool, target: &ElementTarget) -> BrowserResult<[f64; 6]> {
        let v = self.call_on(object_id, RECT_FN, &[json!(scroll)])?;
        let nums: Vec<f64> = v.as_array().into_iter().flatten().filter_map(Value::as_f64).collect();
        let r: [f64; 6] = nums
            .try_into()
            .map_err(|_| BrowserError::Protocol(format!("bad rect for {target}: {v}")))?;
        if r[2] <= 0.0 || r[3] <= 0.0 {
            return Err(BrowserError::ElementNotFound(format!("{target} has no visible box")));
        }
        Ok(r)
    }

    fn center(&mut self, target: &ElementTarget) -> BrowserResult<(f64, f64)> {
        let obj = self.object_for(target)?;
        let r = self.rect(&obj, true, target)?;
        Ok((r[0] + r[2] / 2.0, r[1] + r[3] / 2.0))
    }

    fn mouse(&mut self, kind: &str, (x, y): (f64, f64)) -> BrowserResult<()> {
        let mut params = json!({"type": kind, "x": x, "y": y});
        if kind != "mouseMoved" {
            params["button"] = json!("left");
            params["clickCount"] = json!(1);
            params["buttons"] = json!(if kind == "mousePressed" { 1 } else { 0 });
        }
        self.page_call("Input.dispatchMouseEvent", params)?;
        Ok(())
    }

    fn screenshot(&mut self, clip: Option<Value>) -> BrowserResult<Raster> {
        let mut params = json!({"format": "png"});
        if let Some(c) = clip {
            params["clip"] = c;
            params["captureBeyondViewport"] = json!(true);
        }
        let reply = self.page_call("Page.captureScreenshot", params)?;
        let data = reply["data"]
            .as_str()
            .ok_or_else(|| BrowserError::Protocol("screenshot without data".into()))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(data)
            .map_err(|e| BrowserError::Protocol(format!("screenshot base64: {e}")))?;
        Raster::decode(&bytes).map_err(|e| BrowserError::Protocol(format!("screenshot: {e}")))
    }

    fn target_info(&mut self, index: usize) -> BrowserResult<(String, String)> {
        let target = self.tabs[index].target_id.clone();
        let info = self.call("Target.getTargetInfo", json!({"targetId": target}))?;
        let info = &info["targetInfo"];
        Ok((
            info["title"].as_str().unwrap_or_default().to_string(),
            info["url"].as_str().unwrap_or_default().to_string(),
        ))
    }

    fn history_step(&mut self, delta: i64) -> BrowserResult<()> {
        let h = self.page_call("Page.getNavigationHistory", json!({}))?;
        let current = h["currentIndex"].as_i64().unwrap_or(0);
        let entries = h["entries"].as_array().cloned().unwrap_or_default();
        let Some(entry) = usize::try_from(current + delta).ok().and_then(|i| entries.get(i)) else {
            // nothing to go back or forward to; a real browser ignores the button too
            return Ok(());
        };
        self.page_call("Page.navigateToHistoryEntry", json!({"entryId": entry["id"]}))?;
        self.settle_after_action()
    }

    fn release_objects(&mut self) {
        let _ = self.page_call("Runtime.releaseObjectGroup", json!({"objectGroup": OBJECT_GROUP}));
    }
}

fn exception_text(ex: &Value) -> String {
    ex.get("exception")
        .and_then(|e| e.get("description"))
        .and_then(Value::as_str)
        .or_else(|| ex.get("text").and_then(Value::as_str))
        .unwrap_or("script threw")
        .to_string()
}

impl Browser for CdpBrowser {
    fn viewport(&self) -> Viewport {
        self.viewport
    }

    fn goto(&mut self, url: &str) -> BrowserResult<()> {
        let reply = self.page_call("Page.navigate", json!({"url": url}))?;
        if let Some(err) = reply.get("errorText").and_then(Value::as_str) {
            return Err(BrowserError::Navigation(format!("{url}: {err}")));
        }
        self.settle_after_action()
    }

    fn go_back(&mut self) -> BrowserResult<()> {
        self.history_step(-1)
    }

    fn go_forward(&mut self) -> BrowserResult<()> {
        self.history_step(1)
    }

    fn new_tab(&mut self) -> BrowserResult<()> {
        self.open_tab().map_err(Into::into)
    }

    fn focus_tab(&mut self, index: usize) -> BrowserResult<()> {
        if index >= self.tabs.len() {
            return Err(BrowserError::InvalidArgument(format!(
                "tab index {index} out of range ({} tabs)",
                self.tabs.len()
            )));
        }
        self.focused = index;
        self.activate()?;
        self.page_call("Page.bringToFront", json!({}))?;
        Ok(())
    }

    fn close_tab(&mut self) -> BrowserResult<()> {
        let tab = self.tabs.remove(self.focused);
        self.call("Target.closeTarget", json!({"targetId": tab.target_id}))?;
        if self.tabs.is_empty() {
            return self.open_tab().map_err(Into::into);
        }
        self.focused = self.focused.min(self.tabs.len() - 1);
        self.activate().map_err(Into::into)
    }

    fn tabs(&mut self) -> BrowserResult<Vec<TabInfo>> {
        (0..self.tabs.len())
            .map(|i| {
                let (title, url) = self.target_info(i)?;
                Ok(TabInfo {
                    index: i,
                    title,
                    url,
                    focused: i == self.focused,
                })
            })
            .collect()
    }

    fn click(&mut self, target: &ElementTarget) -> BrowserResult<()> {
        let at = self.center(target)?;
        self.mouse("mouseMoved", at)?;
        self.mouse("mousePressed", at)?;
        self.mouse("mouseReleased", at)?;
        self.release_objects();
        self.settle_after_action()
    }

    fn hover(&mut self, target: &ElementTarget) -> BrowserResult<()> {
        let at = self.center(target)?;
        self.mouse("mouseMoved", at)?;
        self.release_objects();
        self.settle_after_action()
    }

    fn type_text(&mut self, target: &ElementTarget, text: &str, press_enter: bool) -> BrowserResult<()> {
        let at = self.center(target)?;
        self.mouse("mouseMoved", at)?;
        self.mouse("mousePressed", at)?;
        self.mouse("mouseReleased", at)?;
        let obj = self.object_for(target)?;
        self.call_on(&obj, CLEAR_FN, &[])?;
        self.release_objects();
        self.page_call("Input.insertText", json!({"text": text}))?;
        if press_enter {
            self.press(&KeyCombo::parse("Enter").map_err(BrowserError::InvalidArgument)?)?;
        }
        self.settle_after_action()
    }

    fn press(&mut self, keys: &KeyCombo) -> BrowserResult<()> {
        for ev in key_events(keys) {
            self.page_call("Input.dispatchKeyEvent", ev)?;
        }
        self.settle_after_action()
    }

    fn scroll(&mut self, direction: ScrollDirection) -> BrowserResult<()> {
        let step = i64::from(self.viewport.scroll_step());
        let dy = match direction {
            ScrollDirection::Up => -step,
            ScrollDirection::Down => step,
        };
        self.evaluate(&format!("window.scrollBy(0, {dy})"), true)?;
        self.settle_after_action()
    }

    fn current_url(&mut self) -> BrowserResult<String> {
        Ok(self.target_info(self.focused)?.1)
    }

    fn snapshot(&mut self) -> BrowserResult<PageSnapshot> {
        self.wait_settled()?;
        let (title, url) = self.target_info(self.focused)?;
        let screenshot = self.screenshot(None)?;
        let Viewport { width, height } = self.viewport;
        if (screenshot.width(), screenshot.height()) != (width, height) {
            return Err(BrowserError::Protocol(format!(
                "screenshot is {}x{}, viewport is {width}x{height}",
                screenshot.width(),
                screenshot.height()
            )));
        }
        let accessibility = if url == "about:blank" {
            AxNode::new(0, "", "")
        } else {
            let tree = self.page_call("Accessibility.getFullAXTree", json!({}))?;
            let nodes = tree["nodes"].as_array().cloned().unwrap_or_default();
            convert_ax_tree(&nodes)?
        };
        Ok(PageSnapshot {
            url,
            title,
            screenshot: Arc::new(screenshot),
            accessibility,
        })
    }

    fn execute_script(&mut self, source: &str, args: &[Value]) -> BrowserResult<Value> {
        let expr = format!("(function() {{\n{source}\n}}).apply(null, {})", Value::from(args.to_vec()));
        let result = self.evaluate(&expr, true)?;
        Ok(result.get("value").cloned().unwrap_or(Value::Null))
    }

    fn locate(&mut self, selector: &str, extract: ExtractKind) -> BrowserResult<Vec<LocatedElement>> {
        let expr = format!("Array.from(document.querySelectorAll({}))", json!(selector));
        let array = self.evaluate(&expr, false).map_err(|e| match e {
            BrowserError::ScriptError(m) => BrowserError::InvalidArgument(m),
            other => other,
        })?;
        let array_id = array["objectId"]
            .as_str()
            .ok_or_else(|| BrowserError::Protocol("querySelectorAll gave no array".into()))?
            .to_string();
        let props = self.page_call("Runtime.getProperties", json!({"objectId": array_id, "ownProperties": true}))?;
        let mut items: Vec<(usize, String)> = props["result"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|p| {
                let index = p["name"].as_str()?.parse().ok()?;
                Some((index, p["value"]["objectId"].as_str()?.to_string()))
            })
            .collect();
        items.sort();
        let mut out = Vec::with_capacity(items.len());
        for (_, obj) in items {
            let text = self.call_on(&obj, TEXT_FN, &[])?.as_str().unwrap_or_default().to_string();
            let image = match extract {
                ExtractKind::Text => None,
                ExtractKind::Image => Some(self.object_image(&obj, &ElementTarget::Css(selector.to_string()))?),
            };
            out.push(LocatedElement { text, image });
        }
        self.release_objects();
        Ok(out)
    }

    fn element_image(&mut self, target: &ElementTarget) -> BrowserResult<Raster> {
        let obj = self.object_for(target)?;
        let img = self.object_image(&obj, target);
        self.release_objects();
        img
    }

    fn close(&mut self) -> BrowserResult<()> {
        for tab in std::mem::take(&mut self.tabs) {
            let _ = self.call("Target.closeTarget", json!({"targetId": tab.target_id}));
        }
        self.conn.close();
        Ok(())
    }
}

impl CdpBrowser {
    /// Element pixels in page coordinates, without scrolling the page.
    fn object_image(&mut self, object_id: &str, target: &ElementTarget) -> BrowserResult<Raster> {
        let r = self.rect(object_id, false, target)?;
        let clip = json!({"x": r[0] + r[4], "y": r[1] + r[5], "width": r[2], "height": r[3], "scale": 1});
        self.screenshot(Some(clip))
    }
}
