//! An in-process [`Browser`] over the fixture server.
//!
//! Pages are fetched with a plain HTTP client whose resolver only knows the
//! fixture hosts, so nothing can leave the machine. Layout and painting are
//! done by [`crate::layout`]; scripts are limited to the annotator markers
//! and a few literal expressions.

use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::Value;
use url::Url;

use webtask_core::action::{KeyCombo, ScrollDirection};
use webtask_core::browser::{
    Browser, BrowserError, BrowserResult, ElementTarget, LocatedElement, PageSnapshot, TabInfo, Viewport,
};
use webtask_core::eval::ExtractKind;
use webtask_core::raster::Raster;
use webtask_core::som::draw_marks;

use crate::dom::Dom;
use crate::server::FixtureServer;
use crate::layout::{control_value, layout, paint, selected_option, Layout};
use crate::page::{accessibility_tree, input_kind, som_manifest, Page};

/// Script text the fixture browser treats as the mark annotator.
pub const ANNOTATE_SCRIPT: &str = "/* webtask fixture annotator: annotate */";
/// Script text the fixture browser treats as overlay removal.
pub const CLEAR_SCRIPT: &str = "/* webtask fixture annotator: clear */";

const REQUEST_TIMEOUT: Duration = Duration::from_secs(10);

/// Every host the browser tried to resolve, in order.
pub type HostLog = Arc<Mutex<Vec<String>>>;

#[derive(Debug, Clone)]
struct Tab {
    history: Vec<String>,
    pos: usize,
    page: Page,
}

impl Tab {
    fn blank() -> Self {
        Self {
            history: vec!["about:blank".into()],
            pos: 0,
            page: Page::blank(),
        }
    }
}

pub struct FixtureBrowser {
    agent: ureq::Agent,
    viewport: Viewport,
    tabs: Vec<Tab>,
    focused: usize,
    images: HashMap<String, Option<Arc<Raster>>>,
    host_log: HostLog,
    _server: Option<Arc<FixtureServer>>,
}

impl std::fmt::Debug for FixtureBrowser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FixtureBrowser")
            .field("viewport", &self.viewport)
            .field("tabs", &self.tabs.len())
            .field("focused", &self.focused)
            .finish()
    }
}

enum Method {
    Get,
    Post(String),
}

fn nav_err(e: impl std::fmt::Display) -> BrowserError {
    BrowserError::Navigation(e.to_string())
}

impl FixtureBrowser {
    /// `hosts` resolve to `server`; loopback addresses resolve normally;
    /// every other name fails to resolve.
    pub fn new(server: SocketAddr, hosts: &[String], viewport: Viewport) -> Self {
        Self::build(server, hosts, viewport, HostLog::default(), None)
    }

    /// A browser over a running server, which it keeps alive. Resolved hosts
    /// are appended to `log` when given.
    pub fn with_server(server: Arc<FixtureServer>, viewport: Viewport, log: Option<HostLog>) -> Self {
        let addr = server.addr();
        let hosts = server.hosts().to_vec();
        Self::build(addr, &hosts, viewport, log.unwrap_or_default(), Some(server))
    }

    fn build(
        server: SocketAddr,
        hosts: &[String],
        viewport: Viewport,
        host_log: HostLog,
        keepalive: Option<Arc<FixtureServer>>,
    ) -> Self {
        let log = host_log.clone();
        let hosts: Vec<String> = hosts.to_vec();
        let resolver = move |netloc: &str| -> io::Result<Vec<SocketAddr>> {
            let host = netloc.rsplit_once(':').map(|(h, _)| h).unwrap_or(netloc);
            log.lock().expect("host log").push(host.to_string());
            if hosts.iter().any(|h| h == host) {
                return Ok(vec![server]);
            }
            if matches!(host, "127.0.0.1" | "localhost" | "[::1]") {
                return netloc.to_socket_addrs().map(|a| a.collect());
            }
            Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("{host} is not a fixture host"),
            ))
        };
        let agent = ureq::AgentBuilder::new()
            .resolver(resolver)
            .timeout(REQUEST_TIMEOUT)
            .redirects(5)
            .build();
        Self {
            agent,
            viewport,
            tabs: vec![Tab::blank()],
            focused: 0,
            images: HashMap::new(),
            host_log,
            _server: keepalive,
        }
    }

    pub fn host_log(&self) -> HostLog {
        self.host_log.clone()
    }

    /// Vertical scroll offset of the focused tab, in pixels.
    pub fn scroll_offset(&self) -> i64 {
        self.page().scroll_y
    }

    fn page(&self) -> &Page {
        &self.tabs[self.focused].page
    }

    fn page_mut(&mut self) -> &mut Page {
        &mut self.tabs[self.focused].page
    }

    fn fetch(&self, url: &str, method: &Method) -> BrowserResult<(String, String, Vec<u8>)> {
        let result = match method {
            Method::Get => self.agent.get(url).call(),
            Method::Post(body) => self
                .agent
                .post(url)
                .set("Content-Type", "application/x-www-form-urlencoded")
                .send_bytes(body.as_bytes()),
        };
        let resp = match result {
            Ok(r) => r,
            // error pages still render
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => return Err(nav_err(format!("{url}: {e}"))),
        };
        let final_url = resp.get_url().to_string();
        let content_type = resp.content_type().to_string();
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(&mut resp.into_reader(), &mut bytes).map_err(nav_err)?;
        Ok((final_url, content_type, bytes))
    }

    fn load(&self, url: &str, method: Method) -> BrowserResult<Page> {
        if url == "about:blank" {
            return Ok(Page::blank());
        }
        let parsed = Url::parse(url).map_err(|e| nav_err(format!("{url}: {e}")))?;
        if parsed.scheme() != "http" {
            return Err(nav_err(format!("unsupported scheme in {url}")));
        }
        let (final_url, content_type, bytes) = self.fetch(parsed.as_str(), &method)?;
        let html = if content_type.starts_with("text/html") {
            String::from_utf8_lossy(&bytes).into_owned()
        } else if content_type.starts_with("image/") {
            format!("<html><head><title></title></head><body><img src=\"{final_url}\"></body></html>")
        } else {
            format!(
                "<html><head><title></title></head><body><pre>{}</pre></body></html>",
                crate::server::escape_html(&String::from_utf8_lossy(&bytes))
            )
        };
        tracing::trace!(url = %final_url, "loaded");
        Ok(Page::new(final_url, Dom::parse(&html)))
    }

    /// Loads `url` into the focused tab as a new history entry.
    fn navigate(&mut self, url: &str, method: Method) -> BrowserResult<()> {
        let page = self.load(url, method)?;
        let tab = &mut self.tabs[self.focused];
        tab.history.truncate(tab.pos + 1);
        tab.history.push(page.url.clone());
        tab.pos = tab.history.len() - 1;
        tab.page = page;
        Ok(())
    }

    fn traverse(&mut self, delta: isize) -> BrowserResult<()> {
        let tab = &self.tabs[self.focused];
        let Some(pos) = tab.pos.checked_add_signed(delta).filter(|p| *p < tab.history.len()) else {
            return Ok(());
        };
        let page = self.load(&tab.history[pos].clone(), Method::Get)?;
        let tab = &mut self.tabs[self.focused];
        tab.pos = pos;
        tab.page = page;
        Ok(())
    }

    fn absolute(&self, href: &str) -> BrowserResult<String> {
        let base = Url::parse(&self.page().url).map_err(nav_err)?;
        base.join(href).map(|u| u.to_string()).map_err(nav_err)
    }

    fn resolve(&self, target: &ElementTarget) -> BrowserResult<usize> {
        let dom = &self.page().dom;
        match target {
            ElementTarget::Node(n) => usize::try_from(*n)
                .ok()
                .filter(|n| *n < dom.nodes.len() && dom.tag(*n).is_some())
                .ok_or_else(|| BrowserError::ElementNotFound(format!("node:{n}"))),
            ElementTarget::Css(sel) => {
                let hits = dom.select(sel).map_err(BrowserError::InvalidArgument)?;
                match hits.as_slice() {
                    [n] => Ok(*n),
                    [] => Err(BrowserError::ElementNotFound(sel.clone())),
                    _ => Err(BrowserError::ElementNotFound(format!("{sel} matches {} elements", hits.len()))),
                }
            }
        }
    }

    fn image(&mut self, page_url: &str, src: &str) -> Option<Arc<Raster>> {
        load_image(&self.agent, &mut self.images, page_url, src)
    }

    fn ensure_layout(&mut self) -> Arc<Layout> {
        let width = self.viewport.width;
        let tab = &mut self.tabs[self.focused];
        if let Some(l) = &tab.page.layout {
            return l.clone();
        }
        let (agent, images) = (&self.agent, &mut self.images);
        let page_url = tab.page.url.clone();
        let mut size = |src: &str| load_image(agent, images, &page_url, src).map(|r| (r.width(), r.height()));
        let l = Arc::new(layout(&tab.page.dom, width, &tab.page.values, &mut size));
        tab.page.layout = Some(l.clone());
        l
    }

    fn render(&mut self) -> Raster {
        let l = self.ensure_layout();
        let Viewport { width, height } = self.viewport;
        let page_url = self.page().url.clone();
        let scroll = self.page().scroll_y;
        let (agent, images) = (&self.agent, &mut self.images);
        let mut fetch = |src: &str| load_image(agent, images, &page_url, src);
        let mut raster = paint(&l, width, height, scroll, &mut fetch);
        if let Some(overlay) = &self.page().overlay {
            draw_marks(&mut raster, overlay);
        }
        raster
    }

    fn set_value(&mut self, n: usize, value: String) {
        let page = self.page_mut();
        page.values.insert(n, value);
        page.layout = None;
    }

    fn form_of(&self, n: usize) -> Option<usize> {
        let dom = &self.page().dom;
        dom.self_and_ancestors(n).find(|a| dom.tag(*a) == Some("form"))
    }

    fn submit(&mut self, form: usize, submitter: Option<usize>) -> BrowserResult<()> {
        let page = self.page();
        let dom = page.dom.clone();
        let mut fields: Vec<(String, String)> = Vec::new();
        for n in dom.descendants(form) {
            let Some(name) = dom.attr(n, "name") else { continue };
            if dom.attr(n, "disabled").is_some() {
                continue;
            }
            match dom.tag(n) {
                Some("input") => match input_kind(&dom, n).as_str() {
                    "submit" | "button" | "reset" | "image" => {
                        if Some(n) == submitter {
                            fields.push((name.into(), dom.attr(n, "value").unwrap_or("").into()));
                        }
                    }
                    "checkbox" | "radio" => {
                        let on = page.values.get(&n).map(|v| v == "on").unwrap_or(dom.attr(n, "checked").is_some());
                        if on {
                            fields.push((name.into(), dom.attr(n, "value").unwrap_or("on").into()));
                        }
                    }
                    _ => fields.push((name.into(), control_value(&dom, n, &page.values))),
                },
                Some("textarea") => fields.push((name.into(), control_value(&dom, n, &page.values))),
                Some("select") => {
                    let v = match page.values.get(&n) {
                        Some(v) => v.clone(),
                        None => selected_option(&dom, n)
                            .map(|o| dom.attr(o, "value").map(str::to_string).unwrap_or_else(|| dom.text_content(o)))
                            .unwrap_or_default(),
                    };
                    fields.push((name.into(), v));
                }
                Some("button") if Some(n) == submitter => {
                    fields.push((name.into(), dom.attr(n, "value").unwrap_or("").into()));
                }
                _ => {}
            }
        }
        let action = dom.attr(form, "action").unwrap_or("").to_string();
        let mut target = Url::parse(&self.absolute(&action)?).map_err(nav_err)?;
        let encoded = url::form_urlencoded::Serializer::new(String::new())
            .extend_pairs(&fields)
            .finish();
        let post = dom.attr(form, "method").is_some_and(|m| m.eq_ignore_ascii_case("post"));
        if post {
            self.navigate(target.as_str(), Method::Post(encoded))
        } else {
            target.set_query(Some(&encoded));
            target.set_fragment(None);
            self.navigate(target.as_str(), Method::Get)
        }
    }

    fn is_text_entry(dom: &Dom, n: usize) -> bool {
        match dom.tag(n) {
            Some("textarea") => true,
            Some("input") => !matches!(
                input_kind(dom, n).as_str(),
                "submit" | "button" | "reset" | "image" | "checkbox" | "radio" | "hidden"
            ),
            _ => false,
        }
    }

    fn press_enter(&mut self) -> BrowserResult<()> {
        let Some(n) = self.page().focus else { return Ok(()) };
        let dom = self.page().dom.clone();
        if dom.tag(n) == Some("textarea") {
            let v = control_value(&dom, n, &self.page().values) + "\n";
            self.set_value(n, v);
            return Ok(());
        }
        if dom.tag(n) == Some("a") {
            return self.click(&ElementTarget::Node(n as i64));
        }
        match self.form_of(n) {
            Some(form) if Self::is_text_entry(&dom, n) || dom.tag(n) == Some("select") => self.submit(form, None),
            Some(_) if matches!(dom.tag(n), Some("button") | Some("input")) => self.click(&ElementTarget::Node(n as i64)),
            _ => Ok(()),
        }
    }

    fn scroll_by(&mut self, dy: i64) {
        let l = self.ensure_layout();
        let max = (l.height - self.viewport.height as i64).max(0);
        let page = self.page_mut();
        page.scroll_y = (page.scroll_y + dy).clamp(0, max);
    }

    fn eval_literal(&mut self, source: &str) -> BrowserResult<Value> {
        let body = source.trim().trim_end_matches(';').trim();
        let expr = body.strip_prefix("return").map(str::trim).unwrap_or(body);
        match expr {
            "window.scrollY" | "window.pageYOffset" | "document.scrollingElement.scrollTop" => {
                return Ok(Value::from(self.page().scroll_y))
            }
            "document.title" => return Ok(Value::from(self.page().dom.title())),
            "location.href" | "window.location.href" | "document.URL" => return Ok(Value::from(self.page().url.clone())),
            _ => {}
        }
        serde_json::from_str(expr).map_err(|e| BrowserError::ScriptError(format!("cannot evaluate `{expr}`: {e}")))
    }
}

fn load_image(
    agent: &ureq::Agent,
    cache: &mut HashMap<String, Option<Arc<Raster>>>,
    page_url: &str,
    src: &str,
) -> Option<Arc<Raster>> {
    let url = Url::parse(page_url).ok()?.join(src).ok()?.to_string();
    if let Some(hit) = cache.get(&url) {
        return hit.clone();
    }
    let fetched = (|| {
        let resp = agent.get(&url).call().ok()?;
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(&mut resp.into_reader(), &mut bytes).ok()?;
        Raster::decode(&bytes).ok().map(Arc::new)
    })();
    if fetched.is_none() {
        tracing::debug!(%url, "image unavailable");
    }
    cache.insert(url, fetched.clone());
    fetched
}

impl Browser for FixtureBrowser {
    fn viewport(&self) -> Viewport {
        self.viewport
    }

    fn goto(&mut self, url: &str) -> BrowserResult<()> {
        self.navigate(url.trim(), Method::Get)
    }

    fn go_back(&mut self) -> BrowserResult<()> {
        self.traverse(-1)
    }

    fn go_forward(&mut self) -> BrowserResult<()> {
        self.traverse(1)
    }

    fn new_tab(&mut self) -> BrowserResult<()> {
        self.tabs.push(Tab::blank());
        self.focused = self.tabs.len() - 1;
        Ok(())
    }

    fn focus_tab(&mut self, index: usize) -> BrowserResult<()> {
        if index >= self.tabs.len() {
            return Err(BrowserError::InvalidArgument(format!(
                "tab index {index} out of range ({} tabs)",
                self.tabs.len()
            )));
        }
        self.focused = index;
        Ok(())
    }

    fn close_tab(&mut self) -> BrowserResult<()> {
        self.tabs.remove(self.focused);
        if self.tabs.is_empty() {
            self.tabs.push(Tab::blank());
        }
        self.focused = self.focused.min(self.tabs.len() - 1);
        Ok(())
    }

    fn tabs(&mut self) -> BrowserResult<Vec<TabInfo>> {
        Ok(self
            .tabs
            .iter()
            .enumerate()
            .map(|(index, t)| TabInfo {
                index,
                title: t.page.dom.title(),
                url: t.page.url.clone(),
                focused: index == self.focused,
            })
            .collect())
    }

    fn click(&mut self, target: &ElementTarget) -> BrowserResult<()> {
        let n = self.resolve(target)?;
        let dom = self.page().dom.clone();
        if dom.is_hidden(n) {
            return Err(BrowserError::ElementNotFound(format!("{target} is not visible")));
        }
        self.page_mut().focus = Some(n);
        if let Some(a) = dom
            .self_and_ancestors(n)
            .find(|a| dom.tag(*a) == Some("a") && dom.attr(*a, "href").is_some())
        {
            let href = self.absolute(dom.attr(a, "href").unwrap_or(""))?;
            if dom.attr(a, "target") == Some("_blank") {
                self.new_tab()?;
            }
            return self.navigate(&href, Method::Get);
        }
        match dom.tag(n) {
            Some("button") => {
                let kind = dom.attr(n, "type").unwrap_or("submit").to_ascii_lowercase();
                if kind == "submit" {
                    if let Some(form) = self.form_of(n) {
                        return self.submit(form, Some(n));
                    }
                }
            }
            Some("input") => match input_kind(&dom, n).as_str() {
                "submit" | "image" => {
                    if let Some(form) = self.form_of(n) {
                        return self.submit(form, Some(n));
                    }
                }
                "checkbox" => {
                    let on = self
                        .page()
                        .values
                        .get(&n)
                        .map(|v| v == "on")
                        .unwrap_or(dom.attr(n, "checked").is_some());
                    self.set_value(n, if on { "off" } else { "on" }.into());
                }
                "radio" => {
                    if let (Some(form), Some(name)) = (self.form_of(n), dom.attr(n, "name")) {
                        for other in dom.descendants(form) {
                            if other != n && dom.attr(other, "name") == Some(name) && input_kind(&dom, other) == "radio" {
                                self.set_value(other, "off".into());
                            }
                        }
                    }
                    self.set_value(n, "on".into());
                }
                _ => {}
            },
            Some("label") => {
                if let Some(id) = dom.attr(n, "for") {
                    let hit = (0..dom.nodes.len()).find(|m| dom.attr(*m, "id") == Some(id));
                    self.page_mut().focus = hit;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn hover(&mut self, target: &ElementTarget) -> BrowserResult<()> {
        let n = self.resolve(target)?;
        self.page_mut().hover = Some(n);
        Ok(())
    }

    fn type_text(&mut self, target: &ElementTarget, text: &str, press_enter: bool) -> BrowserResult<()> {
        let n = self.resolve(target)?;
        let dom = self.page().dom.clone();
        if dom.tag(n) == Some("select") {
            let wanted = text.trim();
            let option = dom
                .descendants(n)
                .into_iter()
                .filter(|o| dom.tag(*o) == Some("option"))
                .find(|o| {
                    dom.text_content(*o).eq_ignore_ascii_case(wanted)
                        || dom.attr(*o, "value").is_some_and(|v| v.eq_ignore_ascii_case(wanted))
                })
                .ok_or_else(|| BrowserError::InvalidArgument(format!("no option `{wanted}` in {target}")))?;
            let value = dom.attr(option, "value").map(str::to_string).unwrap_or_else(|| dom.text_content(option));
            self.set_value(n, value);
        } else if Self::is_text_entry(&dom, n) {
            // typing replaces the field's current contents
            self.set_value(n, text.to_string());
        } else {
            return Err(BrowserError::InvalidArgument(format!("{target} does not accept text")));
        }
        self.page_mut().focus = Some(n);
        if press_enter {
            self.press_enter()?;
        }
        Ok(())
    }

    fn press(&mut self, keys: &KeyCombo) -> BrowserResult<()> {
        let step = self.viewport.scroll_step() as i64;
        match (keys.modifiers(), keys.key()) {
            ([], "Enter") => self.press_enter()?,
            ([], "PageDown") | ([], "Space") => self.scroll_by(step),
            ([], "PageUp") => self.scroll_by(-step),
            ([], "End") => self.scroll_by(i64::MAX / 2),
            ([], "Home") => self.scroll_by(i64::MIN / 2),
            (["Alt"], "ArrowLeft") => self.go_back()?,
            (["Alt"], "ArrowRight") => self.go_forward()?,
            ([], "Backspace") => {
                if let Some(n) = self.page().focus.filter(|n| Self::is_text_entry(&self.page().dom, *n)) {
                    let mut v = control_value(&self.page().dom, n, &self.page().values);
                    v.pop();
                    self.set_value(n, v);
                }
            }
            _ => tracing::debug!(?keys, "key has no effect on fixture pages"),
        }
        Ok(())
    }

    fn scroll(&mut self, direction: ScrollDirection) -> BrowserResult<()> {
        let step = self.viewport.scroll_step() as i64;
        match direction {
            ScrollDirection::Down => self.scroll_by(step),
            ScrollDirection::Up => self.scroll_by(-step),
        }
        Ok(())
    }

    fn current_url(&mut self) -> BrowserResult<String> {
        Ok(self.page().url.clone())
    }

    fn snapshot(&mut self) -> BrowserResult<PageSnapshot> {
        let screenshot = Arc::new(self.render());
        let l = self.ensure_layout();
        let page = self.page();
        Ok(PageSnapshot {
            url: page.url.clone(),
            title: page.dom.title(),
            screenshot,
            accessibility: accessibility_tree(page, &l),
        })
    }

    fn execute_script(&mut self, source: &str, _args: &[Value]) -> BrowserResult<Value> {
        match source.trim() {
            ANNOTATE_SCRIPT => {
                let l = self.ensure_layout();
                let manifest = som_manifest(self.page(), &l, self.viewport);
                let value = manifest.to_script_value();
                // a second annotation replaces the first
                self.page_mut().overlay = Some(manifest);
                Ok(value)
            }
            CLEAR_SCRIPT => {
                self.page_mut().overlay = None;
                Ok(Value::Null)
            }
            other => self.eval_literal(other),
        }
    }

    fn locate(&mut self, selector: &str, extract: ExtractKind) -> BrowserResult<Vec<LocatedElement>> {
        let page = self.page().clone();
        let hits = page.dom.select(selector).map_err(BrowserError::InvalidArgument)?;
        let mut out = Vec::with_capacity(hits.len());
        for n in hits {
            let text = match page.dom.tag(n) {
                Some("input") | Some("textarea") | Some("select") => control_value(&page.dom, n, &page.values),
                _ => page.dom.text_content(n),
            };
            let image = match extract {
                ExtractKind::Text => None,
                ExtractKind::Image => Some(self.element_image(&ElementTarget::Node(n as i64))?),
            };
            out.push(LocatedElement { text, image });
        }
        Ok(out)
    }

    fn element_image(&mut self, target: &ElementTarget) -> BrowserResult<Raster> {
        let n = self.resolve(target)?;
        let page_url = self.page().url.clone();
        let dom = self.page().dom.clone();
        if dom.tag(n) == Some("img") {
            let src = dom.attr(n, "src").unwrap_or("").to_string();
            return self
                .image(&page_url, &src)
                .map(|r| (*r).clone())
                .ok_or_else(|| BrowserError::ElementNotFound(format!("image {src} did not load")));
        }
        // anything else is cropped out of the viewport
        let l = self.ensure_layout();
        let r = l.rects[n].ok_or_else(|| BrowserError::ElementNotFound(format!("{target} has no box")))?;
        let shot = self.render();
        let y = r.y - self.page().scroll_y;
        let (x0, y0) = (r.x.max(0), y.max(0));
        let x1 = (r.x + r.w).min(shot.width() as i64);
        let y1 = (y + r.h).min(shot.height() as i64);
        if x1 <= x0 || y1 <= y0 {
            return Err(BrowserError::ElementNotFound(format!("{target} is outside the viewport")));
        }
        Ok(shot.crop(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32))
    }
}
