//! Static fixture sites behind virtual hosts, with a few stateful form endpoints.
//!
//! Each subdirectory of the root is one host (`shopping.test/`, ...). Paths map
//! to files (`/product/3` serves `product/3.html`). HTML comments of the form
//! `<!--@name-->` are replaced with markup generated from the in-memory state.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::Deserialize;
use tiny_http::{Header, Method, Request, Response, Server};

use crate::FixtureError;

pub const RESET_PATH: &str = "/__reset";
const WORKERS: usize = 4;

#[derive(Debug, Clone, Deserialize)]
pub struct Product {
    pub sku: String,
    pub name: String,
    pub price: String,
    pub image: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Listing {
    pub id: u32,
    pub title: String,
    pub price: String,
    pub image: String,
}

/// Mutable state behind the form endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteState {
    #[serde(default)]
    pub wishlist: Vec<String>,
    #[serde(default)]
    pub cart: Vec<String>,
    /// SKUs per order; order `n` is `orders[n - 1]`.
    #[serde(default)]
    pub orders: Vec<Vec<String>>,
    /// Added comments keyed by post path.
    #[serde(default)]
    pub comments: BTreeMap<String, Vec<String>>,
}

struct Shared {
    root: PathBuf,
    hosts: Vec<String>,
    catalog: Vec<Product>,
    listings: Vec<Listing>,
    initial: SiteState,
    state: Mutex<SiteState>,
    requests: AtomicUsize,
}

/// A running fixture server. Stops when dropped.
pub struct FixtureServer {
    addr: SocketAddr,
    server: Arc<Server>,
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl std::fmt::Debug for FixtureServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FixtureServer")
            .field("addr", &self.addr)
            .field("root", &self.shared.root)
            .finish()
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>, FixtureError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| FixtureError::io(path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| FixtureError::Data(format!("{}: {e}", path.display())))
}

impl FixtureServer {
    /// Serves `root` on an ephemeral localhost port.
    pub fn start(root: &Path) -> Result<Self, FixtureError> {
        Self::start_on(root, 0)
    }

    pub fn start_on(root: &Path, port: u16) -> Result<Self, FixtureError> {
        if !root.is_dir() {
            return Err(FixtureError::Data(format!("{} is not a directory", root.display())));
        }
        let mut hosts: Vec<String> = std::fs::read_dir(root)
            .map_err(|e| FixtureError::io(root, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.contains('.'))
            .collect();
        hosts.sort();
        let catalog = read_json(&root.join("shopping.test/catalog.json"))?.unwrap_or_default();
        let listings = read_json(&root.join("classifieds.test/listings.json"))?.unwrap_or_default();
        let initial: SiteState = read_json(&root.join("state.json"))?.unwrap_or_default();

        let server = Server::http(("127.0.0.1", port)).map_err(|e| FixtureError::Bind(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| FixtureError::Bind("not an IP listener".into()))?;
        let server = Arc::new(server);
        let shared = Arc::new(Shared {
            root: root.to_path_buf(),
            hosts,
            catalog,
            listings,
            state: Mutex::new(initial.clone()),
            initial,
            requests: AtomicUsize::new(0),
        });
        let workers = (0..WORKERS)
            .map(|_| {
                let server = server.clone();
                let shared = shared.clone();
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        shared.requests.fetch_add(1, Ordering::SeqCst);
                        handle(&shared, req);
                    }
                })
            })
            .collect();
        tracing::debug!(%addr, root = %root.display(), "fixture server up");
        Ok(Self {
            addr,
            server,
            shared,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn root(&self) -> &Path {
        &self.shared.root
    }

    /// Virtual host names served, e.g. `shopping.test`.
    pub fn hosts(&self) -> &[String] {
        &self.shared.hosts
    }

    pub fn state(&self) -> SiteState {
        self.shared.state.lock().expect("state lock").clone()
    }

    pub fn initial_state(&self) -> &SiteState {
        &self.shared.initial
    }

    pub fn reset(&self) {
        *self.shared.state.lock().expect("state lock") = self.shared.initial.clone();
    }

    /// Requests served so far.
    pub fn request_count(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.server.unblock();
        for _ in 1..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("valid header")
}

fn respond(req: Request, status: u16, content_type: &str, body: Vec<u8>) {
    let resp = Response::from_data(body)
        .with_status_code(status)
        .with_header(header("Content-Type", content_type));
    if let Err(e) = req.respond(resp) {
        tracing::debug!(error = %e, "fixture response failed");
    }
}

fn redirect(req: Request, location: &str) {
    let resp = Response::empty(303).with_header(header("Location", location));
    let _ = req.respond(resp);
}

fn not_found(req: Request) {
    respond(req, 404, "text/html; charset=utf-8", b"<html><head><title>Not found</title></head><body><p>Page not found.</p></body></html>".to_vec());
}

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn form_fields(body: &str) -> BTreeMap<String, String> {
    url::form_urlencoded::parse(body.as_bytes()).into_owned().collect()
}

fn handle(shared: &Shared, mut req: Request) {
    let host = req
        .headers()
        .iter()
        .find(|h| h.field.equiv("Host"))
        .map(|h| h.value.as_str().split(':').next().unwrap_or("").to_ascii_lowercase())
        .unwrap_or_default();
    let raw_url = req.url().to_string();
    let (path, query) = match raw_url.split_once('?') {
        Some((p, q)) => (p.to_string(), q.to_string()),
        None => (raw_url.clone(), String::new()),
    };
    let method = req.method().clone();

    if path == RESET_PATH {
        if method == Method::Post {
            *shared.state.lock().expect("state lock") = shared.initial.clone();
            let _ = req.respond(Response::empty(204));
        } else {
            respond(req, 405, "text/plain", b"POST only".to_vec());
        }
        return;
    }
    if !shared.hosts.iter().any(|h| *h == host) {
        return not_found(req);
    }
    if method == Method::Post {
        let mut body = String::new();
        if req.as_reader().read_to_string(&mut body).is_err() {
            return respond(req, 400, "text/plain", b"bad body".to_vec());
        }
        let fields = form_fields(&body);
        match post(shared, &host, &path, &fields) {
            Some(location) => redirect(req, &location),
            None => not_found(req),
        }
        return;
    }
    if method != Method::Get && method != Method::Head {
        return respond(req, 405, "text/plain", b"method not allowed".to_vec());
    }
    match get(shared, &host, &path, &query) {
        Some((content_type, body)) => respond(req, 200, content_type, body),
        None => not_found(req),
    }
}

fn post(shared: &Shared, host: &str, path: &str, fields: &BTreeMap<String, String>) -> Option<String> {
    let mut state = shared.state.lock().expect("state lock");
    match (host, path) {
        ("shopping.test", "/wishlist/add") => {
            let sku = fields.get("sku")?;
            shared.catalog.iter().find(|p| &p.sku == sku)?;
            if !state.wishlist.contains(sku) {
                state.wishlist.push(sku.clone());
            }
            Some("/wishlist".into())
        }
        ("shopping.test", "/cart/add") => {
            let sku = fields.get("sku")?;
            shared.catalog.iter().find(|p| &p.sku == sku)?;
            state.cart.push(sku.clone());
            Some("/cart".into())
        }
        ("shopping.test", "/checkout") => {
            if state.cart.is_empty() {
                return Some("/cart".into());
            }
            let items = std::mem::take(&mut state.cart);
            state.orders.push(items);
            Some(format!("/orders/{}", state.orders.len()))
        }
        ("reddit.test", p) => {
            let post = p.strip_suffix("/comment")?;
            let text = fields.get("text").map(|t| t.trim()).filter(|t| !t.is_empty())?;
            let page = shared.root.join(host).join(format!("{}.html", post.trim_start_matches('/')));
            if !page.is_file() {
                return None;
            }
            state.comments.entry(post.to_string()).or_default().push(text.to_string());
            Some(post.to_string())
        }
        _ => None,
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("png") => "image/png",
        Some("json") => "application/json",
        Some("css") => "text/css",
        _ => "application/octet-stream",
    }
}

/// Maps a URL path onto a file under the host directory.
fn file_for(root: &Path, host: &str, path: &str) -> Option<PathBuf> {
    let decoded = percent_decode(path);
    if decoded.split('/').any(|seg| seg == ".." || seg.starts_with('.')) {
        return None;
    }
    let rel = decoded.trim_start_matches('/');
    let mut file = root.join(host).join(rel);
    if rel.is_empty() || rel.ends_with('/') {
        file = file.join("index.html");
    } else if file.extension().is_none() {
        if file.is_dir() {
            file = file.join("index.html");
        } else {
            file.set_extension("html");
        }
    }
    file.is_file().then_some(file)
}

fn percent_decode(s: &str) -> String {
    percent_encoding::percent_decode_str(s).decode_utf8_lossy().into_owned()
}

fn get(shared: &Shared, host: &str, path: &str, query: &str) -> Option<(&'static str, Vec<u8>)> {
    let state = shared.state.lock().expect("state lock").clone();
    if host == "shopping.test" {
        if let Some(n) = path.strip_prefix("/orders/").and_then(|n| n.parse::<usize>().ok()) {
            let items = state.orders.get(n.checked_sub(1)?)?;
            let template = std::fs::read_to_string(shared.root.join(host).join("_order.html")).ok()?;
            let page = template
                .replace("{{order_id}}", &n.to_string())
                .replace("<!--@order-items-->", &product_items(shared, items, "item", "item-name"));
            return Some(("text/html; charset=utf-8", page.into_bytes()));
        }
    }
    let file = file_for(&shared.root, host, path)?;
    let bytes = std::fs::read(&file).ok()?;
    let ct = content_type(&file);
    if ct.starts_with("text/html") {
        let html = String::from_utf8(bytes).ok()?;
        let params: BTreeMap<String, String> = form_fields(query);
        return Some((ct, fill(shared, &state, path, &params, html).into_bytes()));
    }
    Some((ct, bytes))
}

fn product_items(shared: &Shared, skus: &[String], class: &str, name_class: &str) -> String {
    let mut out = String::new();
    for sku in skus {
        if let Some(p) = shared.catalog.iter().find(|p| &p.sku == sku) {
            out.push_str(&format!(
                "<li class=\"{class}\"><img src=\"/img/{}\" alt=\"{}\" width=\"96\" height=\"96\"> <a class=\"{name_class}\" href=\"/product/{}\">{}</a> <span class=\"sku\">{}</span> <span class=\"price\">{}</span></li>\n",
                escape_html(&p.image),
                escape_html(&p.name),
                escape_html(&p.sku),
                escape_html(&p.name),
                escape_html(&p.sku),
                escape_html(&p.price)
            ));
        }
    }
    out
}

fn fill(shared: &Shared, state: &SiteState, path: &str, params: &BTreeMap<String, String>, mut html: String) -> String {
    if html.contains("<!--@wishlist-->") {
        let inner = if state.wishlist.is_empty() {
            "<p class=\"empty\">Your wish list is empty.</p>".to_string()
        } else {
            format!("<ul class=\"wishlist\">\n{}</ul>", product_items(shared, &state.wishlist, "wish-item", "wish-name"))
        };
        html = html.replace("<!--@wishlist-->", &inner);
    }
    if html.contains("<!--@cart-->") {
        let inner = if state.cart.is_empty() {
            "<p class=\"empty\">Your cart is empty.</p>".to_string()
        } else {
            format!(
                "<ul class=\"cart\">\n{}</ul>\n<form method=\"post\" action=\"/checkout\"><button type=\"submit\">Place order</button></form>",
                product_items(shared, &state.cart, "cart-item", "cart-name")
            )
        };
        html = html.replace("<!--@cart-->", &inner);
    }
    if html.contains("<!--@orders-->") {
        let mut inner = String::new();
        for (i, items) in state.orders.iter().enumerate().rev() {
            let n = i + 1;
            inner.push_str(&format!(
                "<li><a class=\"order-link\" href=\"/orders/{n}\">Order #{n}</a> <span class=\"count\">{} item(s)</span></li>\n",
                items.len()
            ));
        }
        html = html.replace("<!--@orders-->", &format!("<ul class=\"orders\">\n{inner}</ul>"));
    }
    if html.contains("<!--@comments-->") {
        let mut inner = String::new();
        for text in state.comments.get(path).into_iter().flatten() {
            inner.push_str(&format!(
                "<div class=\"comment\"><span class=\"author\">you</span> <p class=\"body\">{}</p></div>\n",
                escape_html(text)
            ));
        }
        html = html.replace("<!--@comments-->", &inner);
    }
    if html.contains("<!--@results-->") {
        let q = params.get("q").map(|s| s.trim().to_lowercase()).unwrap_or_default();
        let hits: Vec<&Listing> = shared
            .listings
            .iter()
            .filter(|l| !q.is_empty() && l.title.to_lowercase().contains(&q))
            .collect();
        let mut inner = format!(
            "<p id=\"result-count\">{} result(s) for \"{}\"</p>\n<ul class=\"results\">\n",
            hits.len(),
            escape_html(&q)
        );
        for l in hits {
            inner.push_str(&format!(
                "<li class=\"result\"><a href=\"/item/{}\">{}</a> <span class=\"price\">{}</span></li>\n",
                l.id,
                escape_html(&l.title),
                escape_html(&l.price)
            ));
        }
        inner.push_str("</ul>");
        html = html.replace("<!--@results-->", &inner);
    }
    html
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_map_to_files() {
        let dir = tempfile::tempdir().unwrap();
        let host = dir.path().join("a.test");
        std::fs::create_dir_all(host.join("product")).unwrap();
        std::fs::write(host.join("index.html"), "i").unwrap();
        std::fs::write(host.join("product/3.html"), "p").unwrap();
        assert_eq!(file_for(dir.path(), "a.test", "/").unwrap(), host.join("index.html"));
        assert_eq!(file_for(dir.path(), "a.test", "/product/3").unwrap(), host.join("product/3.html"));
        assert!(file_for(dir.path(), "a.test", "/../a.test/index.html").is_none());
        assert!(file_for(dir.path(), "a.test", "/missing").is_none());
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape_html("<b>\"x\" & 'y'</b>"), "&lt;b&gt;&quot;x&quot; &amp; &#39;y&#39;&lt;/b&gt;");
    }
}
