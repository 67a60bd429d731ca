//! Interactable elements, the accessibility tree, and emulated mark manifests
//! for one loaded fixture page.
//!
//! Interactable elements are numbered `1..=N` in document order. The same
//! numbers are the accessibility-tree node ids and, on an unscrolled page
//! that fits the viewport, the mark ids, so one oracle script serves every
//! observation mode.

use std::sync::Arc;

use webtask_core::browser::{AxNode, ElementTarget, Viewport};
use webtask_core::som::{BBox, SomEntry, SomManifest, SomMark};

use crate::dom::{collapse, Dom, DomKind};
use crate::layout::{control_value, is_block, FormValues, Layout, Rect};

const ROLE_ATTRS: [&str; 9] = [
    "button", "link", "checkbox", "radio", "tab", "menuitem", "combobox", "switch", "slider",
];

/// Roles whose name comes from their content; descendant text is not repeated.
const NAME_FROM_CONTENT: [&str; 4] = ["link", "button", "heading", "option"];

/// One loaded document and its per-page browser state.
#[derive(Debug, Clone)]
pub struct Page {
    pub url: String,
    pub dom: Arc<Dom>,
    pub values: FormValues,
    pub focus: Option<usize>,
    pub hover: Option<usize>,
    pub scroll_y: i64,
    /// Emulated in-page annotation overlay.
    pub overlay: Option<SomManifest>,
    pub layout: Option<Arc<Layout>>,
}

impl Page {
    pub fn new(url: impl Into<String>, dom: Dom) -> Self {
        Self {
            url: url.into(),
            dom: Arc::new(dom),
            values: FormValues::new(),
            focus: None,
            hover: None,
            scroll_y: 0,
            overlay: None,
            layout: None,
        }
    }

    pub fn blank() -> Self {
        Self::new("about:blank", Dom::blank())
    }

    pub fn is_blank(&self) -> bool {
        self.url == "about:blank"
    }
}

/// The interactability predicate, before visibility is considered.
pub fn is_interactable(dom: &Dom, n: usize) -> bool {
    let Some(tag) = dom.tag(n) else { return false };
    let by_tag = match tag {
        "a" => dom.attr(n, "href").is_some(),
        "input" => !dom.attr(n, "type").is_some_and(|t| t.eq_ignore_ascii_case("hidden")),
        "button" | "select" | "textarea" | "summary" | "img" => true,
        _ => false,
    };
    by_tag
        || dom
            .attr(n, "role")
            .is_some_and(|r| ROLE_ATTRS.contains(&r.trim().to_ascii_lowercase().as_str()))
        || dom.attr(n, "onclick").is_some()
        || dom
            .attr(n, "tabindex")
            .and_then(|t| t.trim().parse::<i64>().ok())
            .is_some_and(|t| t >= 0)
}

fn has_area(layout: &Layout, n: usize) -> bool {
    layout.rects[n].is_some_and(|r| r.w > 0 && r.h > 0)
}

/// Visible interactable elements in document order; element `i` has id `i + 1`.
pub fn markables(dom: &Dom, layout: &Layout) -> Vec<usize> {
    (0..dom.nodes.len())
        .filter(|n| is_interactable(dom, *n) && !dom.is_hidden(*n) && has_area(layout, *n))
        .collect()
}

fn label_for(dom: &Dom, n: usize) -> Option<String> {
    if let Some(id) = dom.attr(n, "id") {
        let label = (0..dom.nodes.len()).find(|l| dom.tag(*l) == Some("label") && dom.attr(*l, "for") == Some(id));
        if let Some(l) = label {
            return Some(dom.text_content(l));
        }
    }
    dom.ancestors(n)
        .find(|a| dom.tag(*a) == Some("label"))
        .map(|l| dom.text_content(l))
}

pub fn input_kind(dom: &Dom, n: usize) -> String {
    dom.attr(n, "type").unwrap_or("text").to_ascii_lowercase()
}

/// Accessibility role of an element; `None` for generic containers.
pub fn role_of(dom: &Dom, n: usize) -> Option<String> {
    if let Some(r) = dom.attr(n, "role") {
        return Some(r.trim().to_ascii_lowercase());
    }
    let tag = dom.tag(n)?;
    let role = match tag {
        "a" if dom.attr(n, "href").is_some() => "link",
        "button" | "summary" => "button",
        "input" => match input_kind(dom, n).as_str() {
            "submit" | "button" | "reset" | "image" => "button",
            "checkbox" => "checkbox",
            "radio" => "radio",
            _ => "textbox",
        },
        "textarea" => "textbox",
        "select" => "combobox",
        "img" => "img",
        "h1" | "h2" | "h3" | "h4" | "h5" | "h6" => "heading",
        "ul" | "ol" => "list",
        "li" => "listitem",
        "nav" => "navigation",
        "main" => "main",
        "form" => "form",
        "table" => "table",
        "option" => "option",
        _ => return None,
    };
    Some(role.to_string())
}

/// Accessible name for an element.
pub fn accessible_name(dom: &Dom, n: usize) -> String {
    if let Some(l) = dom.attr(n, "aria-label") {
        return collapse(l);
    }
    match dom.tag(n) {
        Some("img") => collapse(dom.attr(n, "alt").unwrap_or("")),
        Some("input") => match input_kind(dom, n).as_str() {
            "submit" | "button" | "reset" => collapse(dom.attr(n, "value").unwrap_or("Submit")),
            _ => label_for(dom, n)
                .or_else(|| dom.attr(n, "placeholder").map(collapse))
                .unwrap_or_default(),
        },
        Some("textarea") | Some("select") => label_for(dom, n)
            .or_else(|| dom.attr(n, "placeholder").map(collapse))
            .unwrap_or_default(),
        _ => {
            let text = dom.text_content(n);
            if text.is_empty() {
                // an image-only link is named by its image
                dom.descendants(n)
                    .into_iter()
                    .find(|d| dom.tag(*d) == Some("img"))
                    .and_then(|i| dom.attr(i, "alt"))
                    .map(collapse)
                    .unwrap_or_default()
            } else {
                text
            }
        }
    }
}

/// Text shown for a mark: the control's value, falling back to its name.
fn mark_text(dom: &Dom, n: usize, values: &FormValues) -> String {
    match dom.tag(n) {
        Some("input") if !matches!(input_kind(dom, n).as_str(), "submit" | "button" | "reset" | "checkbox" | "radio") => {
            let v = collapse(&control_value(dom, n, values));
            if v.is_empty() {
                accessible_name(dom, n)
            } else {
                v
            }
        }
        Some("textarea") | Some("select") => {
            let v = collapse(&control_value(dom, n, values));
            if v.is_empty() {
                accessible_name(dom, n)
            } else {
                v
            }
        }
        _ => accessible_name(dom, n),
    }
}

/// Builds the tree for a page. `about:blank` yields an empty root.
pub fn accessibility_tree(page: &Page, layout: &Layout) -> AxNode {
    if page.is_blank() {
        return AxNode::new(0, "", "");
    }
    let dom = &page.dom;
    let marks = markables(dom, layout);
    let mut ids = vec![0u64; dom.nodes.len()];
    for (i, n) in marks.iter().enumerate() {
        ids[*n] = i as u64 + 1;
    }
    let mut b = TreeBuilder {
        dom,
        values: &page.values,
        ids,
        next: marks.len() as u64 + 1,
    };
    let mut root = AxNode::new(b.fresh(), "RootWebArea", dom.title());
    if let Some(body) = dom.body() {
        root.children = b.children(body, false);
    }
    root
}

struct TreeBuilder<'a> {
    dom: &'a Dom,
    values: &'a FormValues,
    ids: Vec<u64>,
    next: u64,
}

impl TreeBuilder<'_> {
    fn fresh(&mut self) -> u64 {
        self.next += 1;
        self.next - 1
    }

    fn id(&mut self, n: usize) -> u64 {
        match self.ids[n] {
            0 => self.fresh(),
            id => id,
        }
    }

    fn children(&mut self, n: usize, named_above: bool) -> Vec<AxNode> {
        let kids = self.dom.nodes[n].children.clone();
        kids.into_iter().filter_map(|c| self.node(c, named_above)).collect()
    }

    fn node(&mut self, n: usize, named_above: bool) -> Option<AxNode> {
        let dom = self.dom;
        match &dom.nodes[n].kind {
            DomKind::Text(t) => {
                let text = collapse(t);
                if text.is_empty() || named_above {
                    return None;
                }
                Some(AxNode::new(self.fresh(), "StaticText", text))
            }
            DomKind::Document => None,
            DomKind::Element { tag, .. } => {
                if dom.is_hidden(n) {
                    return None;
                }
                let role = role_of(dom, n);
                let id = self.id(n);
                let Some(role) = role else {
                    let mut node = AxNode::new(id, "generic", "");
                    node.ignored = true;
                    node.children = self.children(n, named_above);
                    return Some(node);
                };
                let mut node = AxNode::new(id, role.clone(), accessible_name(dom, n));
                if self.ids[n] != 0 {
                    node.target = Some(ElementTarget::Node(n as i64));
                }
                match role.as_str() {
                    "heading" => {
                        if let Some(level) = tag.strip_prefix('h') {
                            node.properties.insert("level".into(), level.to_string());
                        }
                    }
                    "img" => {
                        node.properties
                            .insert("src".into(), dom.attr(n, "src").unwrap_or("").to_string());
                    }
                    "textbox" | "combobox" => {
                        let v = collapse(&control_value(dom, n, self.values));
                        if !v.is_empty() {
                            node.properties.insert("value".into(), v);
                        }
                    }
                    "checkbox" | "radio" => {
                        let on = self
                            .values
                            .get(&n)
                            .map(|v| v == "on")
                            .unwrap_or(dom.attr(n, "checked").is_some());
                        node.properties.insert("checked".into(), on.to_string());
                    }
                    _ => {}
                }
                // form controls own their content
                if !matches!(tag.as_str(), "select" | "textarea") {
                    let named = named_above || NAME_FROM_CONTENT.contains(&role.as_str());
                    node.children = self.children(n, named);
                }
                Some(node)
            }
        }
    }
}

fn nearest_block(dom: &Dom, n: usize) -> Option<usize> {
    dom.ancestors(n).find(|a| dom.tag(*a).is_some_and(is_block))
}

fn bbox(r: Rect, scroll_y: i64) -> BBox {
    BBox {
        x: r.x as f64,
        y: (r.y - scroll_y) as f64,
        width: r.w as f64,
        height: r.h as f64,
    }
}

/// What the in-page annotator returns for the visible part of the page.
pub fn som_manifest(page: &Page, layout: &Layout, viewport: Viewport) -> SomManifest {
    let mut manifest = SomManifest {
        page_url: page.url.clone(),
        entries: Vec::new(),
        skipped: Vec::new(),
    };
    if page.is_blank() {
        return manifest;
    }
    let dom = &page.dom;
    let (vw, vh) = (viewport.width as i64, viewport.height as i64);
    let visible = |n: usize| {
        layout.rects[n].is_some_and(|r| r.w > 0 && r.h > 0 && r.intersects_band(page.scroll_y, vw, vh))
    };
    let marks: Vec<usize> = markables(dom, layout).into_iter().filter(|n| visible(*n)).collect();
    let is_mark = |n: usize| marks.binary_search(&n).is_ok();

    // (block, text) runs; a mark in between starts a new run
    let mut run: Option<(Option<usize>, String)> = None;
    let mut next_id = 1u64;
    let flush = |run: &mut Option<(Option<usize>, String)>, entries: &mut Vec<SomEntry>| {
        if let Some((_, text)) = run.take() {
            entries.push(SomEntry::Static { text });
        }
    };
    for n in 0..dom.nodes.len() {
        if is_mark(n) {
            flush(&mut run, &mut manifest.entries);
            manifest.entries.push(SomEntry::Mark(SomMark {
                id: next_id,
                bbox: bbox(layout.rects[n].expect("visible mark has a box"), page.scroll_y),
                tag_type: dom.tag(n).unwrap_or("").to_ascii_uppercase(),
                text_content: mark_text(dom, n, &page.values),
                selector: dom.css_path(n),
                src: (dom.tag(n) == Some("img")).then(|| dom.attr(n, "src").unwrap_or("").to_string()),
            }));
            next_id += 1;
            continue;
        }
        let Some(t) = dom.text(n) else { continue };
        let text = collapse(t);
        let parent = dom.nodes[n].parent;
        if text.is_empty()
            || parent.is_some_and(|p| dom.is_hidden(p))
            || dom.ancestors(n).any(|a| is_interactable(dom, a))
            || !visible(n)
        {
            continue;
        }
        let block = nearest_block(dom, n);
        match &mut run {
            Some((b, acc)) if *b == block => {
                acc.push(' ');
                acc.push_str(&text);
            }
            _ => {
                flush(&mut run, &mut manifest.entries);
                run = Some((block, text));
            }
        }
    }
    flush(&mut run, &mut manifest.entries);
    manifest
}
