//! Owned, thread-safe snapshot of a parsed HTML document.

use std::collections::HashMap;

use scraper::{Html, Node, Selector};

#[derive(Debug, Clone)]
pub enum DomKind {
    Document,
    Element { tag: String, attrs: Vec<(String, String)> },
    Text(String),
}

#[derive(Debug, Clone)]
pub struct DomNode {
    pub kind: DomKind,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Tags that never render.
const NON_RENDERED: [&str; 8] = ["head", "script", "style", "title", "meta", "link", "template", "noscript"];

#[derive(Debug, Clone)]
pub struct Dom {
    pub nodes: Vec<DomNode>,
    source: String,
}

/// Collapses whitespace runs to single spaces and trims.
pub fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Dom {
    pub fn parse(source: &str) -> Self {
        let html = Html::parse_document(source);
        let mut nodes = Vec::new();
        let mut stack = vec![(html.tree.root(), None::<usize>)];
        // pre-order with an explicit stack; children pushed in reverse
        while let Some((node, parent)) = stack.pop() {
            let kind = match node.value() {
                Node::Document | Node::Fragment => DomKind::Document,
                Node::Element(e) => DomKind::Element {
                    tag: e.name().to_ascii_lowercase(),
                    attrs: e.attrs().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
                },
                Node::Text(t) => DomKind::Text(t.to_string()),
                _ => continue,
            };
            let idx = nodes.len();
            nodes.push(DomNode {
                kind,
                parent,
                children: Vec::new(),
            });
            if let Some(p) = parent {
                nodes[p].children.push(idx);
            }
            let kids: Vec<_> = node.children().collect();
            for child in kids.into_iter().rev() {
                stack.push((child, Some(idx)));
            }
        }
        Self {
            nodes,
            source: source.to_string(),
        }
    }

    pub fn blank() -> Self {
        Self::parse("<html><head><title></title></head><body></body></html>")
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn tag(&self, n: usize) -> Option<&str> {
        match &self.nodes[n].kind {
            DomKind::Element { tag, .. } => Some(tag),
            _ => None,
        }
    }

    pub fn attr(&self, n: usize, name: &str) -> Option<&str> {
        match &self.nodes[n].kind {
            DomKind::Element { attrs, .. } => attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str()),
            _ => None,
        }
    }

    pub fn text(&self, n: usize) -> Option<&str> {
        match &self.nodes[n].kind {
            DomKind::Text(t) => Some(t),
            _ => None,
        }
    }

    pub fn ancestors(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(self.nodes[n].parent, move |p| self.nodes[*p].parent)
    }

    /// The node itself, then its ancestors.
    pub fn self_and_ancestors(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(n).chain(self.ancestors(n))
    }

    pub fn find_tag(&self, tag: &str) -> Option<usize> {
        (0..self.nodes.len()).find(|n| self.tag(*n) == Some(tag))
    }

    pub fn title(&self) -> String {
        self.find_tag("title").map(|t| self.text_content(t)).unwrap_or_default()
    }

    pub fn body(&self) -> Option<usize> {
        self.find_tag("body")
    }

    /// Descendant nodes in document order, excluding `n`.
    pub fn descendants(&self, n: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.nodes[n].children.iter().rev().copied().collect();
        while let Some(c) = stack.pop() {
            out.push(c);
            stack.extend(self.nodes[c].children.iter().rev().copied());
        }
        out
    }

    /// Whitespace-collapsed text of every rendered descendant text node.
    pub fn text_content(&self, n: usize) -> String {
        if let Some(t) = self.text(n) {
            return collapse(t);
        }
        let mut parts = Vec::new();
        self.collect_text(n, &mut parts);
        collapse(&parts.join(" "))
    }

    fn collect_text(&self, n: usize, out: &mut Vec<String>) {
        for &c in &self.nodes[n].children {
            match &self.nodes[c].kind {
                DomKind::Text(t) => out.push(t.clone()),
                DomKind::Element { tag, .. } if tag == "script" || tag == "style" => {}
                DomKind::Element { .. } => self.collect_text(c, out),
                DomKind::Document => {}
            }
        }
    }

    fn hidden_here(&self, n: usize) -> bool {
        let Some(tag) = self.tag(n) else { return false };
        if NON_RENDERED.contains(&tag) || self.attr(n, "hidden").is_some() {
            return true;
        }
        if tag == "input" && self.attr(n, "type").is_some_and(|t| t.eq_ignore_ascii_case("hidden")) {
            return true;
        }
        self.attr(n, "style").is_some_and(|s| {
            s.split(';').any(|decl| {
                let compact: String = decl.chars().filter(|c| !c.is_whitespace()).collect();
                compact.eq_ignore_ascii_case("display:none") || compact.eq_ignore_ascii_case("visibility:hidden")
            })
        })
    }

    /// True when the node or an ancestor is not rendered.
    pub fn is_hidden(&self, n: usize) -> bool {
        self.self_and_ancestors(n).any(|a| self.hidden_here(a))
    }

    /// Element nodes matching a CSS selector, in document order.
    pub fn select(&self, selector: &str) -> Result<Vec<usize>, String> {
        let sel = Selector::parse(selector).map_err(|e| format!("bad selector `{selector}`: {e}"))?;
        let html = Html::parse_document(&self.source);
        // the owned tree was built in the same pre-order, so positions line up
        let mut order = HashMap::new();
        let mut stack = vec![html.tree.root()];
        let mut idx = 0usize;
        while let Some(node) = stack.pop() {
            match node.value() {
                Node::Document | Node::Fragment | Node::Element(_) | Node::Text(_) => {
                    order.insert(node.id(), idx);
                    idx += 1;
                }
                _ => continue,
            }
            let kids: Vec<_> = node.children().collect();
            stack.extend(kids.into_iter().rev());
        }
        Ok(html.select(&sel).filter_map(|e| order.get(&e.id()).copied()).collect())
    }

    /// A selector that matches exactly this element.
    pub fn css_path(&self, n: usize) -> String {
        if let Some(id) = self.attr(n, "id") {
            let simple = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            let unique = (0..self.nodes.len()).filter(|m| self.attr(*m, "id") == Some(id)).count() == 1;
            if simple && unique && !id.starts_with(|c: char| c.is_ascii_digit()) {
                return format!("#{id}");
            }
        }
        let tag = self.tag(n).unwrap_or("*");
        let Some(parent) = self.nodes[n].parent.filter(|p| self.tag(*p).is_some()) else {
            return tag.to_string();
        };
        let pos = self.nodes[parent]
            .children
            .iter()
            .filter(|c| self.tag(**c).is_some())
            .position(|c| *c == n)
            .unwrap_or(0)
            + 1;
        format!("{} > {tag}:nth-child({pos})", self.css_path(parent))
    }
}
