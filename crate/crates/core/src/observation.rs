//! Observation builder: turns one settled page into the agent's view of it.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::browser::{AxNode, BrowserError, ElementResolver, ElementTarget, SessionHandle, TabInfo};
use crate::gateway::Gateway;
use crate::raster::Raster;
use crate::som::{draw_marks, SomEntry, SomError, SomManifest, SomProvider};

pub const TRUNCATION_MARKER: &str = "[...truncated]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    AccTree,
    AccTreeCaps,
    ScreenshotAccTreeCaps,
    SomScreenshotCaps,
}

impl ObservationMode {
    pub const ALL: [ObservationMode; 4] = [
        ObservationMode::AccTree,
        ObservationMode::AccTreeCaps,
        ObservationMode::ScreenshotAccTreeCaps,
        ObservationMode::SomScreenshotCaps,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObservationMode::AccTree => "acc_tree",
            ObservationMode::AccTreeCaps => "acc_tree_caps",
            ObservationMode::ScreenshotAccTreeCaps => "screenshot_acc_tree_caps",
            ObservationMode::SomScreenshotCaps => "som_screenshot_caps",
        }
    }

    /// Accepts the canonical names plus the short CLI names `multimodal` and `som`.
    pub fn parse(raw: &str) -> Result<Self, String> {
        match raw.trim() {
            "acc_tree" => Ok(ObservationMode::AccTree),
            "acc_tree_caps" => Ok(ObservationMode::AccTreeCaps),
            "screenshot_acc_tree_caps" | "multimodal" => Ok(ObservationMode::ScreenshotAccTreeCaps),
            "som_screenshot_caps" | "som" => Ok(ObservationMode::SomScreenshotCaps),
            other => Err(format!(
                "unknown observation mode `{other}` (expected acc_tree, acc_tree_caps, multimodal, or som)"
            )),
        }
    }

    /// Whether prompts in this mode carry image parts.
    pub fn has_images(self) -> bool {
        matches!(
            self,
            ObservationMode::ScreenshotAccTreeCaps | ObservationMode::SomScreenshotCaps
        )
    }

    pub fn has_captions(self) -> bool {
        self != ObservationMode::AccTree
    }

    pub fn is_som(self) -> bool {
        self == ObservationMode::SomScreenshotCaps
    }
}

impl fmt::Display for ObservationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetUnit {
    Tokens,
    Chars,
}

impl BudgetUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            BudgetUnit::Tokens => "tokens",
            BudgetUnit::Chars => "chars",
        }
    }
}

/// Text length limit, in tokens (approximated by characters) or characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBudget {
    pub max_units: usize,
    pub unit: BudgetUnit,
    #[serde(default = "default_chars_per_token")]
    pub chars_per_token: usize,
}

fn default_chars_per_token() -> usize {
    4
}

impl TextBudget {
    /// Observation budget for long-context backends.
    pub const DEFAULT: TextBudget = TextBudget::tokens(3840);
    /// Observation budget for short-context backends.
    pub const SHORT: TextBudget = TextBudget::tokens(640);

    pub const fn tokens(n: usize) -> Self {
        Self {
            max_units: n,
            unit: BudgetUnit::Tokens,
            chars_per_token: 4,
        }
    }

    pub const fn chars(n: usize) -> Self {
        Self {
            max_units: n,
            unit: BudgetUnit::Chars,
            chars_per_token: 4,
        }
    }

    /// Limit expressed in characters.
    pub fn limit_chars(&self) -> usize {
        match self.unit {
            BudgetUnit::Chars => self.max_units,
            BudgetUnit::Tokens => self.max_units * self.chars_per_token.max(1),
        }
    }

    /// Units consumed by `chars` characters, rounding partial tokens up.
    pub fn units_for_chars(&self, chars: usize) -> usize {
        match self.unit {
            BudgetUnit::Chars => chars,
            BudgetUnit::Tokens => chars.div_ceil(self.chars_per_token.max(1)),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_units == 0 {
            return Err("budget must be positive".into());
        }
        if self.chars_per_token == 0 {
            return Err("chars_per_token must be positive".into());
        }
        Ok(())
    }
}

impl Default for TextBudget {
    fn default() -> Self {
        TextBudget::DEFAULT
    }
}

/// Keeps the head of `text` within the budget, cutting at a line boundary
/// and ending with a marker line when anything was dropped.
pub fn truncate_to_budget(text: &str, budget: &TextBudget) -> String {
    let limit = budget.limit_chars();
    if text.chars().count() <= limit {
        return text.to_string();
    }
    let marker_len = TRUNCATION_MARKER.chars().count();
    if limit < marker_len {
        return String::new();
    }
    // Reserve room for the marker plus the newline joining it.
    let room = limit.saturating_sub(marker_len + 1);
    let mut kept: Vec<&str> = Vec::new();
    let mut used = 0usize;
    for line in text.split('\n') {
        let n = line.chars().count();
        let extra = if kept.is_empty() { n } else { n + 1 };
        if used + extra > room {
            break;
        }
        kept.push(line);
        used += extra;
    }
    if kept.is_empty() {
        TRUNCATION_MARKER.to_string()
    } else {
        format!("{}\n{TRUNCATION_MARKER}", kept.join("\n"))
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

/// One line per manifest entry, in document order.
pub fn render_som_text(manifest: &SomManifest) -> String {
    let mut lines = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        match entry {
            SomEntry::Mark(m) => lines.push(format!(
                "[{}] [{}] [{}]",
                m.id,
                one_line(&m.tag_type),
                one_line(&m.text_content)
            )),
            SomEntry::Static { text } => lines.push(format!("[] [StaticText] [{}]", one_line(text))),
        }
    }
    lines.join("\n")
}

/// A line of SoM text: `id` is `None` for static text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SomLine {
    pub id: Option<u64>,
    pub tag_type: String,
    pub text: String,
}

/// Inverse of [`render_som_text`]. The text field runs to the final `]` of the line.
pub fn parse_som_text(text: &str) -> Result<Vec<SomLine>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line == TRUNCATION_MARKER {
            continue;
        }
        let err = |what: &str| format!("line {}: {what}: {line:?}", n + 1);
        let rest = line.strip_prefix('[').ok_or_else(|| err("missing id bracket"))?;
        let close = rest.find(']').ok_or_else(|| err("unterminated id"))?;
        let id_raw = &rest[..close];
        let id = if id_raw.is_empty() {
            None
        } else {
            Some(id_raw.parse::<u64>().map_err(|_| err("bad id"))?)
        };
        let rest = rest[close + 1..]
            .strip_prefix(" [")
            .ok_or_else(|| err("missing tag bracket"))?;
        let close = rest.find(']').ok_or_else(|| err("unterminated tag"))?;
        let tag_type = rest[..close].to_string();
        let body = rest[close + 1..]
            .strip_prefix(" [")
            .and_then(|b| b.strip_suffix(']'))
            .ok_or_else(|| err("malformed text field"))?;
        out.push(SomLine {
            id,
            tag_type,
            text: body.to_string(),
        });
    }
    Ok(out)
}

/// Depth-first `[node_id] role 'name'` lines, one tab per depth level.
/// Ignored nodes are dropped and their children move up a level.
pub fn flatten_accessibility_tree(root: &AxNode) -> String {
    fn go(node: &AxNode, depth: usize, out: &mut Vec<String>) {
        if node.ignored {
            for c in &node.children {
                go(c, depth, out);
            }
            return;
        }
        let mut line = format!(
            "{}[{}] {} '{}'",
            "\t".repeat(depth),
            node.node_id,
            node.role,
            one_line(&node.name)
        );
        for (k, v) in &node.properties {
            if k == "src" {
                continue;
            }
            line.push_str(&format!(" {k}: {}", one_line(v)));
        }
        out.push(line);
        for c in &node.children {
            go(c, depth + 1, out);
        }
    }
    let mut out = Vec::new();
    if root.role.is_empty() && root.children.is_empty() {
        return String::new();
    }
    go(root, 0, &mut out);
    out.join("\n")
}

/// Produces a short description of an image.
pub trait Captioner {
    fn caption(&self, image: Arc<Raster>) -> Result<String, String>;
}

impl Captioner for Gateway {
    fn caption(&self, image: Arc<Raster>) -> Result<String, String> {
        Gateway::caption(self, image).map_err(|e| e.to_string())
    }
}

/// Final path segment of a URL or path, without query or fragment.
pub fn url_basename(src: &str) -> String {
    let no_q = src.split(['?', '#']).next().unwrap_or(src);
    no_q.rsplit('/').next().unwrap_or(no_q).to_string()
}

/// The caption-augmented entry text for one image.
pub fn image_description(caption: Option<&str>, src: &str) -> String {
    let desc = caption.unwrap_or("unavailable");
    let base = url_basename(src);
    if base.is_empty() {
        format!("Image, description: {desc}")
    } else {
        format!("Image, description: {desc}, url: {base}")
    }
}

fn describe(
    captioner: &dyn Captioner,
    fetch: &mut dyn FnMut(&ElementTarget) -> Option<Raster>,
    target: Option<&ElementTarget>,
    src: &str,
) -> String {
    let caption = target
        .and_then(|t| fetch(t))
        .and_then(|img| match captioner.caption(Arc::new(img)) {
            Ok(c) => Some(c),
            Err(e) => {
                tracing::warn!(error = %e, src, "caption failed");
                None
            }
        });
    image_description(caption.as_deref(), src)
}

/// Rewrites every `img` node's name into a caption description.
pub fn augment_tree_with_captions(
    root: &mut AxNode,
    captioner: &dyn Captioner,
    fetch: &mut dyn FnMut(&ElementTarget) -> Option<Raster>,
) {
    if root.role == "img" && !root.ignored {
        let src = root.properties.get("src").cloned().unwrap_or_default();
        root.name = describe(captioner, fetch, root.target.as_ref(), &src);
    }
    for c in &mut root.children {
        augment_tree_with_captions(c, captioner, fetch);
    }
}

/// Rewrites every IMG mark's text into a caption description.
pub fn augment_manifest_with_captions(
    manifest: &mut SomManifest,
    captioner: &dyn Captioner,
    fetch: &mut dyn FnMut(&ElementTarget) -> Option<Raster>,
) {
    for entry in &mut manifest.entries {
        if let SomEntry::Mark(m) = entry {
            if m.tag_type.eq_ignore_ascii_case("img") {
                let src = m.src.clone().unwrap_or_default();
                let target = ElementTarget::Css(m.selector.clone());
                m.text_content = describe(captioner, fetch, Some(&target), &src);
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ObservationError {
    #[error(transparent)]
    Browser(#[from] BrowserError),
    #[error(transparent)]
    Som(#[from] SomError),
    #[error("{0} mode needs a {1}")]
    MissingComponent(ObservationMode, &'static str),
}

impl ObservationError {
    pub fn is_fatal(&self) -> bool {
        match self {
            ObservationError::Browser(e) => e.is_fatal(),
            ObservationError::Som(SomError::Browser(e)) => e.is_fatal(),
            _ => false,
        }
    }
}

/// The agent's partial view of the current state.
#[derive(Debug, Clone)]
pub struct Observation {
    pub url: String,
    pub tabs: Vec<TabInfo>,
    pub mode: ObservationMode,
    pub text_payload: String,
    /// Captured screenshot, with marks drawn in SoM mode. Recorded in every mode.
    pub screenshot: Arc<Raster>,
    /// Current screenshot first, then task input images. Empty in text-only modes.
    pub image_payloads: Vec<Arc<Raster>>,
    pub som_manifest: Option<SomManifest>,
    /// Element ids in `text_payload` mapped to browser targets.
    pub targets: BTreeMap<u64, ElementTarget>,
    pub truncated: bool,
}

impl Observation {
    /// Stable hash of the text payload, URL, tabs, and image pixels.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.mode.as_str().as_bytes());
        h.update([0]);
        h.update(self.url.as_bytes());
        h.update([0]);
        for t in &self.tabs {
            h.update(format!("{}|{}|{}|{}", t.index, t.title, t.url, t.focused).as_bytes());
            h.update([0]);
        }
        h.update(self.text_payload.as_bytes());
        for img in &self.image_payloads {
            h.update(img.digest().as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Tab list block shown above the page content.
    pub fn tabs_header(&self) -> String {
        self.tabs
            .iter()
            .map(|t| {
                let cur = if t.focused { " (current)" } else { "" };
                format!("Tab {}{}: {}", t.index, cur, one_line(&t.title))
            })
            .collect::<Vec<_>>()
            .join("\t")
    }
}

impl ElementResolver for Observation {
    fn resolve(&self, id: u64) -> Option<ElementTarget> {
        self.targets.get(&id).cloned()
    }
}

/// Everything the builder needs besides the session.
#[derive(Clone, Copy)]
pub struct ObservationConfig<'a> {
    pub mode: ObservationMode,
    pub budget: TextBudget,
    pub captioner: Option<&'a dyn Captioner>,
    pub som: Option<&'a dyn SomProvider>,
}

impl fmt::Debug for ObservationConfig<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObservationConfig")
            .field("mode", &self.mode)
            .field("budget", &self.budget)
            .field("captioner", &self.captioner.is_some())
            .field("som", &self.som.is_some())
            .finish()
    }
}

fn tree_targets(root: &AxNode) -> BTreeMap<u64, ElementTarget> {
    let mut map = BTreeMap::new();
    root.walk(&mut |n, _| {
        if let Some(t) = &n.target {
            map.insert(n.node_id, t.clone());
        }
    });
    map
}

/// Captures the current page and renders it for `cfg.mode`.
pub fn build_observation(
    session: &mut SessionHandle,
    input_images: &[Arc<Raster>],
    cfg: &ObservationConfig<'_>,
) -> Result<Observation, ObservationError> {
    let mode = cfg.mode;
    if mode.has_captions() && cfg.captioner.is_none() {
        return Err(ObservationError::MissingComponent(mode, "captioner"));
    }
    let tabs = session.tabs()?;
    let (url, text, screenshot, manifest, targets) = if mode.is_som() {
        let som = cfg
            .som
            .ok_or(ObservationError::MissingComponent(mode, "set-of-marks provider"))?;
        let annotation = som.annotate(session)?;
        let snap = session.capture_snapshot()?;
        som.clear(session)?;
        let mut manifest = annotation.manifest;
        let mut raster = (*snap.screenshot).clone();
        if !annotation.overlays_in_page {
            draw_marks(&mut raster, &manifest);
        }
        if let Some(captioner) = cfg.captioner {
            let mut fetch = |t: &ElementTarget| session.browser().element_image(t).ok();
            augment_manifest_with_captions(&mut manifest, captioner, &mut fetch);
        }
        let targets = manifest
            .marks()
            .map(|m| (m.id, ElementTarget::Css(m.selector.clone())))
            .collect();
        (
            snap.url,
            render_som_text(&manifest),
            Arc::new(raster),
            Some(manifest),
            targets,
        )
    } else {
        let snap = session.capture_snapshot()?;
        let mut tree = snap.accessibility;
        if let Some(captioner) = cfg.captioner.filter(|_| mode.has_captions()) {
            let mut fetch = |t: &ElementTarget| session.browser().element_image(t).ok();
            augment_tree_with_captions(&mut tree, captioner, &mut fetch);
        }
        let targets = tree_targets(&tree);
        (
            snap.url,
            flatten_accessibility_tree(&tree),
            snap.screenshot,
            None,
            targets,
        )
    };
    let text_payload = truncate_to_budget(&text, &cfg.budget);
    let truncated = text_payload != text;
    let image_payloads = if mode.has_images() {
        std::iter::once(screenshot.clone())
            .chain(input_images.iter().cloned())
            .collect()
    } else {
        Vec::new()
    };
    Ok(Observation {
        url,
        tabs,
        mode,
        text_payload,
        screenshot,
        image_payloads,
        som_manifest: manifest,
        targets,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::som::{BBox, SomMark};
    use proptest::prelude::*;

    fn mark(id: u64, tag: &str, text: &str) -> SomEntry {
        SomEntry::Mark(SomMark {
            id,
            bbox: BBox {
                x: 0.0,
                y: 0.0,
                width: 1.0,
                height: 1.0,
            },
            tag_type: tag.into(),
            text_content: text.into(),
            selector: format!("#m{id}"),
            src: None,
        })
    }

    #[test]
    fn som_lines_match_reference_examples() {
        let m = SomManifest {
            page_url: String::new(),
            entries: vec![
                mark(
                    31,
                    "IMG",
                    "Image, description: hp fx-7010dn fax machine, url: B08GKZ3ZKD.0.jpg",
                ),
                SomEntry::Static {
                    text: "$279.49".into(),
                },
                mark(33, "BUTTON", "Add to Cart"),
            ],
            skipped: vec![],
        };
        assert_eq!(
            render_som_text(&m),
            "[31] [IMG] [Image, description: hp fx-7010dn fax machine, url: B08GKZ3ZKD.0.jpg]\n\
             [] [StaticText] [$279.49]\n\
             [33] [BUTTON] [Add to Cart]"
        );
        assert_eq!(render_som_text(&SomManifest::default()), "");
    }

    #[test]
    fn image_description_uses_basename() {
        assert_eq!(
            image_description(Some("a red car"), "http://x.test/media/cars/red.png?v=2"),
            "Image, description: a red car, url: red.png"
        );
        assert_eq!(
            image_description(None, "b.jpg"),
            "Image, description: unavailable, url: b.jpg"
        );
    }

    #[test]
    fn tree_flattening_indents_and_drops_ignored() {
        let mut root = AxNode::new(1, "RootWebArea", "Home");
        let mut generic = AxNode::new(2, "generic", "");
        generic.ignored = true;
        let mut list = AxNode::new(3, "list", "");
        list.children.push(AxNode::new(7, "link", "Home"));
        generic.children.push(list);
        root.children.push(generic);
        let text = flatten_accessibility_tree(&root);
        assert_eq!(text, "[1] RootWebArea 'Home'\n\t[3] list ''\n\t\t[7] link 'Home'");
    }

    struct FixedCaption;
    impl Captioner for FixedCaption {
        fn caption(&self, _i: Arc<Raster>) -> Result<String, String> {
            Ok("a red car".into())
        }
    }
    struct Broken;
    impl Captioner for Broken {
        fn caption(&self, _i: Arc<Raster>) -> Result<String, String> {
            Err("down".into())
        }
    }

    fn tree_with_img() -> AxNode {
        let mut root = AxNode::new(1, "RootWebArea", "p");
        let mut img = AxNode::new(2, "img", "alt");
        img.properties.insert("src".into(), "/img/car.png".into());
        img.target = Some(ElementTarget::Css("img".into()));
        root.children.push(img);
        root.children.push(AxNode::new(3, "link", "x"));
        root
    }

    #[test]
    fn captions_rewrite_only_images() {
        let mut t = tree_with_img();
        let mut fetch = |_t: &ElementTarget| Some(Raster::filled(1, 1, [0, 0, 0]));
        augment_tree_with_captions(&mut t, &FixedCaption, &mut fetch);
        let text = flatten_accessibility_tree(&t);
        assert!(text.contains("Image, description: a red car, url: car.png"));
        assert!(text.contains("[3] link 'x'"));

        let mut t = tree_with_img();
        augment_tree_with_captions(&mut t, &Broken, &mut fetch);
        assert!(flatten_accessibility_tree(&t).contains("description: unavailable"));

        let mut plain = AxNode::new(1, "RootWebArea", "p");
        plain.children.push(AxNode::new(2, "link", "x"));
        let before = plain.clone();
        augment_tree_with_captions(&mut plain, &Broken, &mut fetch);
        assert_eq!(plain, before);
    }

    #[test]
    fn truncation_boundaries() {
        let b = TextBudget::chars(10);
        assert_eq!(truncate_to_budget("short", &b), "short");
        assert_eq!(truncate_to_budget("0123456789", &b), "0123456789");
        let b = TextBudget::DEFAULT;
        assert_eq!(b.limit_chars(), 15360);
        let line = "x".repeat(99);
        let text = vec![line.as_str(); 200].join("\n");
        assert_eq!(text.len(), 19999);
        let out = truncate_to_budget(&text, &b);
        assert!(out.chars().count() <= 15360);
        assert!(out.ends_with(TRUNCATION_MARKER));
        // every kept line is whole
        assert!(out.lines().filter(|l| *l != TRUNCATION_MARKER).all(|l| l.len() == 99));
    }

    #[test]
    fn token_units_round_up() {
        let b = TextBudget::tokens(10);
        assert_eq!(b.units_for_chars(40), 10);
        assert_eq!(b.units_for_chars(41), 11);
        assert_eq!(TextBudget::SHORT.limit_chars(), 2560);
    }

    #[test]
    fn mode_names() {
        for m in ObservationMode::ALL {
            assert_eq!(ObservationMode::parse(m.as_str()).unwrap(), m);
        }
        assert_eq!(ObservationMode::parse("som").unwrap(), ObservationMode::SomScreenshotCaps);
        assert!(ObservationMode::parse("html").is_err());
    }

    proptest! {
        #[test]
        fn truncation_is_idempotent_and_bounded(
            lines in proptest::collection::vec("[a-z ]{0,40}", 0..60),
            limit in 0usize..400,
        ) {
            let text = lines.join("\n");
            let b = TextBudget::chars(limit.max(1));
            let once = truncate_to_budget(&text, &b);
            prop_assert!(once.chars().count() <= b.limit_chars());
            prop_assert_eq!(truncate_to_budget(&once, &b), once.clone());
            if once != text {
                prop_assert!(once.is_empty() || once.ends_with(TRUNCATION_MARKER));
            }
        }

        #[test]
        fn som_text_round_trips(
            items in proptest::collection::vec(
                (any::<bool>(), "[A-Z]{1,8}", "[ -~]{0,30}"),
                0..30,
            ),
        ) {
            let mut entries = Vec::new();
            let mut next = 1;
            for (is_mark, tag, text) in &items {
                if *is_mark {
                    entries.push(mark(next, tag, text));
                    next += 1;
                } else {
                    entries.push(SomEntry::Static { text: text.clone() });
                }
            }
            let m = SomManifest { page_url: String::new(), entries, skipped: vec![] };
            let parsed = parse_som_text(&render_som_text(&m)).unwrap();
            prop_assert_eq!(parsed.len(), m.entries.len());
            for (line, entry) in parsed.iter().zip(&m.entries) {
                match entry {
                    SomEntry::Mark(mk) => {
                        prop_assert_eq!(line.id, Some(mk.id));
                        prop_assert_eq!(&line.tag_type, &mk.tag_type);
                        prop_assert_eq!(&line.text, &mk.text_content);
                    }
                    SomEntry::Static { text } => {
                        prop_assert_eq!(line.id, None);
                        prop_assert_eq!(line.tag_type.as_str(), "StaticText");
                        prop_assert_eq!(&line.text, text);
                    }
                }
            }
        }
    }
}
