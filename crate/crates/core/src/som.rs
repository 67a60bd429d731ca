//! Set-of-Marks manifests: numbered element boxes drawn over the screenshot.
//!
//! Manifests come either from the in-page annotator script (which also draws
//! the overlays) or from precomputed per-page files, in which case the
//! overlays are painted onto the captured raster here.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::browser::{BrowserError, ElementResolver, ElementTarget, SessionHandle};
use crate::raster::Raster;

#[derive(Debug, Error)]
pub enum SomError {
    #[error(transparent)]
    Browser(#[from] BrowserError),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("no precomputed manifest for {0}")]
    NoManifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn intersects(&self, width: f64, height: f64) -> bool {
        self.x < width && self.y < height && self.x + self.width > 0.0 && self.y + self.height > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SomMark {
    pub id: u64,
    /// Viewport CSS pixels.
    pub bbox: BBox,
    pub tag_type: String,
    pub text_content: String,
    pub selector: String,
    /// Image source URL, for IMG marks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<String>,
}

/// Marks and non-interactable text runs, in document order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SomEntry {
    Mark(SomMark),
    Static { text: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SomManifest {
    pub page_url: String,
    pub entries: Vec<SomEntry>,
    /// Elements the annotator dropped mid-scan.
    pub skipped: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireStatic {
    text: String,
    /// Id of the mark this text precedes; `None` places it after all marks.
    #[serde(default)]
    before: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum WireStaticItem {
    Plain(String),
    Placed(WireStatic),
}

/// The annotator's serialized return value.
#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireManifest {
    marks: Vec<SomMark>,
    #[serde(default)]
    static_texts: Vec<WireStaticItem>,
    #[serde(default)]
    page_url: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    skipped: Vec<String>,
}

impl SomManifest {
    pub fn marks(&self) -> impl Iterator<Item = &SomMark> {
        self.entries.iter().filter_map(|e| match e {
            SomEntry::Mark(m) => Some(m),
            SomEntry::Static { .. } => None,
        })
    }

    pub fn static_texts(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().filter_map(|e| match e {
            SomEntry::Static { text } => Some(text.as_str()),
            SomEntry::Mark(_) => None,
        })
    }

    pub fn mark_count(&self) -> usize {
        self.marks().count()
    }

    pub fn mark(&self, id: u64) -> Option<&SomMark> {
        self.marks().find(|m| m.id == id)
    }

    /// Ids dense `1..=N` in order, positive boxes, unique selectors.
    pub fn validate(&self) -> Result<(), String> {
        let mut selectors = HashSet::new();
        for (i, m) in self.marks().enumerate() {
            if m.id != i as u64 + 1 {
                return Err(format!("mark #{i} has id {}, expected {}", m.id, i + 1));
            }
            if m.bbox.width <= 0.0 || m.bbox.height <= 0.0 {
                return Err(format!("mark {} has an empty box", m.id));
            }
            if !selectors.insert(m.selector.as_str()) {
                return Err(format!("mark {} repeats selector `{}`", m.id, m.selector));
            }
        }
        Ok(())
    }

    /// Decodes the annotator script's return value.
    pub fn from_script_value(value: &Value) -> Result<Self, SomError> {
        let wire: WireManifest = serde_json::from_value(value.clone())
            .map_err(|e| SomError::Manifest(e.to_string()))?;
        let mut before: BTreeMap<Option<u64>, Vec<String>> = BTreeMap::new();
        for item in wire.static_texts {
            match item {
                WireStaticItem::Plain(text) => before.entry(None).or_default().push(text),
                WireStaticItem::Placed(s) => before.entry(s.before).or_default().push(s.text),
            }
        }
        let mut entries = Vec::new();
        let ids: HashSet<u64> = wire.marks.iter().map(|m| m.id).collect();
        for mark in wire.marks {
            if let Some(texts) = before.remove(&Some(mark.id)) {
                entries.extend(texts.into_iter().map(|text| SomEntry::Static { text }));
            }
            entries.push(SomEntry::Mark(mark));
        }
        for (key, texts) in before {
            if let Some(id) = key {
                if !ids.contains(&id) {
                    return Err(SomError::Manifest(format!(
                        "static text placed before unknown mark {id}"
                    )));
                }
            }
            entries.extend(texts.into_iter().map(|text| SomEntry::Static { text }));
        }
        let manifest = SomManifest {
            page_url: wire.page_url,
            entries,
            skipped: wire.skipped,
        };
        manifest.validate().map_err(SomError::Manifest)?;
        Ok(manifest)
    }

    /// Encodes in the annotator's wire shape.
    pub fn to_script_value(&self) -> Value {
        let mut marks = Vec::new();
        let mut statics = Vec::new();
        let mut pending: Vec<String> = Vec::new();
        for e in &self.entries {
            match e {
                SomEntry::Static { text } => pending.push(text.clone()),
                SomEntry::Mark(m) => {
                    for text in pending.drain(..) {
                        statics.push(WireStaticItem::Placed(WireStatic {
                            text,
                            before: Some(m.id),
                        }));
                    }
                    marks.push(m.clone());
                }
            }
        }
        for text in pending {
            statics.push(WireStaticItem::Placed(WireStatic { text, before: None }));
        }
        serde_json::to_value(WireManifest {
            marks,
            static_texts: statics,
            page_url: self.page_url.clone(),
            skipped: self.skipped.clone(),
        })
        .expect("manifest serializes")
    }
}

impl ElementResolver for SomManifest {
    fn resolve(&self, id: u64) -> Option<ElementTarget> {
        self.mark(id).map(|m| ElementTarget::Css(m.selector.clone()))
    }
}

/// Overlay palette; a mark's box and label share `PALETTE[id % len]`.
pub const PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [128, 128, 0],
    [0, 0, 128],
    [170, 110, 40],
];

pub fn mark_color(id: u64) -> [u8; 3] {
    PALETTE[(id % PALETTE.len() as u64) as usize]
}

// 3x5 digit glyphs, one row per nibble, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

const GLYPH_SCALE: i64 = 2;

/// Paints a box outline and an id badge for every mark.
pub fn draw_marks(raster: &mut Raster, manifest: &SomManifest) {
    let (vw, vh) = (raster.width() as i64, raster.height() as i64);
    for mark in manifest.marks() {
        let color = mark_color(mark.id);
        let b = mark.bbox;
        let (x, y) = (b.x.round() as i64, b.y.round() as i64);
        let (w, h) = (b.width.round().max(1.0) as i64, b.height.round().max(1.0) as i64);
        raster.stroke_rect(x, y, w, h, 2, color);

        let digits: Vec<usize> = mark
            .id
            .to_string()
            .bytes()
            .map(|c| (c - b'0') as usize)
            .collect();
        let badge_w = digits.len() as i64 * 4 * GLYPH_SCALE + 2 * GLYPH_SCALE;
        let badge_h = 7 * GLYPH_SCALE;
        // top-left of the box, nudged inside the viewport
        let bx = x.clamp(0, (vw - badge_w).max(0));
        let by = y.clamp(0, (vh - badge_h).max(0));
        raster.fill_rect(bx, by, badge_w, badge_h, color);
        for (i, d) in digits.iter().enumerate() {
            let gx = bx + GLYPH_SCALE + i as i64 * 4 * GLYPH_SCALE;
            let gy = by + GLYPH_SCALE;
            for (row, bits) in DIGITS[*d].iter().enumerate() {
                for col in 0..3 {
                    if bits & (0b100 >> col) != 0 {
                        raster.fill_rect(
                            gx + col * GLYPH_SCALE,
                            gy + row as i64 * GLYPH_SCALE,
                            GLYPH_SCALE,
                            GLYPH_SCALE,
                            [255, 255, 255],
                        );
                    }
                }
            }
        }
    }
}

/// A fresh annotation of the current page.
#[derive(Debug, Clone)]
pub struct Annotation {
    pub manifest: SomManifest,
    /// True when the overlays are already rendered in the page itself.
    pub overlays_in_page: bool,
}

pub trait SomProvider: Send + Sync {
    fn annotate(&self, session: &mut SessionHandle) -> Result<Annotation, SomError>;
    fn clear(&self, session: &mut SessionHandle) -> Result<(), SomError>;
}

/// Injects the annotator script through the session.
#[derive(Debug, Clone)]
pub struct ScriptSomProvider {
    pub annotate_script: String,
    pub clear_script: String,
}

impl ScriptSomProvider {
    /// Loads `annotate.js` and `clear.js` from a directory.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        Ok(Self {
            annotate_script: std::fs::read_to_string(dir.join("annotate.js"))?,
            clear_script: std::fs::read_to_string(dir.join("clear.js"))?,
        })
    }
}

impl SomProvider for ScriptSomProvider {
    fn annotate(&self, session: &mut SessionHandle) -> Result<Annotation, SomError> {
        session.execute_script(&self.clear_script, &[])?;
        let value = session.execute_script(&self.annotate_script, &[])?;
        Ok(Annotation {
            manifest: SomManifest::from_script_value(&value)?,
            overlays_in_page: true,
        })
    }

    fn clear(&self, session: &mut SessionHandle) -> Result<(), SomError> {
        session.execute_script(&self.clear_script, &[])?;
        Ok(())
    }
}

/// Serves stored manifests keyed by page URL (fragment stripped).
#[derive(Debug, Clone, Default)]
pub struct PrecomputedSomProvider {
    by_url: BTreeMap<String, SomManifest>,
}

impl PrecomputedSomProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, manifest: SomManifest) {
        self.by_url.insert(url_key(&manifest.page_url), manifest);
    }

    pub fn len(&self) -> usize {
        self.by_url.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_url.is_empty()
    }

    pub fn get(&self, url: &str) -> Option<&SomManifest> {
        self.by_url.get(&url_key(url))
    }

    /// Loads every `*.json` manifest in a directory.
    pub fn load_dir(dir: &Path) -> Result<Self, SomError> {
        let mut provider = Self::new();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| SomError::Manifest(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| SomError::Manifest(format!("{}: {e}", path.display())))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| SomError::Manifest(format!("{}: {e}", path.display())))?;
            provider.insert(SomManifest::from_script_value(&value)?);
        }
        Ok(provider)
    }
}

fn url_key(url: &str) -> String {
    let no_frag = url.split('#').next().unwrap_or(url);
    match url::Url::parse(no_frag) {
        Ok(u) => u.to_string(),
        Err(_) => no_frag.to_string(),
    }
}

impl SomProvider for PrecomputedSomProvider {
    fn annotate(&self, session: &mut SessionHandle) -> Result<Annotation, SomError> {
        let url = session.current_url()?;
        let manifest = self
            .get(&url)
            .cloned()
            .ok_or_else(|| SomError::NoManifest(url.clone()))?;
        Ok(Annotation {
            manifest,
            overlays_in_page: false,
        })
    }

    fn clear(&self, _session: &mut SessionHandle) -> Result<(), SomError> {
        Ok(())
    }
}
