//! The page manifest and golden-file naming for the checked-in site pack.

use std::path::Path;

use serde::Deserialize;

use crate::FixtureError;

/// Text a locator is expected to extract from a page.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocatorExpectation {
    pub selector: String,
    pub texts: Vec<String>,
}

/// One page with hand-counted oracle metadata.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageEntry {
    pub url: String,
    pub interactable: usize,
    pub links: usize,
    #[serde(default)]
    pub static_texts: Option<usize>,
    #[serde(default)]
    pub locators: Vec<LocatorExpectation>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageManifest {
    #[serde(default)]
    pub note: String,
    pub pages: Vec<PageEntry>,
}

impl PageManifest {
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|e| FixtureError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| FixtureError::Data(format!("{}: {e}", path.display())))
    }
}

/// File-name stem for a page URL: `http://a.test/x/y?q=1` becomes `a.test_x_y_q-1`.
pub fn golden_slug(url: &str) -> String {
    let rest = url.split_once("://").map(|(_, r)| r).unwrap_or(url);
    let rest = rest.trim_end_matches('/');
    let mut out = String::with_capacity(rest.len());
    for c in rest.chars() {
        match c {
            '/' | '?' | '&' => out.push('_'),
            '=' => out.push('-'),
            c if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') => out.push(c),
            _ => out.push('~'),
        }
    }
    if !rest.contains('/') {
        out.push_str("_index");
    }
    out
}
