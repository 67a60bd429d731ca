//! Observation goldens for every page in the site manifest.
//!
//! Regenerate with `WEBTASK_BLESS=1 cargo test -p webtask-fixtures --test golden_observations`.

use std::path::Path;
use std::sync::Arc;

use webtask_core::browser::{SessionHandle, Viewport};
use webtask_core::eval::ExtractKind;
use webtask_core::gateway::{BackendProfile, Gateway, ScriptedBackend};
use webtask_core::observation::{build_observation, ObservationConfig, ObservationMode, TextBudget};
use webtask_core::raster::Raster;
use webtask_core::som::{SomProvider, SomManifest};
use webtask_fixtures::{
    fixture_som_provider, golden_dir, golden_slug, precomputed_som, scripts_dir, som_dir, www_dir,
    FixtureBrowser, FixtureServer, PageManifest,
};

/// Pages whose marked screenshot is kept as a PNG.
const PNG_PAGES: [&str; 3] = [
    "http://shopping.test/",
    "http://reddit.test/f/pics",
    "http://classifieds.test/contact",
];

fn blessing() -> bool {
    std::env::var_os("WEBTASK_BLESS").is_some_and(|v| v == "1")
}

struct Rig {
    _server: Arc<FixtureServer>,
    session: SessionHandle,
    captioner: Gateway,
}

fn rig() -> Rig {
    let server = Arc::new(FixtureServer::start(&www_dir()).unwrap());
    let browser = FixtureBrowser::with_server(server.clone(), Viewport::DEFAULT, None);
    let session = SessionHandle::new(Box::new(browser), "fixture");
    let backend = ScriptedBackend::load(&scripts_dir().join("captions.json")).unwrap();
    let captioner = Gateway::new(BackendProfile::fake("fixture", true), Arc::new(backend));
    Rig {
        _server: server,
        session,
        captioner,
    }
}

fn manifest() -> PageManifest {
    PageManifest::load(&webtask_fixtures::manifest_file()).unwrap()
}

fn check_text(path: &Path, actual: &str, failures: &mut Vec<String>) {
    if blessing() {
        std::fs::write(path, actual).unwrap();
        return;
    }
    match std::fs::read_to_string(path) {
        Ok(expected) if expected == actual => {}
        Ok(_) => failures.push(format!("{} differs", path.display())),
        Err(e) => failures.push(format!("{}: {e}", path.display())),
    }
}

#[test]
fn observations_match_goldens() {
    let mut rig = rig();
    let som = fixture_som_provider();
    let dir = golden_dir();
    std::fs::create_dir_all(&dir).unwrap();
    let mut failures = Vec::new();
    for page in manifest().pages {
        let slug = golden_slug(&page.url);
        for mode in ObservationMode::ALL {
            rig.session.goto(&page.url).unwrap();
            let cfg = ObservationConfig {
                mode,
                budget: TextBudget::DEFAULT,
                captioner: Some(&rig.captioner),
                som: Some(&som),
            };
            let obs = build_observation(&mut rig.session, &[], &cfg).unwrap();
            assert_eq!(obs.url, page.url, "landed somewhere else");
            let text = format!("{}\n{}\n", obs.tabs_header(), obs.text_payload);
            check_text(&dir.join(format!("{slug}.{}.txt", mode.as_str())), &text, &mut failures);

            if mode.is_som() && PNG_PAGES.contains(&page.url.as_str()) {
                let path = dir.join(format!("{slug}.som.png"));
                if blessing() {
                    std::fs::write(&path, obs.screenshot.encode_png().unwrap()).unwrap();
                } else {
                    match Raster::load(&path) {
                        Ok(expected) if expected.digest() == obs.screenshot.digest() => {}
                        Ok(_) => failures.push(format!("{} pixels differ", path.display())),
                        Err(e) => failures.push(format!("{}: {e}", path.display())),
                    }
                }
            }
        }
    }
    assert!(failures.is_empty(), "golden mismatches:\n{}", failures.join("\n"));
}

#[test]
fn hand_counts_match_rendered_pages() {
    let mut rig = rig();
    let som = fixture_som_provider();
    for page in manifest().pages {
        rig.session.goto(&page.url).unwrap();
        let snap = rig.session.capture_snapshot().unwrap();
        let mut targets = 0;
        snap.accessibility.walk(&mut |n, _| {
            if n.target.is_some() {
                targets += 1;
            }
        });
        assert_eq!(targets, page.interactable, "interactable count on {}", page.url);
        assert_eq!(snap.accessibility.count_role("link"), page.links, "link count on {}", page.url);

        let annotation = som.annotate(&mut rig.session).unwrap();
        som.clear(&mut rig.session).unwrap();
        // every fixture page fits the default viewport, so marks cover all elements
        assert_eq!(annotation.manifest.mark_count(), page.interactable, "marks on {}", page.url);
        if let Some(n) = page.static_texts {
            assert_eq!(annotation.manifest.static_texts().count(), n, "static texts on {}", page.url);
        }
    }
}

#[test]
fn locators_extract_expected_text() {
    let mut rig = rig();
    let mut checked = 0;
    for page in manifest().pages {
        for loc in &page.locators {
            rig.session.goto(&page.url).unwrap();
            let found = rig.session.browser().locate(&loc.selector, ExtractKind::Text).unwrap();
            let texts: Vec<_> = found.iter().map(|e| e.text.trim().to_string()).collect();
            assert_eq!(texts, loc.texts, "{} on {}", loc.selector, page.url);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn precomputed_manifests_match_live_annotation() {
    let mut rig = rig();
    let som = fixture_som_provider();
    let dir = som_dir();
    std::fs::create_dir_all(&dir).unwrap();
    let mut live = Vec::new();
    for page in manifest().pages {
        rig.session.goto(&page.url).unwrap();
        let manifest = som.annotate(&mut rig.session).unwrap().manifest;
        som.clear(&mut rig.session).unwrap();
        if blessing() {
            let path = dir.join(format!("{}.json", golden_slug(&page.url)));
            let body = serde_json::to_string_pretty(&manifest.to_script_value()).unwrap();
            std::fs::write(path, body + "\n").unwrap();
        }
        live.push(manifest);
    }
    let stored = precomputed_som().unwrap();
    assert_eq!(stored.len(), live.len());
    for m in &live {
        let s: &SomManifest = stored.get(&m.page_url).unwrap_or_else(|| panic!("no stored manifest for {}", m.page_url));
        assert_eq!(s, m, "stored manifest for {} is stale", m.page_url);
    }
}
