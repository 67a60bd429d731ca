//! One PASS/FAIL line per acceptance criterion. Exits nonzero on any failure.
//!
//! Run with `cargo test -p webtask-cli --test acceptance`.

#[path = "../../core/tests/support/mod.rs"]
mod core_support;
#[path = "../../fixtures/tests/support/mod.rs"]
mod fixture_support;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::test_runner::{Config, TestRunner};
use webtask_core::action::{parse_action, render_action, ParsedAction};
use webtask_core::browser::{SessionHandle, Viewport};
use webtask_core::eval::spec::StringRef;
use webtask_core::eval::strings::{must_exclude, must_include};
use webtask_core::eval::{ssim, SsimParams};
use webtask_core::gateway::{BackendProfile, Gateway, ScriptedBackend};
use webtask_core::observation::{build_observation, truncate_to_budget, ObservationConfig, ObservationMode, TextBudget};
use webtask_core::report::aggregate;
use webtask_core::runner::{REPORT_JSON, REPORT_TEXT, RESULT_FILE, TRAJECTORY_FILE};
use webtask_fixtures::{golden_dir, golden_slug, precomputed_som, scripts_dir, www_dir, FixtureBrowser, FixtureServer, PageManifest};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn refs(items: &[&str]) -> Vec<StringRef> {
    items.iter().map(|s| StringRef::parse(s)).collect()
}

fn strings() -> Outcome {
    let list = "$1.99, $2.50, $10.00";
    let cases = [
        (must_include(list, &refs(&["1.99", "2.50", "10.00"])), 1, "include price list"),
        (must_exclude(list, &refs(&["1.50", "2.00"])), 1, "exclude absent prices"),
        (must_include("listed at $25,000", &refs(&["$25000 |OR| $25,000"])), 1, "include comma form"),
        (must_include("listed at $25000", &refs(&["$25000 |OR| $25,000"])), 1, "include bare form"),
        (must_exclude("listed at $25000", &refs(&["$30000 |OR| $30,000"])), 1, "exclude other price"),
        (must_exclude("listed at $30,000", &refs(&["$30000 |OR| $30,000"])), 0, "exclude hit"),
        (must_include("listed at $30000", &refs(&["$25000 |OR| $25,000"])), 0, "include miss"),
    ];
    for (got, want, name) in cases {
        ensure(got == want, || format!("{name}: got {got}, want {want}"))?;
    }
    Ok(format!("{} cases", cases.len()))
}

fn ssim_checks() -> Outcome {
    let params = SsimParams::<f64>::default();
    let pairs = core_support::random_pairs(0xACCE, 20);
    let mut worst = 0f64;
    for (i, (a, b)) in pairs.iter().enumerate() {
        let ab = ssim(a, b, &params);
        let reference = core_support::brute_force_ssim(a, b);
        worst = worst.max((ab - reference).abs());
        ensure((ab - reference).abs() < 1e-6, || format!("pair {i}: {ab} vs reference {reference}"))?;
        let ba = ssim(b, a, &params);
        ensure((ab - ba).abs() < 1e-9, || format!("pair {i} asymmetric: {ab} vs {ba}"))?;
        let aa = ssim(a, a, &params);
        ensure((aa - 1.0).abs() < 1e-9, || format!("pair {i} identity: {aa}"))?;
    }
    Ok(format!("20 pairs, max deviation from reference {worst:.2e}"))
}

fn action_grammar() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1200,
        failure_persistence: None,
        ..Config::default()
    });
    let count = std::cell::Cell::new(0usize);
    runner
        .run(&core_support::any_action(), |action| {
            count.set(count.get() + 1);
            let text = render_action(&action);
            let parsed = parse_action(&text).map_err(|e| proptest::test_runner::TestCaseError::fail(format!("{text}: {e}")))?;
            proptest::prop_assert_eq!(parsed, action);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let count = count.get();
    ensure(count >= 1000, || format!("only {count} cases ran"))?;
    let samples = [
        ("stop [$279.49]", ParsedAction::Stop { answer: "$279.49".into() }),
        ("click [11]", ParsedAction::Click { id: 11 }),
        ("type [5] [guitar] [1]", ParsedAction::Type { id: 5, text: "guitar".into(), press_enter: true }),
    ];
    for (body, want) in samples {
        let raw = format!("Some reasoning first. In summary, the next action I will perform is ```{body}```");
        let got = parse_action(&raw).map_err(|e| format!("{body}: {e}"))?;
        ensure(got == want, || format!("{body} parsed as {got:?}"))?;
    }
    Ok(format!("{count} round trips, 3 sample replies"))
}

fn observation_goldens() -> Outcome {
    let server = Arc::new(FixtureServer::start(&www_dir()).map_err(|e| e.to_string())?);
    let browser = FixtureBrowser::with_server(server.clone(), Viewport::DEFAULT, None);
    let mut session = SessionHandle::new(Box::new(browser), "fixture");
    let backend = ScriptedBackend::load(&scripts_dir().join("captions.json")).map_err(|e| e.to_string())?;
    let captioner = Gateway::new(BackendProfile::fake("fixture", true), Arc::new(backend));
    // the annotator is replaced by the recorded manifests
    let som = precomputed_som().map_err(|e| e.to_string())?;
    let pages = PageManifest::load(&webtask_fixtures::manifest_file()).map_err(|e| e.to_string())?.pages;
    let mut compared = 0;
    for page in &pages {
        for mode in ObservationMode::ALL {
            session.goto(&page.url).map_err(|e| e.to_string())?;
            let cfg = ObservationConfig {
                mode,
                budget: TextBudget::DEFAULT,
                captioner: Some(&captioner),
                som: Some(&som),
            };
            let obs = build_observation(&mut session, &[], &cfg).map_err(|e| e.to_string())?;
            let actual = format!("{}\n{}\n", obs.tabs_header(), obs.text_payload);
            let path = golden_dir().join(format!("{}.{}.txt", golden_slug(&page.url), mode.as_str()));
            let expected = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            ensure(actual == expected, || format!("{} differs", path.display()))?;
            compared += 1;
        }
    }

    let budget = TextBudget::DEFAULT;
    ensure(budget.limit_chars() == 15360, || format!("limit is {}", budget.limit_chars()))?;
    let line = "y".repeat(127);
    let exact: String = [line.as_str(); 120].join("\n") + &"z".repeat(15360 - 120 * 128 + 1);
    ensure(exact.chars().count() == 15360, || "boundary text miscounted".into())?;
    ensure(truncate_to_budget(&exact, &budget) == exact, || "text at the limit was cut".into())?;
    let over = format!("{exact}!");
    let cut = truncate_to_budget(&over, &budget);
    ensure(cut != over && cut.chars().count() <= 15360, || format!("one char over gave {} chars", cut.chars().count()))?;
    ensure(budget.units_for_chars(15360) == 3840 && budget.units_for_chars(15361) == 3841, || "token count off".into())?;
    Ok(format!("{compared} golden files across {} pages; boundary at 15360 chars", pages.len()))
}

fn end_to_end() -> Outcome {
    let tasks = fixture_support::fixture_tasks();
    ensure(tasks.tasks.len() == 10, || format!("{} tasks", tasks.tasks.len()))?;
    let start = Instant::now();
    let mut hosts = Vec::new();
    for mode in ObservationMode::ALL {
        for (script, want) in [("oracle.json", 10), ("adversarial.json", 0)] {
            let out = tempfile::tempdir().map_err(|e| e.to_string())?;
            let run = fixture_support::run_pack(&tasks, script, mode, out.path(), 1);
            let got = fixture_support::successes(&run.report);
            ensure(got == want, || format!("{script} in {mode}: {got}/10"))?;
            ensure(run.report.aggregates.unevaluated == 0, || format!("{script} in {mode}: unevaluated rows"))?;
            hosts.extend(run.hosts);
        }
    }
    // SoM again with the annotator stubbed by recorded manifests
    let static_tasks = fixture_support::static_tasks();
    for (script, want) in [("oracle.json", static_tasks.tasks.len()), ("adversarial.json", 0)] {
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let run = fixture_support::run_pack_precomputed(&static_tasks, script, out.path());
        let got = fixture_support::successes(&run.report);
        ensure(got == want, || format!("{script} with recorded manifests: {got}/{}", static_tasks.tasks.len()))?;
        hosts.extend(run.hosts);
    }
    let elapsed = start.elapsed();
    hosts.sort();
    hosts.dedup();
    let stray: Vec<_> = hosts.iter().filter(|h| !fixture_support::allowed_host(h)).collect();
    ensure(stray.is_empty(), || format!("contacted {stray:?}"))?;
    ensure(elapsed < Duration::from_secs(180), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "oracle 10/10 and adversary 0/10 in all 4 modes; static som tasks with recorded manifests {n}/{n} and 0/{n}; hosts {hosts:?}; {:.1}s",
        elapsed.as_secs_f64(),
        n = static_tasks.tasks.len()
    ))
}

fn aggregation() -> Outcome {
    let a = aggregate(&core_support::synthetic_rows([23, 36, 90]));
    let overall = a.overall.value().ok_or("no evaluated rows")? * 100.0;
    ensure((overall - 16.37).abs() < 0.05, || format!("overall {overall}"))?;
    let whole = (a.overall.successes, a.overall.total);
    let sum = |rates: Vec<(usize, usize)>| rates.into_iter().fold((0, 0), |(s, t), (x, y)| (s + x, t + y));
    ensure(sum(a.by_site.values().map(|r| (r.successes, r.total)).collect()) == whole, || "sites do not partition".into())?;
    ensure(
        sum(a.difficulty_matrix.values().map(|r| (r.successes, r.total)).collect()) == whole,
        || "difficulty matrix does not partition".into(),
    )?;
    ensure(a.step_histogram.values().sum::<usize>() == a.tasks, || "histogram does not sum".into())?;
    ensure(a.by_subset.values().all(|r| r.successes <= r.total && r.total <= whole.1), || "subset exceeds whole".into())?;
    Ok(format!("overall {}", a.overall.percent()))
}

fn run_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for name in [REPORT_JSON, REPORT_TEXT] {
        files.insert(name.to_string(), fs::read(dir.join(name)).unwrap_or_default());
    }
    for entry in fs::read_dir(dir).into_iter().flatten().flatten() {
        if entry.path().is_dir() {
            let id = entry.file_name().to_string_lossy().to_string();
            for file in fs::read_dir(entry.path()).into_iter().flatten().flatten() {
                let name = file.file_name().to_string_lossy().to_string();
                if name == TRAJECTORY_FILE || name == RESULT_FILE || name.ends_with(".png") {
                    files.insert(format!("{id}/{name}"), fs::read(file.path()).unwrap_or_default());
                }
            }
        }
    }
    files
}

fn determinism() -> Outcome {
    let tasks = fixture_support::fixture_tasks();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    fixture_support::run_pack(&tasks, "oracle.json", ObservationMode::SomScreenshotCaps, a.path(), 1);
    fixture_support::run_pack(&tasks, "oracle.json", ObservationMode::SomScreenshotCaps, b.path(), 1);
    let (fa, fb) = (run_files(a.path()), run_files(b.path()));
    ensure(fa.keys().eq(fb.keys()), || "different file sets".into())?;
    let differing: Vec<_> = fa.iter().filter(|(k, v)| fb[*k] != **v).map(|(k, _)| k.clone()).collect();
    ensure(differing.is_empty(), || format!("differ: {differing:?}"))?;
    Ok(format!("{} files byte-identical", fa.len()))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 7] = [
        ("string primitives", Duration::from_secs(1), strings),
        ("ssim", Duration::from_secs(10), ssim_checks),
        ("action grammar", Duration::from_secs(5), action_grammar),
        ("observation formats", Duration::from_secs(30), observation_goldens),
        ("hermetic end-to-end run", Duration::from_secs(180), end_to_end),
        ("aggregation arithmetic", Duration::from_secs(1), aggregation),
        ("determinism", Duration::from_secs(180), determinism),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= limit {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{elapsed:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{elapsed:.2?}]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
