//! Execution-based reward functions.
//!
//! A task's evaluators are a conjunction of string primitives over the final
//! answer, visual primitives over the final screenshot, and page-state checks
//! that navigate to a URL and inspect the elements a locator selects.

pub mod spec;
pub mod ssim;
pub mod strings;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use spec::{EvaluatorSpec, ExtractKind, LocatorQuery, StringRef, UrlSpec, FUNC_PREFIX, LAST_PAGE, OR_TOKEN};
pub use ssim::{gaussian_kernel, ssim, ssim_planes, SsimParams};
pub use strings::{exact_match, must_exclude, must_include, normalize_for_match, vqa_reply_matches};

use crate::browser::{BrowserError, SessionHandle};
use crate::gateway::{Gateway, GatewayError, JudgeVerdict};
use crate::raster::{Raster, RasterError};
use crate::task::{resolve_site_url, Site, TaskSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("backend: {0}")]
    Backend(#[from] GatewayError),
    #[error("image: {0}")]
    Image(#[from] RasterError),
    #[error("browser: {0}")]
    Browser(#[from] BrowserError),
    #[error("no URL resolver named `{0}`")]
    UnknownResolver(String),
    #[error("resolver `{name}` failed: {message}")]
    Resolver { name: String, message: String },
    #[error("{0}")]
    Config(String),
}

/// 1 iff the judge says the prediction is correct. Partial credit scores 0.
pub fn fuzzy_match(judge: &Gateway, pred: &str, reference: &str, intent: &str) -> Result<u8, EvalError> {
    let verdict = judge.judge_fuzzy(intent, reference, pred)?;
    Ok(u8::from(verdict == JudgeVerdict::Correct))
}

pub fn eval_vqa(vqa: &Gateway, image: Arc<Raster>, question: &str, answer: &str) -> Result<u8, EvalError> {
    let reply = vqa.vqa(image, question)?;
    Ok(vqa_reply_matches(&reply, answer))
}

/// 1 iff the SSIM of `query` against `reference` reaches `threshold`.
pub fn eval_fuzzy_image_match(query: &Raster, reference: &Raster, threshold: f64) -> u8 {
    let s: f64 = ssim(query, reference, &SsimParams::default());
    u8::from(s >= threshold)
}

/// Scheme, host, port, path without trailing slash, and query; fragment dropped.
pub fn comparable_url(raw: &str) -> String {
    match url::Url::parse(raw) {
        Ok(u) => {
            let mut out = format!("{}://{}", u.scheme(), u.host_str().unwrap_or(""));
            if let Some(p) = u.port() {
                out.push_str(&format!(":{p}"));
            }
            out.push_str(u.path().trim_end_matches('/'));
            if let Some(q) = u.query() {
                out.push('?');
                out.push_str(q);
            }
            out
        }
        Err(_) => raw
            .split('#')
            .next()
            .unwrap_or(raw)
            .trim_end_matches('/')
            .to_string(),
    }
}

pub fn same_page(a: &str, b: &str) -> bool {
    comparable_url(a) == comparable_url(b)
}

/// What a `func:` resolver can see besides the session.
#[derive(Debug, Clone, Copy)]
pub struct ResolveContext<'a> {
    pub task: &'a TaskSpec,
    pub site_bases: &'a BTreeMap<Site, String>,
}

pub type UrlResolver =
    Arc<dyn Fn(&mut SessionHandle, &ResolveContext<'_>) -> Result<String, String> + Send + Sync>;

/// Named URL resolvers addressed by `func:<name>`.
#[derive(Clone, Default)]
pub struct ResolverRegistry {
    resolvers: BTreeMap<String, UrlResolver>,
}

impl fmt::Debug for ResolverRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.resolvers.keys()).finish()
    }
}

impl ResolverRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        f: impl Fn(&mut SessionHandle, &ResolveContext<'_>) -> Result<String, String> + Send + Sync + 'static,
    ) {
        self.resolvers.insert(name.into(), Arc::new(f));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.resolvers.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.resolvers.keys().map(String::as_str)
    }

    pub fn resolve(
        &self,
        name: &str,
        session: &mut SessionHandle,
        ctx: &ResolveContext<'_>,
    ) -> Result<String, EvalError> {
        let f = self
            .resolvers
            .get(name)
            .ok_or_else(|| EvalError::UnknownResolver(name.to_string()))?;
        f(session, ctx).map_err(|message| EvalError::Resolver {
            name: name.to_string(),
            message,
        })
    }

    /// Every `func:` name used by the tasks that has no registered resolver.
    pub fn missing_for<'t>(&self, tasks: impl IntoIterator<Item = &'t TaskSpec>) -> Vec<String> {
        fn walk(e: &EvaluatorSpec, out: &mut Vec<String>) {
            if let EvaluatorSpec::PageState { url, evaluators, .. } = e {
                if let UrlSpec::Func(n) = url {
                    out.push(n.clone());
                }
                evaluators.iter().for_each(|i| walk(i, out));
            }
        }
        let mut names = Vec::new();
        for t in tasks {
            t.evaluators.iter().for_each(|e| walk(e, &mut names));
        }
        names.sort();
        names.dedup();
        names.retain(|n| !self.contains(n));
        names
    }
}

/// Backends and configuration shared by every evaluation in a run.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub judge: &'a Gateway,
    pub vqa: &'a Gateway,
    pub registry: &'a ResolverRegistry,
    pub site_bases: &'a BTreeMap<Site, String>,
    /// Directory that reference image paths are relative to.
    pub task_dir: &'a Path,
}

/// The parts of a finished episode that evaluators consume.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeResult<'a> {
    pub final_answer: &'a str,
    /// Last URL the agent was on.
    pub final_url: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorResult {
    pub evaluator: String,
    /// `None` when evaluation itself failed.
    pub score: Option<u8>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub score: u8,
    /// Set when any evaluator could not run; the score is then meaningless.
    pub unevaluated: bool,
    pub details: Vec<EvaluatorResult>,
}

impl RewardOutcome {
    pub fn from_details(details: Vec<EvaluatorResult>) -> Self {
        let unevaluated = details.iter().any(|d| d.score.is_none());
        let score = if unevaluated {
            0
        } else {
            details.iter().map(|d| d.score.unwrap_or(0)).product()
        };
        Self {
            score,
            unevaluated,
            details,
        }
    }
}

/// What a primitive is applied to.
enum Subject<'a> {
    Text(&'a str),
    Image(Arc<Raster>),
}

fn apply_primitive(
    spec: &EvaluatorSpec,
    subject: &Subject<'_>,
    task: &TaskSpec,
    ctx: &EvalContext<'_>,
) -> Result<(u8, String), EvalError> {
    match (spec, subject) {
        (EvaluatorSpec::ExactMatch { reference }, Subject::Text(p)) => {
            let s = exact_match(p, reference);
            Ok((s, format!("exact_match({p:?}, {reference:?})")))
        }
        (EvaluatorSpec::MustInclude { references }, Subject::Text(p)) => {
            let s = must_include(p, references);
            let missing: Vec<String> = references
                .iter()
                .filter(|r| must_include(p, std::slice::from_ref(*r)) == 0)
                .map(|r| r.to_string())
                .collect();
            let msg = if missing.is_empty() {
                "all references present".to_string()
            } else {
                format!("missing {missing:?}")
            };
            Ok((s, msg))
        }
        (EvaluatorSpec::MustExclude { references }, Subject::Text(p)) => {
            let s = must_exclude(p, references);
            let found: Vec<String> = references
                .iter()
                .filter(|r| must_exclude(p, std::slice::from_ref(*r)) == 0)
                .map(|r| r.to_string())
                .collect();
            let msg = if found.is_empty() {
                "no excluded reference present".to_string()
            } else {
                format!("found {found:?}")
            };
            Ok((s, msg))
        }
        (EvaluatorSpec::FuzzyMatch { reference, intent }, Subject::Text(p)) => {
            let intent = intent.as_deref().unwrap_or(&task.intent);
            let s = fuzzy_match(ctx.judge, p, reference, intent)?;
            Ok((s, format!("judge on {p:?} vs {reference:?}")))
        }
        (EvaluatorSpec::EvalVqa { question, answer }, Subject::Image(img)) => {
            let s = eval_vqa(ctx.vqa, img.clone(), question, answer)?;
            Ok((s, format!("vqa {question:?} expecting {answer:?}")))
        }
        (
            EvaluatorSpec::EvalFuzzyImageMatch {
                reference_image,
                threshold,
            },
            Subject::Image(img),
        ) => {
            let reference = Raster::load(&ctx.task_dir.join(reference_image))?;
            let value: f64 = ssim(img, &reference, &SsimParams::default());
            let s = u8::from(value >= *threshold);
            Ok((s, format!("ssim {value:.4} vs threshold {threshold}")))
        }
        (other, _) => Err(EvalError::Config(format!(
            "{} applied to the wrong kind of input",
            other.type_name()
        ))),
    }
}

fn navigate_for(
    url: &UrlSpec,
    session: &mut SessionHandle,
    task: &TaskSpec,
    episode: &EpisodeResult<'_>,
    ctx: &EvalContext<'_>,
) -> Result<String, EvalError> {
    let target = match url {
        UrlSpec::Literal(u) => resolve_site_url(u, task.site, ctx.site_bases).map_err(EvalError::Config)?,
        UrlSpec::Func(name) => {
            let rc = ResolveContext {
                task,
                site_bases: ctx.site_bases,
            };
            ctx.registry.resolve(name, session, &rc)?
        }
        UrlSpec::LastPage => match episode.final_url {
            Some(u) => u.to_string(),
            None => session.current_url()?,
        },
    };
    let current = session.current_url()?;
    if !(matches!(url, UrlSpec::LastPage) && same_page(&current, &target)) {
        session.goto(&target)?;
    }
    Ok(target)
}

/// Navigates per the URL spec, applies the locator, and runs the inner
/// evaluators. Text matches are newline-joined; every image must pass.
pub fn evaluate_page_state(
    spec: &EvaluatorSpec,
    session: &mut SessionHandle,
    task: &TaskSpec,
    episode: &EpisodeResult<'_>,
    ctx: &EvalContext<'_>,
) -> Result<(u8, String), EvalError> {
    let EvaluatorSpec::PageState {
        url,
        locator,
        evaluators,
    } = spec
    else {
        return Err(EvalError::Config(format!("{} is not page_state", spec.type_name())));
    };
    let target = navigate_for(url, session, task, episode, ctx)?;
    let found = session.browser().locate(&locator.selector, locator.extract)?;
    if found.is_empty() {
        return Ok((0, format!("locator empty: `{}` on {target}", locator.selector)));
    }
    let mut notes = Vec::new();
    match locator.extract {
        ExtractKind::Text => {
            let text = found.iter().map(|e| e.text.as_str()).collect::<Vec<_>>().join("\n");
            for inner in evaluators {
                let (s, msg) = apply_primitive(inner, &Subject::Text(&text), task, ctx)?;
                notes.push(format!("{}: {s} ({msg})", inner.type_name()));
                if s == 0 {
                    return Ok((0, notes.join("; ")));
                }
            }
        }
        ExtractKind::Image => {
            for (i, el) in found.into_iter().enumerate() {
                let img = el.image.ok_or_else(|| {
                    EvalError::Config(format!("match {i} of `{}` has no image", locator.selector))
                })?;
                let img = Arc::new(img);
                for inner in evaluators {
                    let (s, msg) = apply_primitive(inner, &Subject::Image(img.clone()), task, ctx)?;
                    notes.push(format!("image {i} {}: {s} ({msg})", inner.type_name()));
                    if s == 0 {
                        return Ok((0, notes.join("; ")));
                    }
                }
            }
        }
    }
    Ok((1, notes.join("; ")))
}

/// Conjunction over every evaluator of the task.
pub fn evaluate_task(
    task: &TaskSpec,
    episode: &EpisodeResult<'_>,
    session: &mut SessionHandle,
    ctx: &EvalContext<'_>,
) -> RewardOutcome {
    let mut details = Vec::with_capacity(task.evaluators.len());
    let mut screenshot: Option<Arc<Raster>> = None;
    for spec in &task.evaluators {
        let result = match spec {
            EvaluatorSpec::PageState { .. } => evaluate_page_state(spec, session, task, episode, ctx),
            EvaluatorSpec::EvalVqa { .. } | EvaluatorSpec::EvalFuzzyImageMatch { .. } => {
                // image primitives at top level read the final screenshot
                let shot = match &screenshot {
                    Some(s) => Ok(s.clone()),
                    None => session.capture_snapshot().map(|s| s.screenshot).map_err(EvalError::from),
                };
                shot.and_then(|img| {
                    screenshot = Some(img.clone());
                    apply_primitive(spec, &Subject::Image(img), task, ctx)
                })
            }
            _ => apply_primitive(spec, &Subject::Text(episode.final_answer), task, ctx),
        };
        details.push(match result {
            Ok((score, message)) => EvaluatorResult {
                evaluator: spec.type_name().to_string(),
                score: Some(score),
                message,
            },
            Err(e) => {
                tracing::warn!(task = %task.task_id, evaluator = spec.type_name(), error = %e, "evaluation failed");
                EvaluatorResult {
                    evaluator: spec.type_name().to_string(),
                    score: None,
                    message: e.to_string(),
                }
            }
        });
    }
    RewardOutcome::from_details(details)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Backend, BackendProfile, CompletionRequest, TransportError};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Canned {
        reply: &'static str,
        calls: AtomicUsize,
    }

    impl Backend for Canned {
        fn send(&self, _r: &CompletionRequest) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.reply.to_string())
        }
    }

    fn gw(reply: &'static str) -> (Gateway, Arc<Canned>) {
        let b = Arc::new(Canned {
            reply,
            calls: AtomicUsize::new(0),
        });
        (Gateway::new(BackendProfile::fake("f", true), b.clone()), b)
    }

    #[test]
    fn fuzzy_match_scores() {
        let (g, b) = gw("partially correct");
        assert_eq!(fuzzy_match(&g, "same", "same", "i").unwrap(), 1);
        assert_eq!(b.calls.load(Ordering::SeqCst), 0);
        assert_eq!(fuzzy_match(&g, "a", "b", "i").unwrap(), 0);
        let (g, _) = gw("Correct.");
        assert_eq!(fuzzy_match(&g, "a", "b", "i").unwrap(), 1);
    }

    #[test]
    fn vqa_substring_rule() {
        let img = Arc::new(Raster::filled(2, 2, [0, 200, 0]));
        for (reply, answer, want) in [
            ("yes", "yes", 1),
            ("no", "yes", 0),
            ("Yes, it is green", "yes", 1),
            ("YES", "yes", 1),
        ] {
            let b = Arc::new(Canned {
                reply,
                calls: AtomicUsize::new(0),
            });
            let g = Gateway::new(BackendProfile::fake("v", true), b);
            assert_eq!(eval_vqa(&g, img.clone(), "Is this shirt green? (yes/no)", answer).unwrap(), want);
        }
    }

    #[test]
    fn image_match_threshold_edges() {
        let a = Raster::filled(16, 16, [10, 20, 30]);
        assert_eq!(eval_fuzzy_image_match(&a, &a, 1.0), 1);
        let mut b = a.clone();
        b.fill_rect(0, 0, 8, 16, [250, 250, 250]);
        assert_eq!(eval_fuzzy_image_match(&b, &a, 0.0), 1);
        assert_eq!(eval_fuzzy_image_match(&b, &a, 0.99), 0);
    }

    #[test]
    fn url_comparison_ignores_slash_and_fragment() {
        assert!(same_page("http://a.test/x/?q=1#top", "http://a.test/x?q=1"));
        assert!(!same_page("http://a.test/x?q=1", "http://a.test/x?q=2"));
        assert!(!same_page("http://a.test/x", "https://a.test/x"));
    }

    #[test]
    fn outcome_is_a_conjunction() {
        let r = |s: Option<u8>| EvaluatorResult {
            evaluator: "x".into(),
            score: s,
            message: String::new(),
        };
        assert_eq!(RewardOutcome::from_details(vec![r(Some(1)), r(Some(1))]).score, 1);
        assert_eq!(RewardOutcome::from_details(vec![r(Some(1)), r(Some(0))]).score, 0);
        let o = RewardOutcome::from_details(vec![r(Some(1)), r(None)]);
        assert!(o.unevaluated);
        assert_eq!(o.score, 0);
        assert_eq!(RewardOutcome::from_details(vec![]).score, 1);
    }

    #[test]
    fn registry_reports_missing_names() {
        let mut reg = ResolverRegistry::new();
        reg.register("known", |_s, _c| Ok("http://x.test/".into()));
        assert!(reg.contains("known"));
        assert!(!reg.contains("other"));
    }
}
