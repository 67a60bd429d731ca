use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Separator between acceptable alternatives inside a reference string.
pub const OR_TOKEN: &str = " |OR| ";

/// One reference string with its accepted alternatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StringRef {
    pub alternatives: Vec<String>,
}

impl StringRef {
    pub fn parse(raw: &str) -> Self {
        Self {
            alternatives: raw.split(OR_TOKEN).map(str::to_string).collect(),
        }
    }

    pub fn literal(s: impl Into<String>) -> Self {
        Self {
            alternatives: vec![s.into()],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.alternatives.is_empty() {
            return Err("reference has no alternatives".into());
        }
        if self.alternatives.iter().any(|a| a.trim().is_empty()) {
            return Err(format!("reference `{self}` has an empty alternative"));
        }
        Ok(())
    }
}

impl fmt::Display for StringRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.alternatives.join(OR_TOKEN))
    }
}

impl Serialize for StringRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for StringRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(StringRef::parse(&raw))
    }
}

pub const FUNC_PREFIX: &str = "func:";
pub const LAST_PAGE: &str = "last_page";

/// Which page a page-state evaluator inspects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UrlSpec {
    /// Absolute or site-relative URL.
    Literal(String),
    /// Name of a resolver in the registry.
    Func(String),
    /// Final URL of the trajectory.
    LastPage,
}

impl UrlSpec {
    pub fn parse(raw: &str) -> Self {
        if let Some(name) = raw.strip_prefix(FUNC_PREFIX) {
            UrlSpec::Func(name.to_string())
        } else if raw == LAST_PAGE {
            UrlSpec::LastPage
        } else {
            UrlSpec::Literal(raw.to_string())
        }
    }
}

impl fmt::Display for UrlSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UrlSpec::Literal(u) => f.write_str(u),
            UrlSpec::Func(name) => write!(f, "{FUNC_PREFIX}{name}"),
            UrlSpec::LastPage => f.write_str(LAST_PAGE),
        }
    }
}

impl Serialize for UrlSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for UrlSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(UrlSpec::parse(&raw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractKind {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocatorQuery {
    pub selector: String,
    #[serde(default = "default_extract")]
    pub extract: ExtractKind,
}

fn default_extract() -> ExtractKind {
    ExtractKind::Text
}

/// Reward function building blocks, serialized as a `type`-tagged union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorSpec {
    ExactMatch {
        reference: String,
    },
    MustInclude {
        references: Vec<StringRef>,
    },
    MustExclude {
        references: Vec<StringRef>,
    },
    FuzzyMatch {
        reference: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        intent: Option<String>,
    },
    EvalVqa {
        question: String,
        answer: String,
    },
    EvalFuzzyImageMatch {
        reference_image: PathBuf,
        threshold: f64,
    },
    PageState {
        url: UrlSpec,
        locator: LocatorQuery,
        evaluators: Vec<EvaluatorSpec>,
    },
}

impl EvaluatorSpec {
    pub fn type_name(&self) -> &'static str {
        match self {
            EvaluatorSpec::ExactMatch { .. } => "exact_match",
            EvaluatorSpec::MustInclude { .. } => "must_include",
            EvaluatorSpec::MustExclude { .. } => "must_exclude",
            EvaluatorSpec::FuzzyMatch { .. } => "fuzzy_match",
            EvaluatorSpec::EvalVqa { .. } => "eval_vqa",
            EvaluatorSpec::EvalFuzzyImageMatch { .. } => "eval_fuzzy_image_match",
            EvaluatorSpec::PageState { .. } => "page_state",
        }
    }

    /// True for primitives that consume text rather than images.
    pub fn is_text_primitive(&self) -> bool {
        matches!(
            self,
            EvaluatorSpec::ExactMatch { .. }
                | EvaluatorSpec::MustInclude { .. }
                | EvaluatorSpec::MustExclude { .. }
                | EvaluatorSpec::FuzzyMatch { .. }
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            EvaluatorSpec::ExactMatch { .. } => Ok(()),
            EvaluatorSpec::MustInclude { references } | EvaluatorSpec::MustExclude { references } => {
                if references.is_empty() {
                    return Err(format!("{} needs at least one reference", self.type_name()));
                }
                references.iter().try_for_each(StringRef::validate)
            }
            EvaluatorSpec::FuzzyMatch { reference, .. } => {
                if reference.trim().is_empty() {
                    Err("fuzzy_match reference is empty".into())
                } else {
                    Ok(())
                }
            }
            EvaluatorSpec::EvalVqa { question, answer } => {
                if question.trim().is_empty() || answer.trim().is_empty() {
                    Err("eval_vqa needs a question and an answer".into())
                } else {
                    Ok(())
                }
            }
            EvaluatorSpec::EvalFuzzyImageMatch { threshold, .. } => {
                if (0.0..=1.0).contains(threshold) {
                    Ok(())
                } else {
                    Err(format!("threshold {threshold} outside [0, 1]"))
                }
            }
            EvaluatorSpec::PageState {
                url,
                locator,
                evaluators,
            } => {
                if let UrlSpec::Literal(u) | UrlSpec::Func(u) = url {
                    if u.trim().is_empty() {
                        return Err("page_state url is empty".into());
                    }
                }
                if locator.selector.trim().is_empty() {
                    return Err("locator selector is empty".into());
                }
                if evaluators.is_empty() {
                    return Err("page_state needs at least one inner evaluator".into());
                }
                for inner in evaluators {
                    if matches!(inner, EvaluatorSpec::PageState { .. }) {
                        return Err("page_state evaluators cannot nest".into());
                    }
                    let fits = match locator.extract {
                        ExtractKind::Text => inner.is_text_primitive(),
                        ExtractKind::Image => !inner.is_text_primitive(),
                    };
                    if !fits {
                        return Err(format!(
                            "{} cannot consume {:?} extraction",
                            inner.type_name(),
                            locator.extract
                        ));
                    }
                    inner.validate()?;
                }
                Ok(())
            }
        }
    }
}
