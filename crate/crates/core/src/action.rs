//! The agent action set and its text grammar.
//!
//! Model output carries a free-form rationale followed by
//! `In summary, the next action I will perform is ```<action>````. The parser
//! takes the last occurrence of that phrase and reads the fenced body.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SUMMARY_PHRASE: &str = "In summary, the next action I will perform is";
pub const FENCE: &str = "```";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("could not parse action: {reason}")]
pub struct ParseFailure {
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrollDirection {
    Up,
    Down,
}

impl ScrollDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            ScrollDirection::Up => "up",
            ScrollDirection::Down => "down",
        }
    }
}

/// Modifier keys in canonical order.
const MODIFIERS: [&str; 4] = ["Control", "Alt", "Shift", "Meta"];

/// A `+`-separated key combination, normalized case-insensitively
/// (`ctrl+V` and `Control+v` are the same combo).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct KeyCombo {
    /// Canonical modifier names, in `Control, Alt, Shift, Meta` order.
    modifiers: Vec<&'static str>,
    key: String,
}

impl KeyCombo {
    pub fn parse(raw: &str) -> Result<Self, String> {
        let tokens: Vec<&str> = raw.split('+').map(str::trim).collect();
        if tokens.iter().any(|t| t.is_empty()) {
            // "Control++" style: a literal plus key
            if raw.trim().ends_with("++") || raw.trim() == "+" {
                let head = raw.trim().trim_end_matches('+');
                let mut combo = if head.is_empty() {
                    KeyCombo {
                        modifiers: vec![],
                        key: String::new(),
                    }
                } else {
                    KeyCombo::parse(&format!("{head}+x"))?
                };
                combo.key = "+".into();
                return Ok(combo);
            }
            return Err(format!("empty key in combination `{raw}`"));
        }
        let (last, mods) = tokens.split_last().ok_or("empty key combination")?;
        let mut modifiers = Vec::new();
        for m in mods {
            let canon = canonical_modifier(m).ok_or_else(|| format!("unknown modifier `{m}`"))?;
            if !modifiers.contains(&canon) {
                modifiers.push(canon);
            }
        }
        modifiers.sort_by_key(|m| MODIFIERS.iter().position(|x| x == m));
        let key = match canonical_modifier(last) {
            Some(m) if mods.is_empty() => m.to_string(),
            _ => canonical_key(last),
        };
        Ok(KeyCombo { modifiers, key })
    }

    pub fn modifiers(&self) -> &[&'static str] {
        &self.modifiers
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn has_modifier(&self, name: &str) -> bool {
        self.modifiers.contains(&name)
    }
}

fn canonical_modifier(token: &str) -> Option<&'static str> {
    match token.to_ascii_lowercase().as_str() {
        "ctrl" | "control" => Some("Control"),
        "alt" | "option" => Some("Alt"),
        "shift" => Some("Shift"),
        "meta" | "cmd" | "command" | "super" | "win" => Some("Meta"),
        _ => None,
    }
}

const NAMED_KEYS: [&str; 20] = [
    "Enter", "Tab", "Escape", "Backspace", "Delete", "Space", "ArrowUp", "ArrowDown",
    "ArrowLeft", "ArrowRight", "Home", "End", "PageUp", "PageDown", "Insert", "F1", "F2", "F3",
    "F4", "F5",
];

fn canonical_key(token: &str) -> String {
    let lower = token.to_ascii_lowercase();
    match lower.as_str() {
        "return" => return "Enter".into(),
        "esc" => return "Escape".into(),
        "del" => return "Delete".into(),
        "up" => return "ArrowUp".into(),
        "down" => return "ArrowDown".into(),
        "left" => return "ArrowLeft".into(),
        "right" => return "ArrowRight".into(),
        _ => {}
    }
    if let Some(named) = NAMED_KEYS.iter().find(|k| k.to_ascii_lowercase() == lower) {
        return (*named).to_string();
    }
    if token.chars().count() == 1 {
        return lower;
    }
    token.to_string()
}

impl fmt::Display for KeyCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.modifiers {
            write!(f, "{m}+")?;
        }
        f.write_str(&self.key)
    }
}

impl TryFrom<String> for KeyCombo {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        KeyCombo::parse(&s)
    }
}

impl From<KeyCombo> for String {
    fn from(k: KeyCombo) -> String {
        k.to_string()
    }
}

/// One element of the action set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ParsedAction {
    Click { id: u64 },
    Hover { id: u64 },
    Type { id: u64, text: String, press_enter: bool },
    Press { keys: KeyCombo },
    Scroll { direction: ScrollDirection },
    NewTab,
    TabFocus { index: usize },
    TabClose,
    Goto { url: String },
    GoBack,
    GoForward,
    Stop { answer: String },
}

impl ParsedAction {
    pub fn name(&self) -> &'static str {
        match self {
            ParsedAction::Click { .. } => "click",
            ParsedAction::Hover { .. } => "hover",
            ParsedAction::Type { .. } => "type",
            ParsedAction::Press { .. } => "press",
            ParsedAction::Scroll { .. } => "scroll",
            ParsedAction::NewTab => "new_tab",
            ParsedAction::TabFocus { .. } => "tab_focus",
            ParsedAction::TabClose => "tab_close",
            ParsedAction::Goto { .. } => "goto",
            ParsedAction::GoBack => "go_back",
            ParsedAction::GoForward => "go_forward",
            ParsedAction::Stop { .. } => "stop",
        }
    }

    /// Element id the action targets, if any.
    pub fn element_id(&self) -> Option<u64> {
        match self {
            ParsedAction::Click { id } | ParsedAction::Hover { id } | ParsedAction::Type { id, .. } => {
                Some(*id)
            }
            _ => None,
        }
    }

    pub fn is_stop(&self) -> bool {
        matches!(self, ParsedAction::Stop { .. })
    }
}

impl fmt::Display for ParsedAction {
    /// The bare action body, e.g. `type [5] [guitar] [1]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParsedAction::Click { id } => write!(f, "click [{id}]"),
            ParsedAction::Hover { id } => write!(f, "hover [{id}]"),
            ParsedAction::Type {
                id,
                text,
                press_enter,
            } => write!(f, "type [{id}] [{text}] [{}]", u8::from(*press_enter)),
            ParsedAction::Press { keys } => write!(f, "press [{keys}]"),
            ParsedAction::Scroll { direction } => write!(f, "scroll [{}]", direction.as_str()),
            ParsedAction::NewTab => f.write_str("new_tab"),
            ParsedAction::TabFocus { index } => write!(f, "tab_focus [{index}]"),
            ParsedAction::TabClose => f.write_str("close_tab"),
            ParsedAction::Goto { url } => write!(f, "goto [{url}]"),
            ParsedAction::GoBack => f.write_str("go_back"),
            ParsedAction::GoForward => f.write_str("go_forward"),
            ParsedAction::Stop { answer } => write!(f, "stop [{answer}]"),
        }
    }
}

/// Full model-output form: summary phrase plus fenced body.
pub fn render_action(action: &ParsedAction) -> String {
    format!("{SUMMARY_PHRASE} {FENCE}{action}{FENCE}")
}

/// Extracts the action from raw model output.
pub fn parse_action(raw: &str) -> Result<ParsedAction, ParseFailure> {
    let fail = |reason: &str| ParseFailure {
        reason: reason.to_string(),
        raw: raw.to_string(),
    };
    let at = raw
        .rfind(SUMMARY_PHRASE)
        .ok_or_else(|| fail("missing summary phrase"))?;
    let tail = &raw[at + SUMMARY_PHRASE.len()..];
    let open = tail.find(FENCE).ok_or_else(|| fail("missing opening fence"))?;
    let body_and_rest = &tail[open + FENCE.len()..];
    let close = body_and_rest
        .find(FENCE)
        .ok_or_else(|| fail("missing closing fence"))?;
    parse_action_body(&body_and_rest[..close]).map_err(|reason| ParseFailure {
        reason,
        raw: raw.to_string(),
    })
}

/// Parses a bare action body such as `click [11]`.
pub fn parse_action_body(body: &str) -> Result<ParsedAction, String> {
    let body = body.trim_matches(|c: char| c == ' ' || c == '\t' || c == '\r' || c == '\n');
    let split = body
        .find(|c: char| c == '[' || c.is_whitespace())
        .unwrap_or(body.len());
    let verb = body[..split].to_ascii_lowercase();
    let rest = body[split..].trim_start();

    let no_args = |action: ParsedAction| {
        if rest.is_empty() {
            Ok(action)
        } else {
            Err(format!("`{verb}` takes no arguments"))
        }
    };

    match verb.as_str() {
        "click" => Ok(ParsedAction::Click {
            id: parse_id(single_arg(rest)?)?,
        }),
        "hover" => Ok(ParsedAction::Hover {
            id: parse_id(single_arg(rest)?)?,
        }),
        "type" => parse_type(rest),
        "press" => {
            let keys = KeyCombo::parse(single_arg(rest)?)?;
            Ok(ParsedAction::Press { keys })
        }
        "scroll" => {
            let arg = single_arg(rest)?.trim().to_ascii_lowercase();
            let arg = arg.strip_prefix("direction=").unwrap_or(&arg);
            let direction = match arg {
                "up" => ScrollDirection::Up,
                "down" => ScrollDirection::Down,
                other => return Err(format!("unknown scroll direction `{other}`")),
            };
            Ok(ParsedAction::Scroll { direction })
        }
        "new_tab" => no_args(ParsedAction::NewTab),
        "tab_focus" => {
            let index = single_arg(rest)?
                .trim()
                .parse()
                .map_err(|_| "tab index must be a nonnegative integer".to_string())?;
            Ok(ParsedAction::TabFocus { index })
        }
        "tab_close" | "close_tab" => no_args(ParsedAction::TabClose),
        "goto" => {
            let url = single_arg(rest)?.trim();
            if url.is_empty() {
                return Err("goto needs a URL".into());
            }
            Ok(ParsedAction::Goto {
                url: url.to_string(),
            })
        }
        "go_back" => no_args(ParsedAction::GoBack),
        "go_forward" => no_args(ParsedAction::GoForward),
        "stop" => {
            if rest.is_empty() {
                Ok(ParsedAction::Stop {
                    answer: String::new(),
                })
            } else {
                Ok(ParsedAction::Stop {
                    answer: single_arg(rest)?.to_string(),
                })
            }
        }
        "" => Err("empty action".into()),
        other => Err(format!("unknown action `{other}`")),
    }
}

/// Content between the first `[` and the last `]`.
fn single_arg(rest: &str) -> Result<&str, String> {
    let rest = rest.trim_end();
    if !rest.starts_with('[') || !rest.ends_with(']') || rest.len() < 2 {
        return Err(format!("expected a bracketed argument, got `{rest}`"));
    }
    Ok(&rest[1..rest.len() - 1])
}

fn parse_id(arg: &str) -> Result<u64, String> {
    arg.trim()
        .parse()
        .map_err(|_| format!("element id `{arg}` is not a nonnegative integer"))
}

/// `type [id] [text]` or `type [id] [text] [0|1]`; the text spans from the
/// second `[` to the `]` before the optional flag, so it may contain brackets.
fn parse_type(rest: &str) -> Result<ParsedAction, String> {
    let rest = rest.trim_end();
    if !rest.starts_with('[') {
        return Err("type needs an element id".into());
    }
    let close = rest.find(']').ok_or("unterminated element id")?;
    let id = parse_id(&rest[1..close])?;
    let after = rest[close + 1..].trim_start();
    if !after.starts_with('[') || !after.ends_with(']') || after.len() < 2 {
        return Err("type needs a text argument".into());
    }
    let inner = &after[1..after.len() - 1];
    // trailing `] [0]` / `] [1]` is the press-enter flag
    if let Some(flag_open) = inner.rfind('[') {
        let flag = inner[flag_open + 1..].trim();
        let before = inner[..flag_open].trim_end();
        if (flag == "0" || flag == "1") && before.ends_with(']') {
            return Ok(ParsedAction::Type {
                id,
                text: before[..before.len() - 1].to_string(),
                press_enter: flag == "1",
            });
        }
    }
    Ok(ParsedAction::Type {
        id,
        text: inner.to_string(),
        press_enter: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_ok(s: &str) -> ParsedAction {
        parse_action(s).unwrap_or_else(|e| panic!("{s:?}: {e}"))
    }

    #[test]
    fn verbatim_model_outputs() {
        assert_eq!(
            parse_ok("I will issue the stop action. In summary, the next action I will perform is ```stop [$279.49]```"),
            ParsedAction::Stop {
                answer: "$279.49".into()
            }
        );
        assert_eq!(
            parse_ok("In summary, the next action I will perform is ```click [11]```"),
            ParsedAction::Click { id: 11 }
        );
        assert_eq!(
            parse_ok("In summary, the next action I will perform is ```type [5] [guitar]  [1]```"),
            ParsedAction::Type {
                id: 5,
                text: "guitar".into(),
                press_enter: true
            }
        );
    }

    #[test]
    fn nested_brackets_in_text() {
        assert_eq!(
            parse_ok("In summary, the next action I will perform is ```type [12] [Hello [World]] [0]```"),
            ParsedAction::Type {
                id: 12,
                text: "Hello [World]".into(),
                press_enter: false
            }
        );
    }

    #[test]
    fn type_flag_defaults_to_enter() {
        assert_eq!(
            parse_action_body("type [3] [a [b]]").unwrap(),
            ParsedAction::Type {
                id: 3,
                text: "a [b]".into(),
                press_enter: true
            }
        );
    }

    #[test]
    fn last_summary_wins() {
        let raw = "In summary, the next action I will perform is ```click [1]``` \
                   wait, In summary, the next action I will perform is ```click [2]```";
        assert_eq!(parse_ok(raw), ParsedAction::Click { id: 2 });
    }

    #[test]
    fn failures_carry_raw_text() {
        let err = parse_action("no action here").unwrap_err();
        assert_eq!(err.raw, "no action here");
        assert!(parse_action("In summary, the next action I will perform is click [1]").is_err());
        assert!(parse_action("In summary, the next action I will perform is ```dance [1]```").is_err());
        assert!(parse_action("In summary, the next action I will perform is ```click [x]```").is_err());
        assert!(parse_action("In summary, the next action I will perform is ```click [-1]```").is_err());
        assert!(parse_action("In summary, the next action I will perform is ```new_tab [1]```").is_err());
    }

    #[test]
    fn tab_close_spellings() {
        assert_eq!(parse_action_body("tab_close").unwrap(), ParsedAction::TabClose);
        assert_eq!(parse_action_body("close_tab").unwrap(), ParsedAction::TabClose);
    }

    #[test]
    fn stop_forms() {
        assert_eq!(
            parse_action_body("stop").unwrap(),
            ParsedAction::Stop { answer: String::new() }
        );
        assert_eq!(
            parse_action_body("stop [N/A]").unwrap(),
            ParsedAction::Stop { answer: "N/A".into() }
        );
    }

    #[test]
    fn scroll_and_press() {
        assert_eq!(
            parse_action_body("scroll [DOWN]").unwrap(),
            ParsedAction::Scroll {
                direction: ScrollDirection::Down
            }
        );
        assert_eq!(
            parse_action_body("scroll [direction=up]").unwrap(),
            ParsedAction::Scroll {
                direction: ScrollDirection::Up
            }
        );
        let p = parse_action_body("press [ctrl+V]").unwrap();
        assert_eq!(p.to_string(), "press [Control+v]");
        assert_eq!(parse_action_body("press [Control+v]").unwrap(), p);
        assert_eq!(
            parse_action_body("press [shift+ctrl+Return]").unwrap().to_string(),
            "press [Control+Shift+Enter]"
        );
        assert!(parse_action_body("press [Hyper+x]").is_err());
    }

    #[test]
    fn key_combo_plus_key() {
        let k = KeyCombo::parse("Control++").unwrap();
        assert_eq!(k.key(), "+");
        assert_eq!(k.to_string(), "Control++");
        assert_eq!(KeyCombo::parse(&k.to_string()).unwrap(), k);
    }
}
