//! Key combinations to `Input.dispatchKeyEvent` parameters.

use serde_json::{json, Value};
use webtask_core::action::KeyCombo;

/// Modifier bit in the protocol's bitmask.
pub fn modifier_bit(name: &str) -> i64 {
    match name {
        "Alt" => 1,
        "Control" => 2,
        "Meta" => 4,
        "Shift" => 8,
        _ => 0,
    }
}

/// (key, code, windows virtual key code, text)
pub fn describe(key: &str) -> (String, String, i64, Option<String>) {
    let named = |code: &str, vk: i64, text: Option<&str>| (key.to_string(), code.to_string(), vk, text.map(str::to_string));
    match key {
        "Enter" => named("Enter", 13, Some("\r")),
        "Tab" => named("Tab", 9, None),
        "Escape" => named("Escape", 27, None),
        "Backspace" => named("Backspace", 8, None),
        "Delete" => named("Delete", 46, None),
        "Space" => (" ".into(), "Space".into(), 32, Some(" ".into())),
        "ArrowUp" => named("ArrowUp", 38, None),
        "ArrowDown" => named("ArrowDown", 40, None),
        "ArrowLeft" => named("ArrowLeft", 37, None),
        "ArrowRight" => named("ArrowRight", 39, None),
        "Home" => named("Home", 36, None),
        "End" => named("End", 35, None),
        "PageUp" => named("PageUp", 33, None),
        "PageDown" => named("PageDown", 34, None),
        "Insert" => named("Insert", 45, None),
        "Control" => named("ControlLeft", 17, None),
        "Alt" => named("AltLeft", 18, None),
        "Shift" => named("ShiftLeft", 16, None),
        "Meta" => named("MetaLeft", 91, None),
        k if k.len() > 1 && k.starts_with('F') && k[1..].parse::<i64>().is_ok() => {
            let n: i64 = k[1..].parse().unwrap_or(1);
            named(k, 111 + n, None)
        }
        k => {
            let c = k.chars().next().unwrap_or(' ');
            let (code, vk) = if c.is_ascii_alphabetic() {
                (format!("Key{}", c.to_ascii_uppercase()), c.to_ascii_uppercase() as i64)
            } else if c.is_ascii_digit() {
                (format!("Digit{c}"), c as i64)
            } else {
                (String::new(), 0)
            };
            (k.to_string(), code, vk, Some(k.to_string()))
        }
    }
}

/// The full down/up event sequence for a combination.
pub fn key_events(combo: &KeyCombo) -> Vec<Value> {
    let mut events = Vec::new();
    let mut mask = 0;
    for m in combo.modifiers() {
        mask |= modifier_bit(m);
        let (key, code, vk, _) = describe(m);
        events.push(json!({"type": "rawKeyDown", "key": key, "code": code, "windowsVirtualKeyCode": vk, "modifiers": mask}));
    }
    let (key, code, vk, text) = describe(combo.key());
    // shortcuts such as Control+a do not insert text
    let text = text.filter(|_| mask & (1 | 2 | 4) == 0);
    let mut down = json!({"type": if text.is_some() { "keyDown" } else { "rawKeyDown" },
        "key": key, "code": code, "windowsVirtualKeyCode": vk, "modifiers": mask});
    if let Some(t) = &text {
        down["text"] = json!(t);
    }
    events.push(down);
    events.push(json!({"type": "keyUp", "key": key, "code": code, "windowsVirtualKeyCode": vk, "modifiers": mask}));
    for m in combo.modifiers().iter().rev() {
        mask &= !modifier_bit(m);
        let (key, code, vk, _) = describe(m);
        events.push(json!({"type": "keyUp", "key": key, "code": code, "windowsVirtualKeyCode": vk, "modifiers": mask}));
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_v_holds_the_modifier() {
        let ev = key_events(&KeyCombo::parse("ctrl+V").unwrap());
        assert_eq!(ev.len(), 4);
        assert_eq!(ev[0]["key"], "Control");
        assert_eq!(ev[1]["modifiers"], 2);
        assert_eq!(ev[1]["code"], "KeyV");
        assert!(ev[1].get("text").is_none());
        assert_eq!(ev[3]["modifiers"], 0);
    }

    #[test]
    fn enter_types_a_carriage_return() {
        let ev = key_events(&KeyCombo::parse("Enter").unwrap());
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0]["text"], "\r");
        assert_eq!(ev[0]["windowsVirtualKeyCode"], 13);
    }
}
