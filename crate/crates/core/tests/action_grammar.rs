mod support;

use proptest::prelude::*;
use webtask_core::action::{parse_action, render_action, ParsedAction};

proptest! {
    #![proptest_config(ProptestConfig { cases: 1500, ..ProptestConfig::default() })]

    #[test]
    fn render_then_parse_is_identity(action in support::any_action()) {
        let text = render_action(&action);
        prop_assert_eq!(parse_action(&text).unwrap(), action.clone());
        let wrapped = format!("The page shows a list.\n{text}\n");
        prop_assert_eq!(parse_action(&wrapped).unwrap(), action);
    }
}

#[test]
fn sample_replies_parse() {
    let cases = [
        ("stop [$279.49]", ParsedAction::Stop { answer: "$279.49".into() }),
        ("click [11]", ParsedAction::Click { id: 11 }),
        (
            "type [5] [guitar] [1]",
            ParsedAction::Type { id: 5, text: "guitar".into(), press_enter: true },
        ),
    ];
    for (body, expected) in cases {
        let raw = format!("Let's think step-by-step. In summary, the next action I will perform is ```{body}```");
        assert_eq!(parse_action(&raw).unwrap(), expected, "{body}");
    }
}

#[test]
fn last_summary_wins() {
    let raw = "In summary, the next action I will perform is ```click [1]``` but actually \
               In summary, the next action I will perform is ```hover [2]```";
    assert_eq!(parse_action(raw).unwrap(), ParsedAction::Hover { id: 2 });
}
