//! String reward primitives over the agent's answer or extracted page text.

use super::spec::StringRef;

/// Lowercases and collapses every whitespace run to a single space.
pub fn normalize_for_match(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn contains_normalized(haystack: &str, needle: &str) -> bool {
    normalize_for_match(haystack).contains(&normalize_for_match(needle))
}

/// 1 iff the answer equals the reference after trimming outer whitespace.
pub fn exact_match(pred: &str, reference: &str) -> u8 {
    u8::from(pred.trim() == reference.trim())
}

/// 1 iff every reference has at least one alternative contained in `pred`.
pub fn must_include(pred: &str, refs: &[StringRef]) -> u8 {
    u8::from(refs.iter().all(|r| {
        r.alternatives
            .iter()
            .any(|alt| contains_normalized(pred, alt))
    }))
}

/// 0 iff any alternative of any reference is contained in `pred`.
pub fn must_exclude(pred: &str, refs: &[StringRef]) -> u8 {
    u8::from(!refs.iter().any(|r| {
        r.alternatives
            .iter()
            .any(|alt| contains_normalized(pred, alt))
    }))
}

/// 1 iff `answer` is a case-insensitive substring of the VQA reply.
pub fn vqa_reply_matches(reply: &str, answer: &str) -> u8 {
    u8::from(contains_normalized(reply, answer))
}
