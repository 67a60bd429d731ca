//! Converts `Accessibility.getFullAXTree` output into [`AxNode`] trees.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde_json::Value;
use webtask_core::browser::{AxNode, ElementTarget};

use crate::CdpError;

/// Properties worth showing to an agent.
const KEPT_PROPERTIES: [&str; 9] = [
    "checked", "disabled", "expanded", "level", "pressed", "required", "selected", "url", "valuetext",
];

fn ax_value(v: &Value) -> Option<String> {
    match v.get("value")? {
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn string_field(node: &Value, field: &str) -> String {
    node.get(field).and_then(ax_value).unwrap_or_default()
}

/// Builds the tree rooted at the node without a parent. Non-ignored nodes get
/// ids 1, 2, ... in pre-order; ignored ones keep id 0 and are dropped when
/// flattened.
pub fn convert_ax_tree(nodes: &[Value]) -> Result<AxNode, CdpError> {
    let by_id: HashMap<&str, &Value> = nodes
        .iter()
        .filter_map(|n| Some((n.get("nodeId")?.as_str()?, n)))
        .collect();
    let root = nodes
        .iter()
        .find(|n| n.get("parentId").is_none())
        .or(nodes.first())
        .ok_or_else(|| CdpError::Malformed("empty accessibility tree".into()))?;

    let mut next = 1u64;
    let mut seen = HashSet::new();
    Ok(build(root, &by_id, &mut next, &mut seen))
}

fn build<'a>(node: &'a Value, by_id: &HashMap<&str, &'a Value>, next: &mut u64, seen: &mut HashSet<&'a str>) -> AxNode {
    if let Some(id) = node.get("nodeId").and_then(Value::as_str) {
        seen.insert(id);
    }
    let ignored = node.get("ignored").and_then(Value::as_bool).unwrap_or(false);
    let role = string_field(node, "role");
    let mut out = AxNode::new(0, role.clone(), string_field(node, "name"));
    out.ignored = ignored;
    if !ignored {
        out.node_id = *next;
        *next += 1;
        if let Some(b) = node.get("backendDOMNodeId").and_then(Value::as_i64) {
            out.target = Some(ElementTarget::Node(b));
        }
        out.properties = properties(node, &role);
    }
    for child in node.get("childIds").and_then(Value::as_array).into_iter().flatten() {
        let Some(cid) = child.as_str() else { continue };
        if seen.contains(cid) {
            continue;
        }
        if let Some(c) = by_id.get(cid) {
            out.children.push(build(c, by_id, next, seen));
        }
    }
    out
}

fn properties(node: &Value, role: &str) -> BTreeMap<String, String> {
    let mut props = BTreeMap::new();
    for p in node.get("properties").and_then(Value::as_array).into_iter().flatten() {
        let Some(name) = p.get("name").and_then(Value::as_str) else { continue };
        if !KEPT_PROPERTIES.contains(&name) {
            continue;
        }
        let Some(v) = p.get("value").and_then(ax_value) else { continue };
        if name == "url" {
            if matches!(role, "image" | "img") {
                props.insert("src".into(), v);
            }
            continue;
        }
        if v == "false" && name != "checked" {
            continue;
        }
        props.insert(name.to_string(), v);
    }
    let value = string_field(node, "value");
    if !value.is_empty() {
        props.insert("value".into(), value);
    }
    props
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn ignored_nodes_keep_children_and_ids_are_preorder() {
        let nodes = vec![
            json!({"nodeId": "1", "role": {"value": "RootWebArea"}, "name": {"value": "Home"}, "childIds": ["2", "4"], "backendDOMNodeId": 3}),
            json!({"nodeId": "2", "parentId": "1", "ignored": true, "role": {"value": "none"}, "childIds": ["3"]}),
            json!({"nodeId": "3", "parentId": "2", "role": {"value": "link"}, "name": {"value": "About"}, "backendDOMNodeId": 9}),
            json!({"nodeId": "4", "parentId": "1", "role": {"value": "heading"}, "name": {"value": "Hi"},
                   "properties": [{"name": "level", "value": {"type": "integer", "value": 2}},
                                  {"name": "focusable", "value": {"type": "boolean", "value": true}}]}),
        ];
        let root = convert_ax_tree(&nodes).unwrap();
        assert_eq!(root.node_id, 1);
        assert_eq!(root.children[0].node_id, 0);
        assert!(root.children[0].ignored);
        let link = &root.children[0].children[0];
        assert_eq!((link.node_id, link.role.as_str()), (2, "link"));
        assert_eq!(link.target, Some(ElementTarget::Node(9)));
        let heading = &root.children[1];
        assert_eq!(heading.node_id, 3);
        assert_eq!(heading.properties.get("level").map(String::as_str), Some("2"));
        assert!(!heading.properties.contains_key("focusable"));
    }

    #[test]
    fn cycles_terminate() {
        let nodes = vec![
            json!({"nodeId": "1", "role": {"value": "RootWebArea"}, "childIds": ["2"]}),
            json!({"nodeId": "2", "parentId": "1", "role": {"value": "generic"}, "childIds": ["1"]}),
        ];
        let root = convert_ax_tree(&nodes).unwrap();
        assert_eq!(root.children.len(), 1);
        assert!(root.children[0].children.is_empty());
    }

    #[test]
    fn image_url_becomes_src() {
        let nodes = vec![json!({"nodeId": "1", "role": {"value": "image"}, "name": {"value": "cat"},
            "properties": [{"name": "url", "value": {"type": "string", "value": "http://x.test/cat.png"}}]})];
        let root = convert_ax_tree(&nodes).unwrap();
        assert_eq!(root.properties.get("src").map(String::as_str), Some("http://x.test/cat.png"));
    }
}
