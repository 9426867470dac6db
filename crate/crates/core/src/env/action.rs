//! Agent actions and the total action parser.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    ToolCall,
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arguments: Option<Map<String, Value>>,
    pub raw_text: String,
    /// Vocabulary indices, when a tokenizing policy produced the action.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub token_ids: Vec<usize>,
}

impl AgentAction {
    pub fn free_text(text: &str) -> Self {
        Self { kind: ActionKind::FreeText, tool_name: None, arguments: None, raw_text: text.into(), token_ids: Vec::new() }
    }

    pub fn is_call(&self, name: &str) -> bool {
        self.kind == ActionKind::ToolCall && self.tool_name.as_deref() == Some(name)
    }

    pub fn is_submit(&self) -> bool {
        self.is_call("submit_answer")
    }

    /// String argument, if present.
    pub fn arg_str(&self, key: &str) -> Option<&str> {
        self.arguments.as_ref()?.get(key)?.as_str()
    }
}

/// How a tool-call document was found in the action text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallFormat {
    /// The whole text is the document.
    Bare,
    /// Inside a fenced code block.
    Fenced,
    /// Embedded in surrounding prose.
    Embedded,
}

/// Extracts `(name, arguments)` from a JSON value shaped like a tool call.
/// `arguments` may also be a string holding a JSON object.
fn as_call(v: &Value) -> Option<(String, Map<String, Value>)> {
    let obj = v.as_object()?;
    let name = obj.get("name")?.as_str()?.trim();
    if name.is_empty() {
        return None;
    }
    let args = match obj.get("arguments")? {
        Value::Object(m) => m.clone(),
        Value::String(s) => serde_json::from_str::<Value>(s).ok()?.as_object()?.clone(),
        _ => return None,
    };
    Some((name.to_string(), args))
}

/// Contents of fenced code blocks (``` with optional info string).
pub(crate) fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                out.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    out
}

/// Balanced `{...}` substrings, outermost first, skipping braces in strings.
pub(crate) fn json_objects(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        let (mut depth, mut in_str, mut esc) = (0usize, false, false);
        let mut end = None;
        for (j, &c) in bytes.iter().enumerate().skip(i) {
            if in_str {
                match (esc, c) {
                    (true, _) => esc = false,
                    (false, b'\\') => esc = true,
                    (false, b'"') => in_str = false,
                    _ => {}
                }
                continue;
            }
            match c {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(j);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(j) => {
                out.push(&text[i..=j]);
                i = j + 1;
            }
            None => break,
        }
    }
    out
}

/// Finds the first tool-call document in `text`, preferring a bare
/// document, then fenced blocks, then objects embedded in prose.
pub fn find_call(text: &str) -> Option<(String, Map<String, Value>, CallFormat)> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        if let Some((n, a)) = as_call(&v) {
            return Some((n, a, CallFormat::Bare));
        }
    }
    for block in fenced_blocks(text) {
        if let Ok(v) = serde_json::from_str::<Value>(block.trim()) {
            if let Some((n, a)) = as_call(&v) {
                return Some((n, a, CallFormat::Fenced));
            }
        }
    }
    for obj in json_objects(text) {
        if let Ok(v) = serde_json::from_str::<Value>(obj) {
            if let Some((n, a)) = as_call(&v) {
                return Some((n, a, CallFormat::Embedded));
            }
        }
    }
    None
}

/// Total parser: any text becomes either a tool call or free text.
pub fn parse_action(text: &str) -> AgentAction {
    match find_call(text) {
        Some((name, args, _)) => AgentAction {
            kind: ActionKind::ToolCall,
            tool_name: Some(name),
            arguments: Some(args),
            raw_text: text.to_string(),
            token_ids: Vec::new(),
        },
        None => AgentAction::free_text(text),
    }
}

/// Renders a tool call as a bare document.
pub fn call_text(name: &str, args: &Map<String, Value>) -> String {
    serde_json::json!({ "name": name, "arguments": args }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_call() {
        let a = parse_action(r#"{"name":"submit_answer","arguments":{"answer":"A"}}"#);
        assert!(a.is_submit());
        assert_eq!(a.arg_str("answer"), Some("A"));
    }

    #[test]
    fn fenced_call() {
        let text = "```json\n{\"name\":\"submit_answer\",\"arguments\":{\"answer\":\"A\"}}\n```";
        let a = parse_action(text);
        assert!(a.is_submit());
        assert_eq!(find_call(text).unwrap().2, CallFormat::Fenced);
    }

    #[test]
    fn embedded_call() {
        let text = "I will check vitals now. {\"name\":\"get_vital_signs\",\"arguments\":{\"patient_id\":\"P1\"}} done";
        let (n, _, f) = find_call(text).unwrap();
        assert_eq!(n, "get_vital_signs");
        assert_eq!(f, CallFormat::Embedded);
    }

    #[test]
    fn stringified_arguments() {
        let a = parse_action(r#"{"name":"think","arguments":"{\"thought\":\"x\"}"}"#);
        assert!(a.is_call("think"));
    }

    #[test]
    fn prose_is_free_text() {
        let a = parse_action("the diagnosis is sepsis");
        assert_eq!(a.kind, ActionKind::FreeText);
        assert_eq!(a.raw_text, "the diagnosis is sepsis");
    }

    #[test]
    fn name_without_arguments_is_free_text() {
        assert_eq!(parse_action(r#"{"name":"think"}"#).kind, ActionKind::FreeText);
    }

    #[test]
    fn braces_in_strings() {
        let text = r#"note {"name":"think","arguments":{"thought":"a } b {"}}"#;
        assert!(parse_action(text).is_call("think"));
    }

    #[test]
    fn unterminated_fence_and_brace() {
        assert_eq!(parse_action("```json\n{\"name\":").kind, ActionKind::FreeText);
        assert_eq!(parse_action("{{{{").kind, ActionKind::FreeText);
    }
}
