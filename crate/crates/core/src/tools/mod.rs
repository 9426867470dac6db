//! Tool definitions, toolkits with first-wins composition, and dispatch.

pub mod catalog;
pub mod handlers;
pub mod world;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub use world::WorldState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ToolType {
    Read,
    Write,
    Think,
    Generic,
}

impl ToolType {
    /// READ, THINK and GENERIC tools never mutate the world.
    pub fn is_pure(self) -> bool {
        self != ToolType::Write
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    String,
    Number,
    Integer,
    Boolean,
    Object,
    Array,
}

impl ParamKind {
    fn json_type(self) -> &'static str {
        match self {
            ParamKind::String => "string",
            ParamKind::Number => "number",
            ParamKind::Integer => "integer",
            ParamKind::Boolean => "boolean",
            ParamKind::Object => "object",
            ParamKind::Array => "array",
        }
    }

    fn accepts(self, v: &Value) -> bool {
        match self {
            ParamKind::String => v.is_string(),
            ParamKind::Number => v.is_number(),
            ParamKind::Integer => v.is_i64() || v.is_u64(),
            ParamKind::Boolean => v.is_boolean(),
            ParamKind::Object => v.is_object(),
            ParamKind::Array => v.is_array(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDefinition {
    pub name: String,
    pub tool_type: ToolType,
    pub description: String,
    pub parameters: Vec<ParamSpec>,
}

impl ToolDefinition {
    pub fn new(name: &str, tool_type: ToolType, description: &str) -> Self {
        Self { name: name.into(), tool_type, description: description.into(), parameters: Vec::new() }
    }

    pub fn param(mut self, name: &str, kind: ParamKind, required: bool, description: &str) -> Self {
        self.parameters.push(ParamSpec { name: name.into(), kind, required, description: description.into() });
        self
    }

    /// Function-calling schema document.
    pub fn schema(&self) -> Value {
        let mut props = Map::new();
        for p in &self.parameters {
            props.insert(p.name.clone(), json!({"type": p.kind.json_type(), "description": p.description}));
        }
        let required: Vec<&str> = self.parameters.iter().filter(|p| p.required).map(|p| p.name.as_str()).collect();
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {"type": "object", "properties": props, "required": required},
            }
        })
    }
}

/// One prior call in the current episode, visible to handlers.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub name: String,
    pub arguments: Map<String, Value>,
    pub ok: bool,
}

/// Read-only episode context passed to every handler.
#[derive(Debug, Clone, Copy)]
pub struct ToolContext<'a> {
    pub ticket: &'a str,
    pub history: &'a [CallRecord],
}

impl ToolContext<'_> {
    pub fn called(&self, name: &str) -> bool {
        self.history.iter().any(|c| c.ok && c.name == name)
    }
}

pub type HandlerResult = Result<Value, String>;
pub type PureFn = dyn Fn(&WorldState, &ToolContext, &Map<String, Value>) -> HandlerResult + Send + Sync;
pub type WriteFn = dyn Fn(&mut WorldState, &ToolContext, &Map<String, Value>) -> HandlerResult + Send + Sync;

/// Executable behavior bound to a definition. Pure handlers cannot touch
/// the world mutably, so READ/THINK purity holds by construction.
#[derive(Clone)]
pub enum Handler {
    Pure(Arc<PureFn>),
    Write(Arc<WriteFn>),
}

impl Handler {
    pub fn pure(f: impl Fn(&WorldState, &ToolContext, &Map<String, Value>) -> HandlerResult + Send + Sync + 'static) -> Self {
        Handler::Pure(Arc::new(f))
    }

    pub fn write(
        f: impl Fn(&mut WorldState, &ToolContext, &Map<String, Value>) -> HandlerResult + Send + Sync + 'static,
    ) -> Self {
        Handler::Write(Arc::new(f))
    }
}

impl fmt::Debug for Handler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Handler::Pure(_) => "Handler::Pure",
            Handler::Write(_) => "Handler::Write",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ToolError {
    #[error("tool {0} is already registered")]
    Duplicate(String),
    #[error("tool {name} is {ty:?} but was given a mutating handler")]
    ImpureHandler { name: String, ty: ToolType },
    #[error("tool {0}: submit_answer and think must be GENERIC")]
    NotGeneric(String),
    #[error("cannot merge an empty list of toolkits")]
    EmptyMerge,
    #[error("domain {0} is not registered")]
    UnknownDomain(String),
}

#[derive(Debug, Clone, Default)]
pub struct ToolKit {
    pub domain: String,
    tools: BTreeMap<String, (ToolDefinition, Handler)>,
}

impl ToolKit {
    pub fn new(domain: &str) -> Self {
        Self { domain: domain.into(), tools: BTreeMap::new() }
    }

    pub fn register(&mut self, def: ToolDefinition, handler: Handler) -> Result<(), ToolError> {
        if self.tools.contains_key(&def.name) {
            return Err(ToolError::Duplicate(def.name));
        }
        if matches!(def.name.as_str(), "submit_answer" | "think") && def.tool_type != ToolType::Generic {
            return Err(ToolError::NotGeneric(def.name));
        }
        if def.tool_type.is_pure() && matches!(handler, Handler::Write(_)) {
            return Err(ToolError::ImpureHandler { name: def.name, ty: def.tool_type });
        }
        self.tools.insert(def.name.clone(), (def, handler));
        Ok(())
    }

    /// Builder form of `register`.
    pub fn with(mut self, def: ToolDefinition, handler: Handler) -> Result<Self, ToolError> {
        self.register(def, handler)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn definition(&self, name: &str) -> Option<&ToolDefinition> {
        self.tools.get(name).map(|(d, _)| d)
    }

    /// Definitions in name order.
    pub fn definitions(&self) -> impl Iterator<Item = &ToolDefinition> {
        self.tools.values().map(|(d, _)| d)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    /// Dispatches a call. Every failure is reported in the result; nothing
    /// propagates to the caller.
    pub fn dispatch(&self, name: &str, arguments: &Value, world: &mut WorldState, ctx: &ToolContext) -> ToolResult {
        let Some((def, handler)) = self.tools.get(name) else {
            return ToolResult::err(format!("unknown tool: {name}"));
        };
        let empty = Map::new();
        let args = match arguments {
            Value::Object(m) => m,
            Value::Null => &empty,
            _ => return ToolResult::err(format!("{name}: arguments must be an object")),
        };
        let mut warnings = Vec::new();
        for key in args.keys() {
            if !def.parameters.iter().any(|p| &p.name == key) {
                warnings.push(format!("ignored unknown argument: {key}"));
            }
        }
        for p in &def.parameters {
            match args.get(&p.name) {
                None | Some(Value::Null) if p.required => {
                    return ToolResult::err(format!("{name}: missing required argument {}", p.name));
                }
                Some(v) if !v.is_null() && !p.kind.accepts(v) => {
                    return ToolResult::err(format!("{name}: argument {} must be {}", p.name, p.kind.json_type()));
                }
                _ => {}
            }
        }
        let out = match handler {
            Handler::Pure(f) => f(world, ctx, args),
            Handler::Write(f) => {
                let out = f(world, ctx, args);
                if out.is_ok() {
                    world.mutation_log.push(world::Mutation { tool: name.into(), arguments: args.clone() });
                }
                out
            }
        };
        match out {
            Ok(mut payload) => {
                if !warnings.is_empty() {
                    payload = match payload {
                        Value::Object(mut m) => {
                            m.insert("warnings".into(), json!(warnings));
                            Value::Object(m)
                        }
                        other => json!({"result": other, "warnings": warnings}),
                    };
                }
                ToolResult::ok(payload)
            }
            Err(msg) => ToolResult::err(format!("{name}: {msg}")),
        }
    }
}

/// Union of toolkits; on name clashes the earliest toolkit wins.
pub fn merge(kits: &[ToolKit]) -> Result<ToolKit, ToolError> {
    let first = kits.first().ok_or(ToolError::EmptyMerge)?;
    let mut out = first.clone();
    for kit in &kits[1..] {
        for (name, entry) in &kit.tools {
            out.tools.entry(name.clone()).or_insert_with(|| entry.clone());
        }
    }
    Ok(out)
}

/// One schema per tool, ordered by name.
pub fn schema_of(kit: &ToolKit) -> Vec<Value> {
    kit.definitions().map(ToolDefinition::schema).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub ok: bool,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

impl ToolResult {
    pub fn ok(payload: Value) -> Self {
        Self { ok: true, payload, error_message: None }
    }

    pub fn err(message: String) -> Self {
        Self { ok: false, payload: Value::Null, error_message: Some(message) }
    }

    /// Observation text fed back to the agent.
    pub fn to_text(&self) -> String {
        match &self.error_message {
            Some(m) => format!("error: {m}"),
            None => self.payload.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn echo(name: &str) -> (ToolDefinition, Handler) {
        let tag = name.to_string();
        (
            ToolDefinition::new(name, ToolType::Read, "echo").param("x", ParamKind::String, false, "value"),
            Handler::pure(move |_, _, _| Ok(json!({"from": tag}))),
        )
    }

    fn kit(domain: &str, names: &[&str]) -> ToolKit {
        let mut k = ToolKit::new(domain);
        for n in names {
            let (d, h) = echo(n);
            k.register(d, h).unwrap();
        }
        k
    }

    fn ctx() -> ToolContext<'static> {
        ToolContext { ticket: "", history: &[] }
    }

    #[test]
    fn duplicate_registration_fails() {
        let mut k = kit("d", &["a"]);
        let (d, h) = echo("a");
        assert_eq!(k.register(d, h), Err(ToolError::Duplicate("a".into())));
    }

    #[test]
    fn pure_tools_reject_write_handlers() {
        let mut k = ToolKit::new("d");
        let r = k.register(ToolDefinition::new("r", ToolType::Read, ""), Handler::write(|_, _, _| Ok(Value::Null)));
        assert!(matches!(r, Err(ToolError::ImpureHandler { .. })));
        let r = k.register(ToolDefinition::new("think", ToolType::Read, ""), Handler::pure(|_, _, _| Ok(Value::Null)));
        assert!(matches!(r, Err(ToolError::NotGeneric(_))));
    }

    #[test]
    fn first_wins() {
        let m = merge(&[kit("a", &["x", "y"]), kit("b", &["y", "z", "w"])]).unwrap();
        assert_eq!(m.len(), 4);
        let mut w = WorldState::default();
        let r = m.dispatch("y", &json!({}), &mut w, &ctx());
        assert_eq!(r.payload["from"], "y");
        assert_eq!(m.domain, "a");
        assert!(merge(&[]).is_err());
    }

    #[test]
    fn dispatch_soft_errors() {
        let mut k = kit("d", &["a"]);
        k.register(
            ToolDefinition::new("need", ToolType::Read, "").param("id", ParamKind::String, true, "id"),
            Handler::pure(|_, _, _| Ok(json!({}))),
        )
        .unwrap();
        let mut w = WorldState::default();
        let r = k.dispatch("nope", &json!({}), &mut w, &ctx());
        assert!(!r.ok && r.error_message.as_deref().unwrap().contains("unknown tool"));
        assert!(!k.dispatch("need", &json!({}), &mut w, &ctx()).ok);
        assert!(!k.dispatch("need", &json!({"id": 3}), &mut w, &ctx()).ok);
        assert!(!k.dispatch("need", &json!([1]), &mut w, &ctx()).ok);
        let r = k.dispatch("a", &json!({"zzz": 1}), &mut w, &ctx());
        assert!(r.ok);
        assert_eq!(r.payload["warnings"][0], "ignored unknown argument: zzz");
    }

    #[test]
    fn writes_are_logged() {
        let mut k = ToolKit::new("d");
        k.register(
            ToolDefinition::new("w", ToolType::Write, ""),
            Handler::write(|w, _, _| {
                w.labs_ordered.push(("p".into(), "l".into()));
                Ok(json!({}))
            }),
        )
        .unwrap();
        let mut w = WorldState::default();
        assert!(k.dispatch("w", &json!({}), &mut w, &ctx()).ok);
        assert_eq!(w.mutation_log.len(), 1);
        assert_eq!(w.mutation_log[0].tool, "w");
    }

    #[test]
    fn schema_lists_params_and_required() {
        let def = ToolDefinition::new("submit_answer", ToolType::Generic, "submit")
            .param("answer", ParamKind::String, true, "final answer")
            .param("reasoning", ParamKind::String, false, "why");
        let s = def.schema();
        assert_eq!(s["function"]["parameters"]["required"], json!(["answer"]));
        assert_eq!(s["function"]["parameters"]["properties"].as_object().unwrap().len(), 2);
        assert!(schema_of(&ToolKit::new("e")).is_empty());
    }

    #[test]
    fn result_text() {
        assert_eq!(ToolResult::err("boom".into()).to_text(), "error: boom");
        assert_eq!(ToolResult::ok(json!({"a": 1})).to_text(), "{\"a\":1}");
    }
}
