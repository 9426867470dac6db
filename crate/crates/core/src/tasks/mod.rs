//! Task schema, deterministic ids, loaders and converters.

pub mod mcqa;
pub mod micro;
pub mod pathway;

use std::collections::BTreeMap;
use std::path::Path;

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use mcqa::{convert_mcqa, McqaRecord};
pub use micro::{micro_clinic_suite, MicroClinicTask};
pub use pathway::{evaluate_pathway, PathwayPhase, PathwayScore, PathwaySpec};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("no valid tasks in {path}: {diagnostics:?}")]
    EmptySuite { path: String, diagnostics: Vec<Diagnostic> },
    #[error("cannot parse task file: {0}")]
    Parse(String),
    #[error("invalid task: {0}")]
    Invalid(String),
    #[error("conversion: {0}")]
    Conversion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RewardBasis {
    Action,
    NlAssertion,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    #[default]
    Exact,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedAction {
    pub tool_name: String,
    #[serde(default)]
    pub arguments: BTreeMap<String, Value>,
    /// Argument names whose values must equal the expected ones.
    #[serde(default)]
    pub compare_args: Vec<String>,
}

impl ExpectedAction {
    pub fn new(tool_name: &str) -> Self {
        Self { tool_name: tool_name.into(), arguments: BTreeMap::new(), compare_args: Vec::new() }
    }

    /// Expected call whose listed arguments must all match.
    pub fn with_args(tool_name: &str, args: &[(&str, Value)]) -> Self {
        Self {
            tool_name: tool_name.into(),
            arguments: args.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            compare_args: args.iter().map(|(k, _)| k.to_string()).collect(),
        }
    }

    /// True when `name`/`args` is a call satisfying this expectation.
    /// String values compare case-insensitively after trimming.
    pub fn matches(&self, name: &str, args: &serde_json::Map<String, Value>) -> bool {
        name == self.tool_name
            && self.compare_args.iter().all(|k| match (self.arguments.get(k), args.get(k)) {
                (Some(want), Some(got)) => values_match(want, got),
                _ => false,
            })
    }
}

fn values_match(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::String(x), Value::String(y)) => x.trim().eq_ignore_ascii_case(y.trim()),
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        _ => a == b,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rubric {
    #[serde(default)]
    pub required_elements: Vec<String>,
    #[serde(default)]
    pub required_tools: Vec<String>,
    #[serde(default)]
    pub forbidden_elements: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    /// 32-hex MD5 of the canonical form; recomputed on load.
    #[serde(default)]
    pub id: String,
    pub domain: String,
    pub ticket: String,
    #[serde(default)]
    pub expected_actions: Vec<ExpectedAction>,
    #[serde(default)]
    pub nl_assertions: Vec<String>,
    pub reward_basis: Vec<RewardBasis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rubric: Option<Rubric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    #[serde(default)]
    pub accuracy_mode: AccuracyMode,
    /// Patient record the task is about, when the domain has patients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
}

impl Task {
    /// Checks the schema invariants that serde cannot express.
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.domain.trim().is_empty() {
            return Err(TaskError::Invalid("empty domain".into()));
        }
        if self.ticket.trim().is_empty() {
            return Err(TaskError::Invalid("empty ticket".into()));
        }
        if self.reward_basis.is_empty() {
            return Err(TaskError::Invalid("reward_basis is empty".into()));
        }
        for ea in &self.expected_actions {
            if ea.tool_name.is_empty() {
                return Err(TaskError::Invalid("expected action without tool_name".into()));
            }
            if let Some(k) = ea.compare_args.iter().find(|k| !ea.arguments.contains_key(*k)) {
                return Err(TaskError::Invalid(format!(
                    "compare_args key {k:?} missing from arguments of {}",
                    ea.tool_name
                )));
            }
        }
        Ok(())
    }

    /// Sets `id` from the content.
    pub fn with_id(mut self) -> Self {
        self.id = task_id(&self);
        self
    }

    pub fn has_basis(&self, basis: RewardBasis) -> bool {
        self.reward_basis.contains(&basis)
    }
}

/// Bytes hashed for the id: compact JSON of the task without `id`, object
/// keys sorted, arrays in order, absent optionals omitted.
pub fn canonical_bytes(task: &Task) -> Vec<u8> {
    let mut v = serde_json::to_value(task).expect("task serializes");
    if let Value::Object(m) = &mut v {
        m.remove("id");
    }
    // serde_json::Map is ordered by key, and to_vec emits no whitespace.
    serde_json::to_vec(&v).expect("value serializes")
}

/// Lowercase hex MD5 of [`canonical_bytes`].
pub fn task_id(task: &Task) -> String {
    let digest = Md5::digest(canonical_bytes(task));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// 1-based line where the record starts.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub tasks: Vec<Task>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Loads a JSON array or JSONL task file. Valid records are kept with their
/// ids recomputed; an `id` present in the file must equal the recomputed one.
pub fn load_tasks(path: &Path) -> Result<LoadReport, TaskError> {
    let text = std::fs::read_to_string(path)?;
    let report = parse_tasks(&text)?;
    if report.tasks.is_empty() {
        return Err(TaskError::EmptySuite {
            path: path.display().to_string(),
            diagnostics: report.diagnostics,
        });
    }
    Ok(report)
}

/// Parses task records from text without touching the filesystem. Unlike
/// [`load_tasks`], an empty result is not an error.
pub fn parse_tasks(text: &str) -> Result<LoadReport, TaskError> {
    let records: Vec<(usize, Result<Value, String>)> = if text.trim_start().starts_with('[') {
        let all: Vec<Value> =
            serde_json::from_str(text).map_err(|e| TaskError::Parse(e.to_string()))?;
        let lines = array_element_lines(text);
        all.into_iter()
            .enumerate()
            .map(|(i, v)| (lines.get(i).copied().unwrap_or(0), Ok(v)))
            .collect()
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, serde_json::from_str(l).map_err(|e| e.to_string())))
            .collect()
    };
    let mut tasks = Vec::new();
    let mut diagnostics = Vec::new();
    for (line, rec) in records {
        match rec.and_then(|v| normalize(v).map_err(|e| e.to_string())) {
            Ok(t) => tasks.push(t),
            Err(message) => diagnostics.push(Diagnostic { line, message }),
        }
    }
    Ok(LoadReport { tasks, diagnostics })
}

fn normalize(v: Value) -> Result<Task, TaskError> {
    let task: Task = serde_json::from_value(v).map_err(|e| TaskError::Invalid(e.to_string()))?;
    task.validate()?;
    let id = task_id(&task);
    if !task.id.is_empty() && task.id != id {
        return Err(TaskError::Invalid(format!("stored id {} does not match content id {id}", task.id)));
    }
    Ok(Task { id, ..task })
}

/// 1-based starting line of each top-level element of a JSON array.
fn array_element_lines(text: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut line, mut depth) = (1usize, 0i32);
    let (mut in_str, mut escaped, mut expect_value) = (false, false, false);
    for c in text.chars() {
        if c == '\n' {
            line += 1;
        }
        if in_str {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_str = false,
                _ => {}
            }
            continue;
        }
        if depth == 1 && expect_value && !c.is_whitespace() && c != ',' && c != ']' {
            out.push(line);
            expect_value = false;
        }
        match c {
            '"' => in_str = true,
            '[' | '{' => {
                depth += 1;
                if depth == 1 {
                    expect_value = true;
                }
            }
            ']' | '}' => depth -= 1,
            ',' if depth == 1 => expect_value = true,
            _ => {}
        }
    }
    out
}

/// Writes tasks as a pretty JSON array.
pub fn write_tasks(path: &Path, tasks: &[Task]) -> Result<(), TaskError> {
    let text = serde_json::to_string_pretty(tasks).map_err(|e| TaskError::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
