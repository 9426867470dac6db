//! Rollout records and their JSONL interchange form.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::action::AgentAction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Submit,
    TurnLimit,
    ContextLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_index: usize,
    pub action: AgentAction,
    pub tool_result_text: String,
    /// Natural-log probability of each generated token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_token_logprobs: Option<Vec<f64>>,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub turns: Vec<TurnRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminated_by: Option<TerminatedBy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    pub total_response_tokens: usize,
}

impl Trajectory {
    pub fn new(task_id: &str) -> Self {
        Self {
            task_id: task_id.into(),
            turns: Vec::new(),
            terminated_by: None,
            final_answer: None,
            total_response_tokens: 0,
        }
    }

    /// `(turn_index, name, arguments)` of every tool call, in order.
    pub fn tool_calls(&self) -> impl Iterator<Item = (usize, &str, &Map<String, Value>)> + '_ {
        static EMPTY: std::sync::OnceLock<Map<String, Value>> = std::sync::OnceLock::new();
        self.turns.iter().filter_map(|t| {
            let name = t.action.tool_name.as_deref()?;
            let args = t.action.arguments.as_ref().unwrap_or_else(|| EMPTY.get_or_init(Map::new));
            Some((t.turn_index, name, args))
        })
    }

    pub fn submitted(&self) -> bool {
        self.terminated_by == Some(TerminatedBy::Submit)
    }

    /// Concatenated actions and tool results, for pattern matching.
    pub fn transcript_text(&self) -> String {
        let mut s = String::new();
        for t in &self.turns {
            s.push_str(&t.action.raw_text);
            s.push('\n');
            s.push_str(&t.tool_result_text);
            s.push('\n');
        }
        s
    }

    /// Checks the record invariants: consecutive turn indices, token counts
    /// agreeing with logprobs, the total, and submit termination.
    pub fn check(&self) -> Result<(), String> {
        for (i, t) in self.turns.iter().enumerate() {
            if t.turn_index != i {
                return Err(format!("turn {i} has index {}", t.turn_index));
            }
            if let Some(lp) = &t.per_token_logprobs {
                if lp.len() != t.token_count {
                    return Err(format!("turn {i}: {} logprobs for {} tokens", lp.len(), t.token_count));
                }
            }
        }
        let total: usize = self.turns.iter().map(|t| t.token_count).sum();
        if total != self.total_response_tokens {
            return Err(format!("total_response_tokens {} != {total}", self.total_response_tokens));
        }
        let last_submit = self.turns.last().is_some_and(|t| t.action.is_submit());
        if (self.terminated_by == Some(TerminatedBy::Submit)) != last_submit {
            return Err("terminated_by=submit must coincide with a final submit_answer".into());
        }
        Ok(())
    }
}

/// Reads one trajectory per non-blank line.
pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<Trajectory>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

pub fn write_jsonl(mut w: impl Write, trajectories: &[Trajectory]) -> std::io::Result<()> {
    for t in trajectories {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
