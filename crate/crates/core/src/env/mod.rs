//! Episode state machine: reset, step, termination and rendering.

mod action;
mod trajectory;

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use action::{call_text, find_call, parse_action, ActionKind, AgentAction, CallFormat};
pub(crate) use action::{fenced_blocks, json_objects};
pub use trajectory::{read_jsonl, write_jsonl, TerminatedBy, Trajectory, TurnRecord};

use crate::knowledge::KnowledgeIndex;
use crate::reward::{score_episode, RewardBreakdown, RewardWeights};
use crate::tasks::Task;
use crate::text::{count_tokens, truncate_chars};
use crate::tools::catalog::{domain_policy, domain_toolkit, world_for};
use crate::tools::{CallRecord, ToolContext, ToolKit, WorldState};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("domain {0} is not registered")]
    DomainNotRegistered(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("step called before reset")]
    NotReset,
    #[error("episode already finished")]
    EpisodeFinished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_turns: usize,
    pub max_observation_chars: usize,
    pub max_action_chars: usize,
    /// Response-token budget L_max over the whole episode.
    pub max_response_tokens: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { max_turns: 5, max_observation_chars: 100_000, max_action_chars: 10_000, max_response_tokens: 12_288 }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.max_turns == 0
            || self.max_observation_chars == 0
            || self.max_action_chars == 0
            || self.max_response_tokens == 0
        {
            return Err(EnvError::Config("all bounds must be positive".into()));
        }
        if self.max_action_chars > self.max_observation_chars {
            return Err(EnvError::Config("max_action_chars exceeds max_observation_chars".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub system_prompt: String,
    /// Most recent turns that fit the character budget.
    pub transcript: Vec<TurnRecord>,
    /// Output of the latest tool call.
    pub tool_results: String,
    pub ticket: String,
    /// Number of turns taken so far.
    pub turn: usize,
}

impl Observation {
    /// Text shown to a policy.
    pub fn render(&self) -> String {
        let mut s = format!("[system]\n{}\n\n[ticket]\n{}\n", self.system_prompt, self.ticket);
        for t in &self.transcript {
            let _ = write!(s, "\n[turn {} action]\n{}\n[turn {} result]\n{}\n", t.turn_index + 1, t.action.raw_text, t.turn_index + 1, t.tool_result_text);
        }
        s
    }

    fn chars(&self) -> usize {
        self.render().chars().count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub terminated: bool,
    pub truncated: bool,
    pub reward: Option<RewardBreakdown>,
}

pub const FREE_TEXT_NOTICE: &str = "error: no tool call found; free text recorded";
pub const CONTEXT_LIMIT_NOTICE: &str = "error: response token budget exhausted; turn not executed";

/// One episode. Not shareable; run many instances for concurrency.
#[derive(Debug)]
pub struct Env {
    config: EpisodeConfig,
    weights: RewardWeights,
    knowledge: Option<Arc<KnowledgeIndex>>,
    task: Option<Task>,
    toolkit: ToolKit,
    world: WorldState,
    system_prompt: String,
    history: Vec<CallRecord>,
    trajectory: Trajectory,
    reward: Option<RewardBreakdown>,
}

impl Env {
    pub fn new(config: EpisodeConfig, knowledge: Option<Arc<KnowledgeIndex>>) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            weights: RewardWeights::default(),
            knowledge,
            task: None,
            toolkit: ToolKit::default(),
            world: WorldState::default(),
            system_prompt: String::new(),
            history: Vec::new(),
            trajectory: Trajectory::new(""),
            reward: None,
        })
    }

    pub fn with_weights(mut self, weights: RewardWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn task(&self) -> Option<&Task> {
        self.task.as_ref()
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn toolkit(&self) -> &ToolKit {
        &self.toolkit
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn reward(&self) -> Option<&RewardBreakdown> {
        self.reward.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.trajectory.terminated_by.is_some()
    }

    /// Loads `task` and returns the opening observation.
    pub fn reset(&mut self, task: &Task) -> Result<Observation, EnvError> {
        task.validate().map_err(|e| EnvError::InvalidTask(e.to_string()))?;
        let toolkit = domain_toolkit(&task.domain).map_err(|_| EnvError::DomainNotRegistered(task.domain.clone()))?;
        let policy = domain_policy(&task.domain).ok_or_else(|| EnvError::DomainNotRegistered(task.domain.clone()))?;
        self.toolkit = toolkit;
        self.system_prompt = policy;
        self.world = world_for(task, self.knowledge.clone());
        self.task = Some(task.clone());
        self.history.clear();
        self.trajectory = Trajectory::new(&task.id);
        self.reward = None;
        Ok(self.observation())
    }

    /// Parses and applies one action text.
    pub fn step(&mut self, action_text: &str) -> Result<StepOutcome, EnvError> {
        self.step_action(parse_action(action_text), None)
    }

    /// Applies a pre-parsed action, with the policy's per-token logprobs
    /// when it has them.
    pub fn step_action(&mut self, mut action: AgentAction, logprobs: Option<Vec<f64>>) -> Result<StepOutcome, EnvError> {
        let task = self.task.clone().ok_or(EnvError::NotReset)?;
        if self.is_done() {
            return Err(EnvError::EpisodeFinished);
        }
        if action.raw_text.chars().count() > self.config.max_action_chars {
            let ids = std::mem::take(&mut action.token_ids);
            action = parse_action(truncate_chars(&action.raw_text, self.config.max_action_chars));
            action.token_ids = ids;
        }
        let token_count = if !action.token_ids.is_empty() {
            action.token_ids.len()
        } else if let Some(lp) = &logprobs {
            lp.len()
        } else {
            count_tokens(&action.raw_text)
        };
        let turn_index = self.trajectory.turns.len();
        let over_budget = self.trajectory.total_response_tokens + token_count > self.config.max_response_tokens;

        let tool_result_text = if over_budget {
            CONTEXT_LIMIT_NOTICE.to_string()
        } else if let Some(name) = action.tool_name.clone().filter(|_| action.kind == ActionKind::ToolCall) {
            let args = action.arguments.clone().map(Value::Object).unwrap_or(Value::Null);
            let ctx = ToolContext { ticket: &task.ticket, history: &self.history };
            let result = self.toolkit.dispatch(&name, &args, &mut self.world, &ctx);
            self.history.push(CallRecord {
                name,
                arguments: action.arguments.clone().unwrap_or_default(),
                ok: result.ok,
            });
            result.to_text()
        } else {
            FREE_TEXT_NOTICE.to_string()
        };

        let is_submit = !over_budget && action.is_submit();
        if is_submit {
            self.trajectory.final_answer = Some(submitted_answer(&action));
        }
        let per_token_logprobs = logprobs.filter(|lp| lp.len() == token_count);
        self.trajectory.turns.push(TurnRecord { turn_index, action, tool_result_text, per_token_logprobs, token_count });
        self.trajectory.total_response_tokens += token_count;

        let mut truncated = false;
        if over_budget {
            self.trajectory.terminated_by = Some(TerminatedBy::ContextLimit);
            truncated = true;
        } else if is_submit {
            self.trajectory.terminated_by = Some(TerminatedBy::Submit);
        } else if turn_index + 1 >= self.config.max_turns {
            self.trajectory.terminated_by = Some(TerminatedBy::TurnLimit);
            truncated = true;
        }
        let terminated = is_submit;
        if self.is_done() {
            self.reward = Some(score_episode(&self.trajectory, &task, &self.world, &self.weights));
        }
        Ok(StepOutcome { observation: self.observation(), terminated, truncated, reward: self.reward.clone() })
    }

    /// Ends a running episode as truncated (turn limit) and scores it.
    pub fn truncate(&mut self) -> Result<RewardBreakdown, EnvError> {
        let task = self.task.clone().ok_or(EnvError::NotReset)?;
        if self.is_done() {
            return Err(EnvError::EpisodeFinished);
        }
        self.trajectory.terminated_by = Some(TerminatedBy::TurnLimit);
        let r = score_episode(&self.trajectory, &task, &self.world, &self.weights);
        self.reward = Some(r.clone());
        Ok(r)
    }

    /// Current observation, trimmed to the character budget by dropping
    /// the oldest turns first and cutting the ticket only as a last resort.
    pub fn observation(&self) -> Observation {
        let max = self.config.max_observation_chars;
        let ticket = self.task.as_ref().map_or(String::new(), |t| t.ticket.clone());
        let mut obs = Observation {
            system_prompt: self.system_prompt.clone(),
            transcript: self.trajectory.turns.clone(),
            tool_results: self.trajectory.turns.last().map_or(String::new(), |t| t.tool_result_text.clone()),
            ticket,
            turn: self.trajectory.turns.len(),
        };
        while obs.chars() > max && !obs.transcript.is_empty() {
            obs.transcript.remove(0);
        }
        if obs.chars() > max {
            let full = obs.ticket.chars().count();
            let overhead = obs.chars() - full;
            obs.ticket = truncate_chars(&obs.ticket, max.saturating_sub(overhead)).to_string();
            if obs.chars() > max {
                let spare = max.saturating_sub(obs.chars() - obs.system_prompt.chars().count());
                obs.system_prompt = truncate_chars(&obs.system_prompt, spare).to_string();
            }
        }
        obs
    }

    /// Full transcript with termination status; byte-stable for a state.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let ticket = self.task.as_ref().map_or("", |t| t.ticket.as_str());
        let _ = write!(s, "=== system ===\n{}\n=== ticket ===\n{}\n", self.system_prompt, ticket);
        for t in &self.trajectory.turns {
            let _ = write!(
                s,
                "--- turn {} ({} tokens) ---\naction: {}\nresult: {}\n",
                t.turn_index + 1,
                t.token_count,
                t.action.raw_text,
                t.tool_result_text
            );
        }
        let status = match self.trajectory.terminated_by {
            None => "in progress".to_string(),
            Some(TerminatedBy::Submit) => {
                format!("submitted: {}", self.trajectory.final_answer.as_deref().unwrap_or(""))
            }
            Some(TerminatedBy::TurnLimit) => "turn limit reached".to_string(),
            Some(TerminatedBy::ContextLimit) => "response token budget exhausted".to_string(),
        };
        let _ = write!(s, "=== status: {status} ===\n");
        if let Some(r) = &self.reward {
            let _ = writeln!(s, "reward: {:.6} (capped: {})", r.total, r.capped);
        }
        s
    }
}

fn submitted_answer(action: &AgentAction) -> String {
    match action.arguments.as_ref().and_then(|a| a.get("answer")) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(v) => v.to_string(),
    }
}
