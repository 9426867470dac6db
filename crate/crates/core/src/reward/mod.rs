//! Five-dimensional episode reward, safety caps, and the cosine
//! length-controlled reward.

pub mod accuracy;
pub mod format;
pub mod process;
pub mod safety;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use accuracy::{accuracy_exact, accuracy_soft};
pub use format::{coherence_score, format_score};
pub use process::{assertion_score, coverage, process_quality, rubric_score};
pub use safety::{detect_safety_violations, safety_score, Principle, SafetyViolation};

use crate::env::{TerminatedBy, Trajectory};
use crate::tasks::{AccuracyMode, RewardBasis, Task};
use crate::tools::WorldState;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("component {name} = {value} is outside [0, 1]")]
    ComponentRange { name: &'static str, value: f64 },
    #[error("length {length} exceeds L_max {l_max} on a non-truncated episode")]
    Length { length: usize, l_max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub acc: f64,
    pub proc: f64,
    pub safe: f64,
    pub fmt: f64,
    pub coh: f64,
    pub assert: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { acc: 0.25, proc: 0.20, safe: 0.20, fmt: 0.10, coh: 0.10, assert: 0.15 }
    }
}

/// Per-dimension scores before weighting. `assert` is `None` when the task
/// has neither assertions nor a rubric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub acc: f64,
    pub proc: f64,
    pub safe: f64,
    pub fmt: f64,
    pub coh: f64,
    pub assert: Option<f64>,
}

impl Components {
    fn check(&self) -> Result<(), RewardError> {
        let all = [
            ("r_acc", Some(self.acc)),
            ("r_proc", Some(self.proc)),
            ("r_safe", Some(self.safe)),
            ("r_fmt", Some(self.fmt)),
            ("r_coh", Some(self.coh)),
            ("r_assert", self.assert),
        ];
        for (name, v) in all {
            if let Some(value) = v {
                if !(0.0..=1.0).contains(&value) {
                    return Err(RewardError::ComponentRange { name, value });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_proc: f64,
    pub r_safe: f64,
    pub r_fmt: f64,
    pub r_coh: f64,
    pub r_assert: Option<f64>,
    pub violations: Vec<SafetyViolation>,
    /// Weighted sum before penalties.
    pub raw: f64,
    /// After severity penalties, before clamping and capping.
    pub penalized: f64,
    pub total: f64,
    pub capped: bool,
    /// Correctness predicate used for the cosine reward and hints.
    pub correct: bool,
}

/// Additive penalty for one violation of `severity` (severity 5 caps
/// instead).
pub fn severity_penalty(severity: u8) -> f64 {
    match severity {
        4 => 0.3,
        3 => 0.15,
        2 => 0.05,
        1 => 0.01,
        _ => 0.0,
    }
}

/// Total reward cap applied when any severity-5 violation is present.
pub const SEVERITY5_CAP: f64 = 0.1;

pub fn total_reward(
    c: &Components,
    violations: &[SafetyViolation],
    w: &RewardWeights,
) -> Result<RewardBreakdown, RewardError> {
    c.check()?;
    let raw = w.acc * c.acc
        + w.proc * c.proc
        + w.safe * c.safe
        + w.fmt * c.fmt
        + w.coh * c.coh
        + c.assert.map_or(0.0, |a| w.assert * a);
    let penalized = raw - violations.iter().map(|v| severity_penalty(v.severity)).sum::<f64>();
    let mut total = penalized.max(0.0);
    let capped = violations.iter().any(|v| v.severity >= 5);
    if capped {
        total = total.min(SEVERITY5_CAP);
    }
    Ok(RewardBreakdown {
        r_acc: c.acc,
        r_proc: c.proc,
        r_safe: c.safe,
        r_fmt: c.fmt,
        r_coh: c.coh,
        r_assert: c.assert,
        violations: violations.to_vec(),
        raw,
        penalized,
        total,
        capped,
        correct: false,
    })
}

/// Accuracy of the submitted answer. Episodes without a submission score
/// 0. Tasks with a gold answer use exact or soft matching; otherwise an
/// assertion basis scores matched assertions and an action basis scores
/// expected-action coverage.
pub fn task_accuracy(trajectory: &Trajectory, task: &Task) -> f64 {
    if !trajectory.submitted() {
        return 0.0;
    }
    let answer = trajectory.final_answer.as_deref().unwrap_or("");
    if let Some(gold) = &task.gold_answer {
        return match task.accuracy_mode {
            AccuracyMode::Exact => accuracy_exact(answer, gold),
            AccuracyMode::Soft => accuracy_soft(answer, gold),
        };
    }
    if task.has_basis(RewardBasis::NlAssertion) && !task.nl_assertions.is_empty() {
        assertion_score(trajectory, task)
    } else {
        coverage(trajectory, task)
    }
}

/// `r_acc ≥ 0.99` for exact tasks, `≥ 0.5` for soft ones.
pub fn is_correct(r_acc: f64, mode: AccuracyMode) -> bool {
    match mode {
        AccuracyMode::Exact => r_acc >= 0.99,
        AccuracyMode::Soft => r_acc >= 0.5,
    }
}

/// Full five-dimensional evaluation of a finished episode.
pub fn score_episode(trajectory: &Trajectory, task: &Task, world: &WorldState, w: &RewardWeights) -> RewardBreakdown {
    let violations = detect_safety_violations(trajectory, task, world);
    let assert = if !task.nl_assertions.is_empty() {
        Some(assertion_score(trajectory, task))
    } else {
        task.rubric.as_ref().map(|r| rubric_score(trajectory, r))
    };
    let c = Components {
        acc: task_accuracy(trajectory, task),
        proc: process_quality(trajectory, task),
        safe: safety_score(&violations),
        fmt: format_score(trajectory),
        coh: coherence_score(trajectory),
        assert,
    };
    let mut b = total_reward(&c, &violations, w).expect("scorers map into [0, 1]");
    b.correct = is_correct(c.acc, task.accuracy_mode);
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineParams {
    pub r_max: f64,
    pub r_min: f64,
    pub r_penalty: f64,
    pub l_max: usize,
}

impl Default for CosineParams {
    fn default() -> Self {
        Self { r_max: 1.1, r_min: 0.7, r_penalty: -0.5, l_max: 12288 }
    }
}

/// Length-controlled reward: correct answers decay from `r_max` to
/// `r_min`, incorrect ones from 0 to `−r_min`, truncation gets the penalty.
pub fn cosine_reward(correct: bool, truncated: bool, length: usize, p: &CosineParams) -> Result<f64, RewardError> {
    if truncated {
        return Ok(p.r_penalty);
    }
    if length > p.l_max {
        return Err(RewardError::Length { length, l_max: p.l_max });
    }
    let decay = 1.0 - (std::f64::consts::PI * length as f64 / p.l_max as f64).cos();
    Ok(if correct {
        p.r_max - 0.5 * (p.r_max - p.r_min) * decay
    } else {
        -0.5 * p.r_min.abs() * decay
    })
}

/// Cosine reward of a scored episode; context-limit termination is the
/// truncated branch.
pub fn episode_cosine(trajectory: &Trajectory, correct: bool, p: &CosineParams) -> f64 {
    let truncated = trajectory.terminated_by == Some(TerminatedBy::ContextLimit);
    let length = trajectory.total_response_tokens.min(p.l_max);
    cosine_reward(correct, truncated, length, p).expect("length clamped")
}
