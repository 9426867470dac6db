//! Process quality, rubric and assertion scoring.

use std::collections::BTreeSet;

use crate::env::Trajectory;
use crate::tasks::{Rubric, Task};
use crate::text::pattern_matches;

/// Text that assertions and rubric elements are matched against.
pub fn evidence_text(trajectory: &Trajectory) -> String {
    let mut s = trajectory.transcript_text();
    if let Some(a) = &trajectory.final_answer {
        s.push_str(a);
    }
    s
}

/// Fraction of expected actions matched by some call.
pub fn coverage(trajectory: &Trajectory, task: &Task) -> f64 {
    if task.expected_actions.is_empty() {
        return 1.0;
    }
    let matched = task
        .expected_actions
        .iter()
        .filter(|ea| trajectory.tool_calls().any(|(_, name, args)| ea.matches(name, args)))
        .count();
    matched as f64 / task.expected_actions.len() as f64
}

/// `0.6·coverage + 0.2·diversity + 0.2·thoroughness`, blended 70/30 with
/// the rubric score when the task has one. No calls scores 0.
pub fn process_quality(trajectory: &Trajectory, task: &Task) -> f64 {
    let calls: Vec<_> = trajectory.tool_calls().collect();
    let base = if calls.is_empty() {
        0.0
    } else {
        let signatures: BTreeSet<String> =
            calls.iter().map(|(_, n, a)| format!("{n}{}", serde_json::to_string(a).unwrap_or_default())).collect();
        let names: BTreeSet<&str> = calls.iter().map(|(_, n, _)| *n).collect();
        let diversity = signatures.len() as f64 / calls.len() as f64;
        let thoroughness = if task.expected_actions.is_empty() {
            1.0
        } else {
            (names.len() as f64 / task.expected_actions.len() as f64).min(1.0)
        };
        0.6 * coverage(trajectory, task) + 0.2 * diversity + 0.2 * thoroughness
    };
    match &task.rubric {
        Some(r) => 0.7 * rubric_score(trajectory, r) + 0.3 * base,
        None => base,
    }
}

/// Share of required elements and tools present, less one share per
/// forbidden element present, clamped to [0, 1].
pub fn rubric_score(trajectory: &Trajectory, rubric: &Rubric) -> f64 {
    let text = evidence_text(trajectory);
    let called: BTreeSet<&str> = trajectory.tool_calls().map(|(_, n, _)| n).collect();
    let items = rubric.required_elements.len() + rubric.required_tools.len();
    let hits = rubric.required_elements.iter().filter(|p| pattern_matches(p, &text)).count()
        + rubric.required_tools.iter().filter(|t| called.contains(t.as_str())).count();
    let forbidden = rubric.forbidden_elements.iter().filter(|p| pattern_matches(p, &text)).count();
    let denom = items.max(1) as f64;
    let base = if items == 0 { 1.0 } else { hits as f64 / denom };
    (base - forbidden as f64 / denom).clamp(0.0, 1.0)
}

/// Fraction of assertion patterns found in the transcript or answer.
pub fn assertion_score(trajectory: &Trajectory, task: &Task) -> f64 {
    if task.nl_assertions.is_empty() {
        return 0.0;
    }
    let text = evidence_text(trajectory);
    let n = task.nl_assertions.iter().filter(|p| pattern_matches(p, &text)).count();
    n as f64 / task.nl_assertions.len() as f64
}
