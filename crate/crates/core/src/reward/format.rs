//! Format grading and rule-based coherence.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::env::{fenced_blocks, find_call, json_objects, ActionKind, AgentAction, CallFormat, Trajectory};

/// Minimum length of a concluding answer, in characters (exclusive).
pub const MIN_ANSWER_CHARS: usize = 10;

/// Grade of one action: 1.0 bare call document, 0.8 fenced, 0.5 embedded
/// in prose or a `name` without `arguments`, 0.0 otherwise.
pub fn action_format(text: &str) -> f64 {
    match find_call(text) {
        Some((_, _, CallFormat::Bare)) => 1.0,
        Some((_, _, CallFormat::Fenced)) => 0.8,
        Some((_, _, CallFormat::Embedded)) => 0.5,
        None if has_partial_call(text) => 0.5,
        None => 0.0,
    }
}

fn has_partial_call(text: &str) -> bool {
    let named = |s: &str| {
        serde_json::from_str::<Value>(s.trim())
            .ok()
            .and_then(|v| v.get("name").map(Value::is_string))
            .unwrap_or(false)
    };
    named(text) || fenced_blocks(text).into_iter().any(named) || json_objects(text).into_iter().any(named)
}

/// Concluding text of an action: the answer plus reasoning of a submit,
/// or the whole text of a free-text turn.
pub fn conclusion_text(action: &AgentAction) -> Option<String> {
    if action.is_submit() {
        let args = action.arguments.as_ref()?;
        let part = |k: &str| match args.get(k) {
            Some(Value::String(s)) => s.trim().to_string(),
            Some(Value::Null) | None => String::new(),
            Some(v) => v.to_string(),
        };
        Some(format!("{} {}", part("answer"), part("reasoning")).trim().to_string())
    } else if action.kind == ActionKind::FreeText {
        Some(action.raw_text.trim().to_string())
    } else {
        None
    }
}

/// Mean per-turn grade. A concluding final turn whose answer text has at
/// most ten characters scores 0.
pub fn format_score(trajectory: &Trajectory) -> f64 {
    let n = trajectory.turns.len();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = trajectory
        .turns
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let grade = action_format(&t.action.raw_text);
            if i + 1 == n {
                if let Some(c) = conclusion_text(&t.action) {
                    if c.chars().count() <= MIN_ANSWER_CHARS {
                        return 0.0;
                    }
                }
            }
            grade
        })
        .sum();
    sum / n as f64
}

const NEGATIONS: &[&str] = &["not ", "no ", "ruled out ", "rules out ", "rule out ", "excluded ", "unlikely ", "without "];

fn negated(text: &str, item: &str) -> bool {
    NEGATIONS.iter().any(|n| text.contains(&format!("{n}{item}")))
}

/// Conditions the agent itself listed earlier: `differential` arrays of
/// `generate_ddx` results and `Differential:` lines in its own text.
fn differential(trajectory: &Trajectory) -> Vec<String> {
    let mut out = Vec::new();
    for t in trajectory.turns.iter().take(trajectory.turns.len().saturating_sub(1)) {
        if t.action.is_call("generate_ddx") {
            if let Ok(v) = serde_json::from_str::<Value>(&t.tool_result_text) {
                if let Some(items) = v.get("differential").and_then(Value::as_array) {
                    out.extend(items.iter().filter_map(Value::as_str).map(str::to_lowercase));
                }
            }
        }
        for line in t.action.raw_text.to_lowercase().lines() {
            if let Some(rest) = line.split("differential:").nth(1) {
                out.extend(
                    rest.split([',', ';'])
                        .map(|s| s.trim_matches(|c: char| !c.is_alphanumeric() && c != ' ').trim().to_string())
                        .filter(|s| !s.is_empty()),
                );
            }
        }
    }
    out
}

/// Starts at 1.0: −0.4 when the final answer negates an earlier
/// differential entry, −0.3 without a conclusion, −0.3 when one call is
/// repeated more than three times.
pub fn coherence_score(trajectory: &Trajectory) -> f64 {
    let mut score: f64 = 1.0;
    let last = trajectory.turns.last();
    let conclusion = last.and_then(|t| conclusion_text(&t.action)).unwrap_or_default();
    let answer = trajectory.final_answer.clone().unwrap_or_else(|| conclusion.clone()).to_lowercase();
    if !answer.is_empty() && differential(trajectory).iter().any(|d| negated(&answer, d)) {
        score -= 0.4;
    }
    if conclusion.chars().count() <= MIN_ANSWER_CHARS {
        score -= 0.3;
    }
    let mut repeats: BTreeMap<String, usize> = BTreeMap::new();
    for (_, name, args) in trajectory.tool_calls() {
        *repeats.entry(format!("{name}{}", serde_json::to_string(args).unwrap_or_default())).or_insert(0) += 1;
    }
    if repeats.values().any(|&n| n > 3) {
        score -= 0.3;
    }
    score.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{parse_action, TurnRecord};

    fn traj(actions: &[&str]) -> Trajectory {
        let mut t = Trajectory::new("t");
        for (i, a) in actions.iter().enumerate() {
            t.turns.push(TurnRecord {
                turn_index: i,
                action: parse_action(a),
                tool_result_text: String::new(),
                per_token_logprobs: None,
                token_count: 1,
            });
        }
        t
    }

    const BARE: &str = r#"{"name":"lookup_fact","arguments":{}}"#;
    const FENCED: &str = "```json\n{\"name\":\"lookup_fact\",\"arguments\":{}}\n```";
    const PARTIAL: &str = r#"{"name":"lookup_fact"}"#;
    const SUBMIT: &str = r#"{"name":"submit_answer","arguments":{"answer":"A","reasoning":"the assessment supports A"}}"#;

    #[test]
    fn four_grades() {
        assert_eq!(format_score(&traj(&[BARE])), 1.0);
        assert_eq!(format_score(&traj(&[FENCED])), 0.8);
        assert_eq!(format_score(&traj(&[PARTIAL])), 0.5);
        assert_eq!(format_score(&traj(&["{oops"])), 0.0);
        assert_eq!(action_format("I will call {\"name\":\"x\",\"arguments\":{}} now"), 0.5);
    }

    #[test]
    fn short_final_answer_scores_zero() {
        assert_eq!(format_score(&traj(&[BARE, r#"{"name":"submit_answer","arguments":{"answer":"A"}}"#])), 0.5);
        assert_eq!(format_score(&traj(&[BARE, SUBMIT])), 1.0);
        assert_eq!(format_score(&traj(&[])), 0.0);
    }

    #[test]
    fn coherence_rules() {
        assert_eq!(coherence_score(&traj(&[BARE, SUBMIT])), 1.0);
        assert!((coherence_score(&traj(&[BARE])) - 0.7).abs() < 1e-12);
        let five = traj(&[BARE, BARE, BARE, BARE, BARE]);
        assert!(coherence_score(&five) <= 0.7);
        assert!((coherence_score(&five) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn contradiction_with_own_differential() {
        let mut t = traj(&[
            "Differential: sepsis, pneumonia",
            r#"{"name":"submit_answer","arguments":{"answer":"not sepsis, likely viral illness"}}"#,
        ]);
        t.final_answer = Some("not sepsis, likely viral illness".into());
        assert!((coherence_score(&t) - 0.6).abs() < 1e-12);
    }
}
