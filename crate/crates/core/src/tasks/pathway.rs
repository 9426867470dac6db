//! Multi-phase clinical pathways and their per-phase evaluation.

use serde::{Deserialize, Serialize};

use super::{ExpectedAction, TaskError};
use crate::env::Trajectory;
use crate::text::pattern_matches;

/// Turns after entry within which a time-pressured phase must act.
pub const TIME_PRESSURE_TURNS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// The phase is entered on the turn after this tool is first called.
    pub after_tool: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayPhase {
    pub name: String,
    pub active_domain: String,
    #[serde(default)]
    pub required_actions: Vec<ExpectedAction>,
    #[serde(default)]
    pub nl_assertions: Vec<String>,
    /// Absent only on the first phase.
    #[serde(default)]
    pub transition_condition: Option<Transition>,
    #[serde(default)]
    pub time_pressure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwaySpec {
    pub name: String,
    pub phases: Vec<PathwayPhase>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathwayScore {
    pub phases: Vec<f64>,
    pub overall: f64,
}

impl PathwaySpec {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.phases.len() < 2 {
            return Err(TaskError::Invalid(format!("pathway {} has fewer than 2 phases", self.name)));
        }
        for (i, phase) in self.phases.iter().enumerate().skip(1) {
            let Some(tr) = &phase.transition_condition else {
                return Err(TaskError::Invalid(format!("phase {} lacks a transition", phase.name)));
            };
            let earlier = self.phases[..i]
                .iter()
                .flat_map(|p| &p.required_actions)
                .any(|a| a.tool_name == tr.after_tool);
            if !earlier {
                return Err(TaskError::Invalid(format!(
                    "phase {} transitions on {}, which no earlier phase produces",
                    phase.name, tr.after_tool
                )));
            }
        }
        Ok(())
    }
}

/// Scores each phase on required-action coverage plus assertion matches,
/// counted over the turns from the phase's entry onward. Phases never
/// entered score 0; the overall score is the mean over phases.
pub fn evaluate_pathway(trajectory: &Trajectory, pathway: &PathwaySpec) -> PathwayScore {
    let n_turns = trajectory.turns.len();
    let mut entry: Option<usize> = if n_turns > 0 { Some(0) } else { None };
    let mut phases = Vec::with_capacity(pathway.phases.len());
    for (i, phase) in pathway.phases.iter().enumerate() {
        if i > 0 {
            entry = match (entry, &phase.transition_condition) {
                (Some(prev), Some(tr)) => trajectory
                    .tool_calls()
                    .find(|(t, name, _)| *t >= prev && *name == tr.after_tool)
                    .map(|(t, _, _)| t + 1)
                    .filter(|&t| t < n_turns),
                _ => None,
            };
        }
        phases.push(entry.map_or(0.0, |start| score_phase(trajectory, phase, start)));
    }
    let overall = if phases.is_empty() { 0.0 } else { phases.iter().sum::<f64>() / phases.len() as f64 };
    PathwayScore { phases, overall }
}

fn score_phase(trajectory: &Trajectory, phase: &PathwayPhase, start: usize) -> f64 {
    let end = if phase.time_pressure { start + TIME_PRESSURE_TURNS } else { usize::MAX };
    let calls: Vec<_> = trajectory.tool_calls().filter(|(t, _, _)| *t >= start && *t < end).collect();
    let matched_actions = phase
        .required_actions
        .iter()
        .filter(|ea| calls.iter().any(|(_, name, args)| ea.matches(name, args)))
        .count();
    let mut text = String::new();
    for t in trajectory.turns.iter().skip(start) {
        text.push_str(&t.action.raw_text);
        text.push('\n');
        text.push_str(&t.tool_result_text);
        text.push('\n');
    }
    if let Some(a) = &trajectory.final_answer {
        text.push_str(a);
    }
    let matched_assertions = phase.nl_assertions.iter().filter(|p| pattern_matches(p, &text)).count();
    let total = phase.required_actions.len() + phase.nl_assertions.len();
    if total == 0 {
        1.0
    } else {
        (matched_actions + matched_assertions) as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{parse_action, TurnRecord};

    fn traj(calls: &[&str]) -> Trajectory {
        let mut t = Trajectory::new("x");
        for (i, name) in calls.iter().enumerate() {
            t.turns.push(TurnRecord {
                turn_index: i,
                action: parse_action(&format!("{{\"name\":\"{name}\",\"arguments\":{{}}}}")),
                tool_result_text: String::new(),
                per_token_logprobs: None,
                token_count: 1,
            });
        }
        t.total_response_tokens = calls.len();
        t
    }

    fn two_phase() -> PathwaySpec {
        PathwaySpec {
            name: "p".into(),
            phases: vec![
                PathwayPhase {
                    name: "triage".into(),
                    active_domain: "triage_emergency".into(),
                    required_actions: vec![ExpectedAction::new("get_vitals"), ExpectedAction::new("order_ecg")],
                    nl_assertions: vec![],
                    transition_condition: None,
                    time_pressure: false,
                },
                PathwayPhase {
                    name: "cardiology".into(),
                    active_domain: "clinical_diagnosis".into(),
                    required_actions: vec![ExpectedAction::new("order_troponin")],
                    nl_assertions: vec![],
                    transition_condition: Some(Transition { after_tool: "order_ecg".into() }),
                    time_pressure: false,
                },
            ],
        }
    }

    #[test]
    fn both_phases_complete() {
        let s = evaluate_pathway(&traj(&["get_vitals", "order_ecg", "order_troponin"]), &two_phase());
        assert_eq!(s.phases, vec![1.0, 1.0]);
        assert_eq!(s.overall, 1.0);
    }

    #[test]
    fn stops_after_first_phase() {
        let s = evaluate_pathway(&traj(&["get_vitals", "order_ecg"]), &two_phase());
        assert_eq!(s.phases, vec![1.0, 0.0]);
        assert_eq!(s.overall, 0.5);
    }

    #[test]
    fn empty_trajectory() {
        assert_eq!(evaluate_pathway(&traj(&[]), &two_phase()).overall, 0.0);
    }

    #[test]
    fn validation() {
        assert!(two_phase().validate().is_ok());
        let mut p = two_phase();
        p.phases[1].transition_condition = Some(Transition { after_tool: "order_troponin".into() });
        assert!(p.validate().is_err());
        p.phases.pop();
        assert!(p.validate().is_err());
    }

    #[test]
    fn time_pressure_window() {
        let mut p = two_phase();
        p.phases[1].time_pressure = true;
        let late = traj(&["get_vitals", "order_ecg", "think", "think", "think", "order_troponin"]);
        assert_eq!(evaluate_pathway(&late, &p).phases[1], 0.0);
    }
}
