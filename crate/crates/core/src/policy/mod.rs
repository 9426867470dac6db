//! Policies: the contract, the toy softmax policy, replay of recorded
//! actions, and the line-protocol bridge for external agents.

pub mod bridge;
pub mod toy;
pub mod vocab;

use std::collections::VecDeque;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

pub use toy::{features, Features, Hint, HintSet, HintTargets, LastTool, Params, ToyPrior, ToySoftmaxPolicy, TurnState};

use crate::env::{parse_action, read_jsonl, AgentAction, Env, EnvError, Observation, Trajectory};
use crate::tasks::Task;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("token {0} is outside the vocabulary")]
    OutOfVocabulary(usize),
    #[error("this policy does not expose token probabilities")]
    NoTokenModel,
    #[error("cannot read trajectory: {0}")]
    Parse(String),
}

/// π_θ: observation → action with per-token log-probabilities (nats).
pub trait Policy {
    fn act(&mut self, obs: &Observation, rng: &mut ChaCha8Rng) -> (AgentAction, Vec<f64>);

    /// Teacher-forced log-probabilities of `tokens` at `obs`.
    fn logprob_of(&self, _obs: &Observation, _tokens: &[usize]) -> Result<Vec<f64>, PolicyError> {
        Err(PolicyError::NoTokenModel)
    }
}

/// Emits recorded actions verbatim, then an empty submit forever.
#[derive(Debug, Clone, Default)]
pub struct ReplayPolicy {
    queue: VecDeque<(AgentAction, Vec<f64>)>,
}

impl ReplayPolicy {
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        Self { queue: texts.iter().map(|t| (parse_action(t.as_ref()), Vec::new())).collect() }
    }

    pub fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            queue: t
                .turns
                .iter()
                .map(|r| (r.action.clone(), r.per_token_logprobs.clone().unwrap_or_default()))
                .collect(),
        }
    }

    /// First trajectory of a JSONL file; an empty file replays nothing.
    pub fn from_file(path: &Path) -> Result<Self, PolicyError> {
        let file = std::fs::File::open(path).map_err(|e| PolicyError::Parse(e.to_string()))?;
        let all = read_jsonl(std::io::BufReader::new(file)).map_err(PolicyError::Parse)?;
        Ok(all.first().map(Self::from_trajectory).unwrap_or_default())
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }
}

pub fn empty_submit() -> AgentAction {
    parse_action(&json!({"name": "submit_answer", "arguments": {"answer": ""}}).to_string())
}

impl Policy for ReplayPolicy {
    fn act(&mut self, _obs: &Observation, _rng: &mut ChaCha8Rng) -> (AgentAction, Vec<f64>) {
        self.queue.pop_front().unwrap_or_else(|| (empty_submit(), Vec::new()))
    }
}

/// Runs one episode of `policy` on `task` to termination.
pub fn rollout(env: &mut Env, task: &Task, policy: &mut dyn Policy, rng: &mut ChaCha8Rng) -> Result<Trajectory, EnvError> {
    let mut obs = env.reset(task)?;
    while !env.is_done() {
        let (action, lps) = policy.act(&obs, rng);
        let lps = (!lps.is_empty()).then_some(lps);
        obs = env.step_action(action, lps)?.observation;
    }
    Ok(env.trajectory().clone())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::env::EpisodeConfig;
    use crate::tasks::micro_clinic_suite;

    #[test]
    fn empty_replay_submits_immediately() {
        let m = micro_clinic_suite(2, 1).remove(0);
        let mut env = Env::new(EpisodeConfig::default(), None).unwrap();
        let mut p = ReplayPolicy::default();
        let t = rollout(&mut env, &m.task, &mut p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(t.turns.len(), 1);
        assert_eq!(t.final_answer.as_deref(), Some(""));
        assert_eq!(env.reward().unwrap().r_acc, 0.0);
    }

    #[test]
    fn scripted_solution_is_correct() {
        for m in micro_clinic_suite(4, 5) {
            let mut env = Env::new(EpisodeConfig::default(), None).unwrap();
            let mut p = ReplayPolicy::from_texts(&m.solution_actions());
            rollout(&mut env, &m.task, &mut p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(env.reward().unwrap().r_acc, 1.0);
            assert_eq!(p.remaining(), 0);
        }
    }

    #[test]
    fn toy_rollout_is_seeded_and_logged() {
        let m = micro_clinic_suite(5, 1).remove(0);
        let theta = ToyPrior::default().params(&mut ChaCha8Rng::seed_from_u64(1));
        let run = |seed| {
            let mut env = Env::new(EpisodeConfig { max_response_tokens: 48, ..Default::default() }, None).unwrap();
            let mut p = ToySoftmaxPolicy::new(theta.clone());
            rollout(&mut env, &m.task, &mut p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        };
        let a = run(11);
        assert_eq!(a, run(11));
        assert!(a.check().is_ok());
        for t in &a.turns {
            let lp = t.per_token_logprobs.as_ref().unwrap();
            assert_eq!(lp.len(), t.token_count);
            assert_eq!(t.action.token_ids.len(), t.token_count);
        }
    }
}
