//! Linear-softmax toy policy: logits = θᵀφ(context) / temperature.

use md5::{Digest, Md5};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::vocab::{self, END, FIRST_LETTER, SUBMIT, VOCAB_SIZE};
use super::{Policy, PolicyError};
use crate::env::{AgentAction, Observation, TurnRecord};

/// Feature dimension.
pub const D: usize = 38;
/// Tokens per turn before the turn is cut.
pub const TURN_CAP: usize = 24;
/// Words of reasoning over a revealed finding that confirm it.
pub const REASON_SHORT: usize = 4;
/// Words of reasoning that examine it in depth.
pub const REASON_LONG: usize = 12;

pub mod feat {
    pub const BIAS: usize = 0;
    pub const TURN: usize = 1;
    pub const LAST_TOOL: usize = 6;
    pub const REVEALED: usize = 11;
    pub const FINDING: usize = 16;
    pub const HEAD: usize = 17;
    pub const TOOL_BODY: usize = 18;
    pub const SUBMIT_BODY: usize = 19;
    pub const AFTER_LETTER: usize = 20;
    pub const REASON_BODY: usize = 21;
    pub const WORDS_3: usize = 22;
    pub const WORDS_8: usize = 23;
    pub const TICKET: usize = 24;
    /// Answer slot after short reasoning over the revealed option.
    pub const CONFIRMED: usize = 28;
    /// Answer slot after long reasoning over the revealed option.
    pub const DEEP: usize = 33;
}

/// Privileged outcome hint visible only to the teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hint {
    None,
    Reinforcing,
    Corrective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LastTool {
    None,
    Lookup,
    Assess,
    Think,
    Other,
}

/// What the toy policy can see of an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnState {
    pub turn: usize,
    pub last_tool: LastTool,
    /// Option index revealed by a tool result.
    pub revealed: Option<usize>,
    pub finding: bool,
    pub ticket_bucket: usize,
    /// Longest reasoning (in words) written after the option was revealed.
    pub reasoning: usize,
}

impl TurnState {
    /// State before turn `turns.len()`, given the earlier turns.
    pub fn from_history(ticket: &str, turns: &[TurnRecord]) -> Self {
        Self::build(ticket, turns.len(), turns)
    }

    pub fn from_observation(obs: &Observation) -> Self {
        Self::build(&obs.ticket, obs.turn, &obs.transcript)
    }

    fn build(ticket: &str, turn: usize, turns: &[TurnRecord]) -> Self {
        let last_tool = match turns.last().and_then(|t| t.action.tool_name.as_deref()) {
            None if turns.is_empty() => LastTool::None,
            Some("lookup_fact") => LastTool::Lookup,
            Some("assess_case") => LastTool::Assess,
            Some("think") => LastTool::Think,
            _ => LastTool::Other,
        };
        let mut revealed = None;
        let mut finding = false;
        let mut reasoning = 0;
        for t in turns {
            if revealed.is_some() && t.action.tool_name.as_deref() == Some("think") {
                let words = t.action.arguments.as_ref().and_then(|a| a.get("thought")).and_then(Value::as_str);
                reasoning = reasoning.max(words.map_or(0, |w| w.split_whitespace().count()));
            }
            if let Ok(Value::Object(m)) = serde_json::from_str::<Value>(&t.tool_result_text) {
                finding |= m.contains_key("finding");
                if let Some(l) = m.get("supported_option").and_then(Value::as_str) {
                    revealed = vocab::LETTERS.iter().position(|c| l.starts_with(*c));
                }
            }
        }
        let ticket_bucket = (Md5::digest(ticket.as_bytes())[0] % 4) as usize;
        Self { turn, last_tool, revealed, finding, ticket_bucket, reasoning }
    }
}

/// Active (value 1) feature indices of one position.
pub type Features = Vec<usize>;

/// φ at position `prefix.len()` of a turn.
pub fn features(state: &TurnState, prefix: &[usize]) -> Features {
    use feat::*;
    let mut f = vec![BIAS, TURN + state.turn.min(4), LAST_TOOL + state.last_tool as usize];
    if let Some(r) = state.revealed {
        f.push(REVEALED + r);
    }
    if state.finding {
        f.push(FINDING);
    }
    match prefix.split_first() {
        None => {
            f.push(HEAD);
        }
        Some((&head, body)) => {
            let lettered = body.iter().any(|&t| vocab::is_letter(t));
            f.push(if head == SUBMIT {
                if lettered {
                    AFTER_LETTER
                } else {
                    SUBMIT_BODY
                }
            } else if vocab::is_tool(head) && head != vocab::THINK {
                TOOL_BODY
            } else {
                REASON_BODY
            });
            if let (true, false, Some(r)) = (head == SUBMIT, lettered, state.revealed) {
                if state.reasoning >= REASON_SHORT {
                    f.push(CONFIRMED + r);
                }
                if state.reasoning >= REASON_LONG {
                    f.push(DEEP + r);
                }
            }
            if body.len() >= 3 {
                f.push(WORDS_3);
            }
            if body.len() >= 8 {
                f.push(WORDS_8);
            }
        }
    }
    f.push(TICKET + state.ticket_bucket);
    f
}

/// Probability mass the hinted teacher puts on the token set a hint speaks
/// to. Conditioning on a hint moves the teacher to the closest distribution
/// (in KL) with that mass, so the pull vanishes once the student complies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HintTargets {
    /// Reinforcing, head after an assessment: a verification turn.
    pub verify: f64,
    /// Corrective, head before an option is revealed: the next evidence
    /// tool (look the finding up, then assess it).
    pub gather: f64,
    /// Any hint, head after a verification turn: submit.
    pub conclude: f64,
    /// Reinforcing, reasoning body: keep reasoning rather than end the turn.
    pub elaborate: f64,
    /// Corrective, reasoning body: the same, held higher.
    pub revisit: f64,
    /// Any hint, answer slot once an option is revealed: that option.
    pub answer: f64,
}

impl Default for HintTargets {
    fn default() -> Self {
        Self { verify: 0.95, gather: 0.95, conclude: 0.95, elaborate: 0.6, revisit: 0.95, answer: 0.97 }
    }
}

/// Token set a hint constrains at a position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HintSet {
    Token(usize),
    Except(usize),
}

impl HintSet {
    pub fn contains(self, t: usize) -> bool {
        match self {
            HintSet::Token(x) => t == x,
            HintSet::Except(x) => t != x,
        }
    }
}

impl HintTargets {
    /// Constraint at position `prefix.len()`, if the hint speaks to it.
    pub fn at(&self, state: &TurnState, hint: Hint, prefix: &[usize]) -> Option<(HintSet, f64)> {
        if hint == Hint::None {
            return None;
        }
        match prefix.split_first() {
            None => match (hint, state.last_tool) {
                (_, LastTool::Think) => Some((HintSet::Token(SUBMIT), self.conclude)),
                (Hint::Reinforcing, LastTool::Assess) => Some((HintSet::Token(vocab::THINK), self.verify)),
                (Hint::Corrective, _) if !state.finding => Some((HintSet::Token(vocab::LOOKUP), self.gather)),
                (Hint::Corrective, _) if state.revealed.is_none() => Some((HintSet::Token(vocab::ASSESS), self.gather)),
                _ => None,
            },
            Some((&head, body)) => {
                if head == vocab::THINK || !vocab::is_tool(head) {
                    Some((HintSet::Except(END), if hint == Hint::Corrective { self.revisit } else { self.elaborate }))
                } else if head == SUBMIT && body.is_empty() {
                    state.revealed.map(|r| (HintSet::Token(FIRST_LETTER + r), self.answer))
                } else {
                    None
                }
            }
        }
    }

    /// Hinted teacher log-probabilities from the hint-free ones.
    pub fn condition(&self, lq: &mut [f64; VOCAB_SIZE], state: &TurnState, hint: Hint, prefix: &[usize]) {
        if let Some((set, mass)) = self.at(state, hint, prefix) {
            reweight(lq, |t| set.contains(t), mass);
        }
    }
}

/// Rescales `lp` so the tokens in `set` carry total mass `mass`, keeping
/// relative probabilities inside and outside the set.
pub fn reweight(lp: &mut [f64; VOCAB_SIZE], set: impl Fn(usize) -> bool, mass: f64) {
    let lse = |inside: bool| {
        let xs: Vec<f64> = (0..VOCAB_SIZE).filter(|&t| set(t) == inside).map(|t| lp[t]).collect();
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            m
        } else {
            m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
        }
    };
    let (lin, lout) = (lse(true), lse(false));
    if !lin.is_finite() || !lout.is_finite() {
        return;
    }
    let (din, dout) = (mass.ln() - lin, (1.0 - mass).ln() - lout);
    for (t, x) in lp.iter_mut().enumerate() {
        *x += if set(t) { din } else { dout };
    }
}

/// Dense form of a feature list.
pub fn dense(f: &Features) -> [f64; D] {
    let mut out = [0.0; D];
    for &i in f {
        out[i] = 1.0;
    }
    out
}

/// Row-major D × |V| parameter matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub data: Vec<f64>,
}

impl Params {
    pub fn zeros() -> Self {
        Self { data: vec![0.0; D * VOCAB_SIZE] }
    }

    pub fn at(&self, f: usize, v: usize) -> f64 {
        self.data[f * VOCAB_SIZE + v]
    }

    pub fn set(&mut self, f: usize, v: usize, x: f64) {
        self.data[f * VOCAB_SIZE + v] = x;
    }

    pub fn row_mut(&mut self, f: usize) -> &mut [f64] {
        &mut self.data[f * VOCAB_SIZE..(f + 1) * VOCAB_SIZE]
    }

    /// self += a · x
    pub fn axpy(&mut self, a: f64, x: &Params) {
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Params) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    /// Logits at a context, before temperature.
    pub fn logits(&self, f: &Features) -> [f64; VOCAB_SIZE] {
        let mut z = [0.0; VOCAB_SIZE];
        for &i in f {
            for (zv, t) in z.iter_mut().zip(&self.data[i * VOCAB_SIZE..(i + 1) * VOCAB_SIZE]) {
                *zv += t;
            }
        }
        z
    }

    /// Adds `coef · φ ⊗ dz` to the parameters.
    pub fn add_outer(&mut self, f: &Features, coef: f64, dz: &[f64; VOCAB_SIZE]) {
        for &i in f {
            for (t, d) in self.data[i * VOCAB_SIZE..(i + 1) * VOCAB_SIZE].iter_mut().zip(dz) {
                *t += coef * d;
            }
        }
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(z: &[f64; VOCAB_SIZE]) -> [f64; VOCAB_SIZE] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    let mut out = [0.0; VOCAB_SIZE];
    for (o, x) in out.iter_mut().zip(z) {
        *o = x - lse;
    }
    out
}

/// Exact KL(p ‖ q) from log-probabilities.
pub fn kl_from_logs(lp: &[f64; VOCAB_SIZE], lq: &[f64; VOCAB_SIZE]) -> f64 {
    lp.iter().zip(lq).filter(|(a, _)| a.is_finite()).map(|(a, b)| a.exp() * (a - b)).sum()
}

/// ∂KL(softmax(z) ‖ q)/∂z = p ⊙ (log p − log q − KL).
pub fn kl_logit_grad(lp: &[f64; VOCAB_SIZE], lq: &[f64; VOCAB_SIZE]) -> (f64, [f64; VOCAB_SIZE]) {
    let kl = kl_from_logs(lp, lq);
    let mut g = [0.0; VOCAB_SIZE];
    for ((gv, a), b) in g.iter_mut().zip(lp).zip(lq) {
        *gv = a.exp() * (a - b - kl);
    }
    (kl, g)
}

/// Logit biases of the base model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyPrior {
    pub head_tool: f64,
    pub head_submit: f64,
    pub workflow: f64,
    pub body_end: f64,
    pub submit_letter: f64,
    pub letter_end: f64,
    pub revealed_letter: f64,
    /// Extra pull toward the revealed option after short and long reasoning.
    pub confirmed_letter: f64,
    pub deep_letter: f64,
    pub init_noise: f64,
}

impl Default for ToyPrior {
    fn default() -> Self {
        Self {
            head_tool: 2.5,
            head_submit: 3.0,
            workflow: 1.5,
            body_end: 6.0,
            submit_letter: 3.0,
            letter_end: 4.0,
            revealed_letter: 0.7,
            confirmed_letter: 1.0,
            deep_letter: 1.0,
            init_noise: 0.05,
        }
    }
}

impl ToyPrior {
    /// Base-model parameters: a rough workflow prior plus seeded noise.
    pub fn params(&self, rng: &mut ChaCha8Rng) -> Params {
        use feat::*;
        use vocab::{ASSESS, LOOKUP, THINK};
        let mut p = Params::zeros();
        for x in p.data.iter_mut() {
            *x = self.init_noise * (rng.gen::<f64>() * 2.0 - 1.0);
        }
        for t in [LOOKUP, ASSESS, THINK] {
            p.row_mut(HEAD)[t] += self.head_tool;
        }
        p.row_mut(HEAD)[SUBMIT] += self.head_submit;
        p.row_mut(LAST_TOOL + LastTool::None as usize)[LOOKUP] += self.workflow;
        p.row_mut(LAST_TOOL + LastTool::Lookup as usize)[ASSESS] += self.workflow;
        p.row_mut(LAST_TOOL + LastTool::Assess as usize)[SUBMIT] += self.workflow;
        p.row_mut(LAST_TOOL + LastTool::Assess as usize)[THINK] += self.workflow;
        p.row_mut(LAST_TOOL + LastTool::Think as usize)[SUBMIT] += self.workflow;
        p.row_mut(TOOL_BODY)[END] += self.body_end;
        p.row_mut(REASON_BODY)[END] += self.body_end;
        for l in 0..vocab::LETTERS.len() {
            p.row_mut(SUBMIT_BODY)[FIRST_LETTER + l] += self.submit_letter;
            p.row_mut(REVEALED + l)[FIRST_LETTER + l] += self.revealed_letter;
            p.row_mut(CONFIRMED + l)[FIRST_LETTER + l] += self.confirmed_letter;
            p.row_mut(DEEP + l)[FIRST_LETTER + l] += self.deep_letter;
        }
        p.row_mut(AFTER_LETTER)[END] += self.letter_end;
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySoftmaxPolicy {
    pub theta: Params,
    pub temperature: f64,
    /// Argmax decoding instead of sampling.
    pub greedy: bool,
}

impl ToySoftmaxPolicy {
    pub fn new(theta: Params) -> Self {
        Self { theta, temperature: 1.0, greedy: false }
    }

    pub fn log_probs(&self, f: &Features) -> [f64; VOCAB_SIZE] {
        let mut z = self.theta.logits(f);
        z.iter_mut().for_each(|x| *x /= self.temperature);
        log_softmax(&z)
    }

    /// Feature lists of every position of a turn.
    pub fn contexts(state: &TurnState, tokens: &[usize]) -> Vec<Features> {
        (0..tokens.len()).map(|k| features(state, &tokens[..k])).collect()
    }

    /// Teacher-forced per-token log-probabilities.
    pub fn logprob_of(&self, state: &TurnState, tokens: &[usize]) -> Result<Vec<f64>, PolicyError> {
        if let Some(&t) = tokens.iter().find(|&&t| t >= VOCAB_SIZE) {
            return Err(PolicyError::OutOfVocabulary(t));
        }
        Ok(Self::contexts(state, tokens).iter().zip(tokens).map(|(f, &t)| self.log_probs(f)[t]).collect())
    }

    /// Generates one turn: tokens until the end token or the turn cap.
    pub fn sample_turn(&self, state: &TurnState, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
        let mut tokens = Vec::new();
        let mut lps = Vec::new();
        while tokens.len() < TURN_CAP {
            let lp = self.log_probs(&features(state, &tokens));
            let t = if self.greedy { argmax(&lp) } else { sample(&lp, rng) };
            tokens.push(t);
            lps.push(lp[t]);
            if t == END {
                break;
            }
        }
        (tokens, lps)
    }

    /// Adds Σ_k coef_k ∇θ log π(token_k | context_k) to `grad`.
    pub fn grad_logprob(&self, contexts: &[Features], tokens: &[usize], coefs: &[f64], grad: &mut Params) {
        for ((f, &t), &c) in contexts.iter().zip(tokens).zip(coefs) {
            if c == 0.0 {
                continue;
            }
            let lp = self.log_probs(f);
            let mut dz = [0.0; VOCAB_SIZE];
            for (d, l) in dz.iter_mut().zip(&lp) {
                *d = -l.exp();
            }
            dz[t] += 1.0;
            grad.add_outer(f, c / self.temperature, &dz);
        }
    }
}

fn argmax(lp: &[f64; VOCAB_SIZE]) -> usize {
    let mut best = 0;
    for (i, &x) in lp.iter().enumerate() {
        if x > lp[best] {
            best = i;
        }
    }
    best
}

fn sample(lp: &[f64; VOCAB_SIZE], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, l) in lp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    lp.iter().rposition(|l| l.exp() > 0.0).unwrap_or(0)
}

impl Policy for ToySoftmaxPolicy {
    fn act(&mut self, obs: &Observation, rng: &mut ChaCha8Rng) -> (AgentAction, Vec<f64>) {
        let (tokens, lps) = self.sample_turn(&TurnState::from_observation(obs), rng);
        (vocab::decode(&tokens), lps)
    }

    fn logprob_of(&self, obs: &Observation, tokens: &[usize]) -> Result<Vec<f64>, PolicyError> {
        ToySoftmaxPolicy::logprob_of(self, &TurnState::from_observation(obs), tokens)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn state() -> TurnState {
        TurnState { turn: 1, last_tool: LastTool::Lookup, revealed: Some(2), finding: true, ticket_bucket: 3, reasoning: 0 }
    }

    fn base() -> ToySoftmaxPolicy {
        ToySoftmaxPolicy::new(ToyPrior::default().params(&mut ChaCha8Rng::seed_from_u64(1)))
    }

    #[test]
    fn zero_params_are_uniform() {
        let p = ToySoftmaxPolicy::new(Params::zeros());
        let lp = p.logprob_of(&state(), &[5, 9, 30]).unwrap();
        for l in lp {
            assert!((l + (VOCAB_SIZE as f64).ln()).abs() < 1e-12);
        }
        assert_eq!(p.logprob_of(&state(), &[64]), Err(PolicyError::OutOfVocabulary(64)));
    }

    #[test]
    fn normalized_everywhere() {
        let p = base();
        for prefix in [vec![], vec![SUBMIT], vec![SUBMIT, 5], vec![20, 21, 22, 23, 24, 25, 26, 27, 28]] {
            for hint in [Hint::None, Hint::Reinforcing, Hint::Corrective] {
                let mut lp = p.log_probs(&features(&state(), &prefix));
                HintTargets::default().condition(&mut lp, &state(), hint, &prefix);
                assert!(lp.iter().all(|x| x.is_finite()));
                assert!((lp.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_two_token_softmax() {
        let mut z = [f64::NEG_INFINITY; VOCAB_SIZE];
        z[0] = 9f64.ln();
        z[1] = 0.0;
        let lp = log_softmax(&z);
        assert!((lp[0] - 0.9f64.ln()).abs() < 1e-12);
        assert!((lp[1].exp() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn hint_targets_fire_where_they_apply() {
        let h = HintTargets::default();
        let after = |last_tool, revealed| TurnState { last_tool, revealed, ..state() };
        let cases = [
            (after(LastTool::Assess, Some(1)), vec![], Hint::Reinforcing, Some(HintSet::Token(vocab::THINK))),
            (after(LastTool::Assess, Some(1)), vec![], Hint::Corrective, None),
            (after(LastTool::Lookup, None), vec![], Hint::Corrective, Some(HintSet::Token(vocab::ASSESS))),
            (TurnState { finding: false, ..after(LastTool::None, None) }, vec![], Hint::Corrective, Some(HintSet::Token(vocab::LOOKUP))),
            (after(LastTool::Lookup, None), vec![], Hint::Reinforcing, None),
            (after(LastTool::Think, None), vec![], Hint::Corrective, Some(HintSet::Token(SUBMIT))),
            (state(), vec![vocab::THINK, 30], Hint::Reinforcing, Some(HintSet::Except(END))),
            (state(), vec![40, 30], Hint::Corrective, Some(HintSet::Except(END))),
            (state(), vec![SUBMIT], Hint::Corrective, Some(HintSet::Token(FIRST_LETTER + 2))),
            (state(), vec![SUBMIT, 6], Hint::Reinforcing, None),
            (after(LastTool::Lookup, None), vec![SUBMIT], Hint::Reinforcing, None),
            (state(), vec![], Hint::None, None),
        ];
        for (s, prefix, hint, want) in cases {
            assert_eq!(h.at(&s, hint, &prefix).map(|(set, _)| set), want);
        }
    }

    #[test]
    fn reweight_hits_target_and_keeps_ratios() {
        let p = base();
        let lp = p.log_probs(&features(&state(), &[]));
        let mut lq = lp;
        reweight(&mut lq, |t| t == 1 || t == 2, 0.3);
        assert!((lq.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(((lq[1].exp() + lq[2].exp()) - 0.3).abs() < 1e-12);
        assert!(((lq[1] - lq[2]) - (lp[1] - lp[2])).abs() < 1e-12);
        assert!(((lq[5] - lq[40]) - (lp[5] - lp[40])).abs() < 1e-12);
        // Already at the target: unchanged.
        let mut again = lq;
        reweight(&mut again, |t| t == 1 || t == 2, 0.3);
        for (a, b) in again.iter().zip(&lq) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn act_is_self_consistent_and_seeded() {
        let p = base();
        let s = state();
        let (a, la) = p.sample_turn(&s, &mut ChaCha8Rng::seed_from_u64(9));
        let (b, lb) = p.sample_turn(&s, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!((a.clone(), la.clone()), (b, lb));
        assert_eq!(p.logprob_of(&s, &a).unwrap(), la);
        assert!(a.len() <= TURN_CAP);
    }

    #[test]
    fn greedy_is_argmax() {
        let mut p = base();
        p.greedy = true;
        let (t, _) = p.sample_turn(&state(), &mut ChaCha8Rng::seed_from_u64(0));
        let lp = p.log_probs(&features(&state(), &[]));
        assert_eq!(t[0], argmax(&lp));
        // A vanishing temperature samples the argmax too.
        let mut cold = base();
        cold.temperature = 1e-6;
        let (c, _) = cold.sample_turn(&state(), &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(c, t);
    }

    #[test]
    fn closed_form_gradient_at_zero() {
        let p = ToySoftmaxPolicy::new(Params::zeros());
        let s = state();
        let ctx = ToySoftmaxPolicy::contexts(&s, &[7]);
        let mut g = Params::zeros();
        p.grad_logprob(&ctx, &[7], &[1.0], &mut g);
        let phi = dense(&ctx[0]);
        let u = 1.0 / VOCAB_SIZE as f64;
        for f in 0..D {
            for v in 0..VOCAB_SIZE {
                let want = phi[f] * (if v == 7 { 1.0 } else { 0.0 } - u);
                assert!((g.at(f, v) - want).abs() < 1e-15);
            }
        }
        let mut z = Params::zeros();
        p.grad_logprob(&ctx, &[7], &[0.0], &mut z);
        assert_eq!(z, Params::zeros());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = base();
        p.temperature = 0.8;
        let s = state();
        let tokens = [SUBMIT, 12, 6, END];
        let coefs = [0.3, -1.2, 0.7, 2.0];
        let ctx = ToySoftmaxPolicy::contexts(&s, &tokens);
        let obj = |p: &ToySoftmaxPolicy| -> f64 {
            p.logprob_of(&s, &tokens).unwrap().iter().zip(&coefs).map(|(l, c)| l * c).sum()
        };
        let mut g = Params::zeros();
        p.grad_logprob(&ctx, &tokens, &coefs, &mut g);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let scale = g.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for _ in 0..200 {
            let i = rng.gen_range(0..D * VOCAB_SIZE);
            let mut a = p.clone();
            a.theta.data[i] += h;
            let mut b = p.clone();
            b.theta.data[i] -= h;
            let fd = (obj(&a) - obj(&b)) / (2.0 * h);
            worst = worst.max((fd - g.data[i]).abs() / scale);
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn kl_gradient_formula() {
        let p = base();
        let q = ToySoftmaxPolicy::new(Params::zeros());
        let f = features(&state(), &[]);
        let (kl, g) = kl_logit_grad(&p.log_probs(&f), &q.log_probs(&f));
        assert!(kl > 0.0);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn state_from_history() {
        use crate::env::parse_action;
        let rec = |name: &str, result: &str| TurnRecord {
            turn_index: 0,
            action: parse_action(&format!(r#"{{"name":"{name}","arguments":{{}}}}"#)),
            tool_result_text: result.into(),
            per_token_logprobs: None,
            token_count: 1,
        };
        let s = TurnState::from_history("t", &[]);
        assert_eq!((s.turn, s.last_tool, s.revealed, s.finding), (0, LastTool::None, None, false));
        let turns = [rec("lookup_fact", r#"{"finding":"x"}"#), rec("assess_case", r#"{"supported_option":"D"}"#)];
        let s = TurnState::from_history("t", &turns);
        assert_eq!((s.turn, s.last_tool, s.revealed, s.finding), (2, LastTool::Assess, Some(3), true));
    }
}
