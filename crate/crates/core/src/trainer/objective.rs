//! Group advantages, filtering, privileged teacher contexts, the
//! turn-level truncated KL, and the combined objective with its exact
//! gradient.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::policy::toy::{features, kl_from_logs, kl_logit_grad, log_softmax, Features};
use crate::policy::vocab::{encode_words, VOCAB_SIZE};
use crate::policy::{Hint, HintTargets, Params, TurnState};

/// Guard added to the group standard deviation.
pub const ADV_EPS: f64 = 1e-6;

/// Â_i = (R_i − mean) / (population std + 1e-6); exactly 0 for a constant group.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    if rewards.windows(2).all(|w| w[0] == w[1]) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let sd = var.sqrt() + ADV_EPS;
    rewards.iter().map(|r| (r - mean) / sd).collect()
}

/// Indices of groups whose correctness flags are not all equal.
pub fn dynamic_filter(flags: &[Vec<bool>]) -> Vec<usize> {
    flags.iter().enumerate().filter(|(_, g)| g.iter().any(|&c| c != g[0])).map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintCatalog {
    pub reinforcing: Vec<String>,
    pub corrective: Vec<String>,
    pub targets: HintTargets,
}

impl Default for HintCatalog {
    fn default() -> Self {
        Self {
            reinforcing: vec!["Reasoning appears sound".into(), "The evidence supports this path".into()],
            corrective: vec!["Revisit the differential diagnosis".into(), "Review the case data again".into()],
            targets: HintTargets::default(),
        }
    }
}

/// Teacher-side context of one turn: the hint flag plus the literal hint
/// tokens that sit before the response and are dropped from teacher output.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivilegedContext {
    pub hint: Hint,
    pub targets: HintTargets,
    pub hint_tokens: Vec<usize>,
    /// Positions of the hint in the teacher input; response positions follow.
    pub excluded: Range<usize>,
}

impl PrivilegedContext {
    pub fn none() -> Self {
        Self { hint: Hint::None, targets: HintTargets::default(), hint_tokens: Vec::new(), excluded: 0..0 }
    }
}

/// Per-turn teacher contexts: reinforcing for a correct trajectory,
/// corrective otherwise, none when hints are disabled.
pub fn privileged_context(turns: usize, correct: bool, catalog: &HintCatalog, enabled: bool) -> Vec<PrivilegedContext> {
    (0..turns)
        .map(|t| {
            if !enabled {
                return PrivilegedContext::none();
            }
            let (hint, texts) =
                if correct { (Hint::Reinforcing, &catalog.reinforcing) } else { (Hint::Corrective, &catalog.corrective) };
            let hint_tokens = encode_words(&texts[t % texts.len()]);
            let n = hint_tokens.len();
            PrivilegedContext { hint, targets: catalog.targets, hint_tokens, excluded: 0..n }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnSample {
    pub state: TurnState,
    pub tokens: Vec<usize>,
    /// Rollout-time log-probabilities of `tokens`.
    pub old_logprobs: Vec<f64>,
    /// Response tokens generated before this turn.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSample {
    pub turns: Vec<TurnSample>,
    pub advantage: f64,
    pub correct: bool,
}

impl EpisodeSample {
    /// Rebuilds per-turn states from a recorded toy trajectory.
    pub fn from_trajectory(ticket: &str, t: &Trajectory, advantage: f64, correct: bool) -> Self {
        let mut offset = 0;
        let turns = t
            .turns
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let s = TurnSample {
                    state: TurnState::from_history(ticket, &t.turns[..i]),
                    tokens: r.action.token_ids.clone(),
                    old_logprobs: r.per_token_logprobs.clone().unwrap_or_default(),
                    offset,
                };
                offset += r.token_count;
                s
            })
            .collect();
        Self { turns, advantage, correct }
    }
}

fn lsm(theta: &Params, f: &Features, temperature: f64) -> [f64; VOCAB_SIZE] {
    let mut z = theta.logits(f);
    z.iter_mut().for_each(|x| *x /= temperature);
    log_softmax(&z)
}

/// Teacher distribution at a response position, conditioned on the hint.
fn teacher_lsm(teacher: &Params, state: &TurnState, ctx: &PrivilegedContext, prefix: &[usize], temperature: f64) -> [f64; VOCAB_SIZE] {
    let mut lq = lsm(teacher, &features(state, prefix), temperature);
    ctx.targets.condition(&mut lq, state, ctx.hint, prefix);
    lq
}

/// Teacher log-probabilities of the response tokens of a turn. The teacher
/// reads hint tokens followed by the response; outputs at the excluded hint
/// positions are removed before returning.
pub fn teacher_logprobs(teacher: &Params, turn: &TurnSample, ctx: &PrivilegedContext, temperature: f64) -> Vec<f64> {
    let input: Vec<Option<usize>> =
        ctx.hint_tokens.iter().map(|_| None).chain(turn.tokens.iter().map(|&t| Some(t))).collect();
    input
        .iter()
        .enumerate()
        .filter(|(i, _)| !ctx.excluded.contains(i))
        .map(|(i, tok)| {
            let k = i - ctx.excluded.len();
            let lp = teacher_lsm(teacher, &turn.state, ctx, &turn.tokens[..k], temperature);
            lp[tok.expect("response position")]
        })
        .collect()
}

/// Whether a turn lies entirely within the response budget.
pub fn within_budget(turn: &TurnSample, l_max: usize) -> bool {
    turn.offset + turn.tokens.len() <= l_max
}

/// Eq.-2 style KL of one episode: per turn the mean over positions of the
/// exact KL(student ‖ teacher with hint); turns past `l_max` and empty turns
/// give 0. Adds `scale · ∇θ_S` of the total into `grad` when given.
pub fn turn_level_kl(
    student: &Params,
    teacher: &Params,
    ep: &EpisodeSample,
    ctx: &[PrivilegedContext],
    l_max: usize,
    temperature: f64,
    mut grad: Option<(&mut Params, f64)>,
) -> (f64, Vec<f64>) {
    let mut per_turn = Vec::with_capacity(ep.turns.len());
    for (turn, c) in ep.turns.iter().zip(ctx) {
        let n = turn.tokens.len();
        if n == 0 || !within_budget(turn, l_max) {
            per_turn.push(0.0);
            continue;
        }
        let mut sum = 0.0;
        for k in 0..n {
            let prefix = &turn.tokens[..k];
            let fs = features(&turn.state, prefix);
            let lp = lsm(student, &fs, temperature);
            let lq = teacher_lsm(teacher, &turn.state, c, prefix, temperature);
            match grad.as_mut() {
                Some((g, scale)) => {
                    let (kl, dz) = kl_logit_grad(&lp, &lq);
                    sum += kl;
                    g.add_outer(&fs, *scale / (n as f64 * temperature), &dz);
                }
                None => sum += kl_from_logs(&lp, &lq),
            }
        }
        per_turn.push(sum / n as f64);
    }
    (per_turn.iter().sum(), per_turn)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub beta: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub l_max: usize,
    pub temperature: f64,
}

/// Everything the objective needs besides θ_S.
pub struct Batch<'a> {
    pub episodes: &'a [EpisodeSample],
    pub contexts: &'a [Vec<PrivilegedContext>],
    /// Rollout-time parameters (π_old).
    pub old: &'a Params,
    pub teacher: &'a Params,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub grpo: f64,
    pub beta_kl: f64,
    /// λ · mean over episodes of Σ_t KL_t.
    pub distill: f64,
    /// Mean over episodes of Σ_t KL_t, unweighted.
    pub kl: f64,
    pub clip_activations: usize,
    pub max_ratio_dev: f64,
    pub tokens: usize,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.grpo + self.beta_kl + self.distill
    }
}

/// L = L_GRPO + β·KL(π_θ ‖ π_old) + λ·mean_τ Σ_t KL_t. GRPO and the β term
/// are token means over the batch; advantages are broadcast over every
/// token of their trajectory. Returns the gradient of L and of the
/// distillation term alone when `want_grad`.
pub fn total_loss(theta: &Params, batch: &Batch, cfg: &ObjectiveConfig, want_grad: bool) -> (LossParts, Option<(Params, Params)>) {
    let tau = cfg.temperature;
    let n_tok: usize = batch.episodes.iter().flat_map(|e| &e.turns).map(|t| t.tokens.len()).sum();
    let n_ep = batch.episodes.len();
    let mut parts = LossParts { tokens: n_tok, ..Default::default() };
    let mut g = want_grad.then(Params::zeros);
    let mut gd = want_grad.then(Params::zeros);
    if n_tok == 0 || n_ep == 0 {
        return (parts, g.zip(gd));
    }
    let inv_tok = 1.0 / n_tok as f64;
    for ep in batch.episodes {
        let a = ep.advantage;
        for turn in &ep.turns {
            for (k, &tok) in turn.tokens.iter().enumerate() {
                let f = features(&turn.state, &turn.tokens[..k]);
                let lp = lsm(theta, &f, tau);
                let ratio = (lp[tok] - turn.old_logprobs[k]).exp();
                parts.max_ratio_dev = parts.max_ratio_dev.max((ratio - 1.0).abs());
                let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
                let unclipped_active = ratio * a <= clipped * a;
                parts.grpo -= inv_tok * if unclipped_active { ratio * a } else { clipped * a };
                if !unclipped_active {
                    parts.clip_activations += 1;
                }
                let lo = lsm(batch.old, &f, tau);
                let (kl_old, dkl) = kl_logit_grad(&lp, &lo);
                parts.beta_kl += cfg.beta * inv_tok * kl_old;
                if let Some(g) = g.as_mut() {
                    let mut dz = [0.0; VOCAB_SIZE];
                    if unclipped_active && a != 0.0 {
                        let c = -inv_tok * a * ratio;
                        for (d, l) in dz.iter_mut().zip(&lp) {
                            *d = -c * l.exp();
                        }
                        dz[tok] += c;
                    }
                    for (d, k) in dz.iter_mut().zip(&dkl) {
                        *d += cfg.beta * inv_tok * k;
                    }
                    g.add_outer(&f, 1.0 / tau, &dz);
                }
            }
        }
    }
    let mut kl_sum = 0.0;
    let scale = cfg.lambda / n_ep as f64;
    for (ep, ctx) in batch.episodes.iter().zip(batch.contexts) {
        let (kl, _) = turn_level_kl(theta, batch.teacher, ep, ctx, cfg.l_max, tau, gd.as_mut().map(|g| (g, scale)));
        kl_sum += kl;
    }
    parts.kl = kl_sum / n_ep as f64;
    parts.distill = cfg.lambda * parts.kl;
    if let (Some(g), Some(d)) = (g.as_mut(), gd.as_ref()) {
        g.axpy(1.0, d);
    }
    (parts, g.zip(gd))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::policy::toy::D;
    use crate::policy::vocab::{END, LOOKUP, SUBMIT};
    use crate::policy::{LastTool, ToyPrior};

    #[test]
    fn advantage_examples() {
        let a = group_advantages(&[1.0, 0.0, 0.5]);
        for (x, w) in a.iter().zip([1.2247, -1.2247, 0.0]) {
            assert!((x - w).abs() < 1e-4);
        }
        assert_eq!(group_advantages(&[0.7, 0.7, 0.7]), vec![0.0; 3]);
        let b = group_advantages(&[1.0, 0.0]);
        assert!((b[0] - 1.0).abs() < 1e-5 && (b[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn filter_keeps_mixed_in_order() {
        let t = true;
        let f = false;
        assert_eq!(dynamic_filter(&[vec![t, f, t]]), vec![0]);
        assert!(dynamic_filter(&[vec![t, t, t], vec![f, f, f]]).is_empty());
        let groups = vec![
            vec![t, t, t],
            vec![t, f, f],
            vec![f, f, f],
            vec![f, t, f],
            vec![t, t, t],
            vec![f, f, f],
            vec![t, t, f],
            vec![f, f, f],
        ];
        assert_eq!(dynamic_filter(&groups), vec![1, 3, 6]);
    }

    #[test]
    fn hints_follow_outcome() {
        let c = HintCatalog::default();
        let ok = privileged_context(3, true, &c, true);
        assert!(ok.iter().all(|p| p.hint == Hint::Reinforcing && p.excluded == (0..p.hint_tokens.len())));
        assert!(privileged_context(2, false, &c, true).iter().all(|p| p.hint == Hint::Corrective));
        assert!(privileged_context(2, false, &c, false).iter().all(|p| *p == PrivilegedContext::none()));
    }

    fn instance(rng: &mut ChaCha8Rng) -> (Params, Vec<EpisodeSample>, Vec<Vec<PrivilegedContext>>) {
        let theta = ToyPrior::default().params(rng);
        let mut eps = Vec::new();
        let mut ctxs = Vec::new();
        for e in 0..2 {
            let mut offset = 0;
            let mut turns = Vec::new();
            for t in 0..2 {
                let len = rng.gen_range(1..4);
                let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..VOCAB_SIZE)).collect();
                let state = TurnState {
                    turn: t,
                    last_tool: if t == 0 { LastTool::None } else { LastTool::Lookup },
                    revealed: None,
                    finding: t > 0,
                    ticket_bucket: e,
                    reasoning: 0,
                };
                turns.push(TurnSample { state, tokens, old_logprobs: Vec::new(), offset });
                offset += len;
            }
            let correct = e == 0;
            ctxs.push(privileged_context(2, correct, &HintCatalog::default(), true));
            eps.push(EpisodeSample { turns, advantage: if correct { 1.0 } else { -1.0 }, correct });
        }
        (theta, eps, ctxs)
    }

    fn with_old(theta: &Params, eps: &mut [EpisodeSample]) {
        for ep in eps.iter_mut() {
            for t in ep.turns.iter_mut() {
                t.old_logprobs = (0..t.tokens.len())
                    .map(|k| lsm(theta, &features(&t.state, &t.tokens[..k]), 1.0)[t.tokens[k]])
                    .collect();
            }
        }
    }

    fn cfg(lambda: f64) -> ObjectiveConfig {
        ObjectiveConfig { beta: 0.01, lambda, clip_eps: 0.2, l_max: 100, temperature: 1.0 }
    }

    #[test]
    fn identical_teacher_gives_zero_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (theta, eps, _) = instance(&mut rng);
        let none: Vec<_> = eps.iter().map(|e| vec![PrivilegedContext::none(); e.turns.len()]).collect();
        for (e, c) in eps.iter().zip(&none) {
            assert_eq!(turn_level_kl(&theta, &theta, e, c, 100, 1.0, None).0, 0.0);
        }
    }

    #[test]
    fn on_policy_ratio_is_one_and_lambda_zero_is_grpo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (theta, mut eps, ctx) = instance(&mut rng);
        with_old(&theta, &mut eps);
        let mut teacher = theta.clone();
        teacher.data[0] += 0.3;
        let batch = Batch { episodes: &eps, contexts: &ctx, old: &theta, teacher: &teacher };
        let (p0, g0) = total_loss(&theta, &batch, &cfg(0.0), true);
        assert_eq!(p0.max_ratio_dev, 0.0);
        assert_eq!(p0.clip_activations, 0);
        assert_eq!(p0.beta_kl, 0.0);
        assert_eq!(p0.distill, 0.0);
        // The GRPO gradient is the coefficient-weighted log-prob gradient.
        let pol = crate::policy::ToySoftmaxPolicy::new(theta.clone());
        let mut want = Params::zeros();
        for ep in &eps {
            for t in &ep.turns {
                let ctxs = crate::policy::ToySoftmaxPolicy::contexts(&t.state, &t.tokens);
                let coefs = vec![-ep.advantage / p0.tokens as f64; t.tokens.len()];
                pol.grad_logprob(&ctxs, &t.tokens, &coefs, &mut want);
            }
        }
        let (g0, _) = g0.unwrap();
        assert!(g0.distance(&want) < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (theta, mut eps, ctx) = instance(&mut rng);
        let mut old = theta.clone();
        for x in old.data.iter_mut() {
            *x += 0.05 * (rng.gen::<f64>() - 0.5);
        }
        with_old(&old, &mut eps);
        let mut teacher = theta.clone();
        for x in teacher.data.iter_mut() {
            *x += 0.2 * (rng.gen::<f64>() - 0.5);
        }
        let batch = Batch { episodes: &eps, contexts: &ctx, old: &old, teacher: &teacher };
        let c = cfg(4.0);
        let (_, g) = total_loss(&theta, &batch, &c, true);
        let g = g.unwrap().0;
        let scale = g.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in (0..D * VOCAB_SIZE).step_by(7) {
            let mut a = theta.clone();
            a.data[i] += h;
            let mut b = theta.clone();
            b.data[i] -= h;
            let fd = (total_loss(&a, &batch, &c, false).0.total() - total_loss(&b, &batch, &c, false).0.total()) / (2.0 * h);
            worst = worst.max((fd - g.data[i]).abs() / scale);
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn budget_truncation_zeroes_late_turns() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (theta, eps, ctx) = instance(&mut rng);
        let mut teacher = theta.clone();
        teacher.data.iter_mut().for_each(|x| *x *= 0.5);
        let ep = &eps[0];
        let (_, full) = turn_level_kl(&theta, &teacher, ep, &ctx[0], 100, 1.0, None);
        assert!(full.iter().all(|&k| k > 0.0));
        let first = ep.turns[0].tokens.len();
        let (total, cut) = turn_level_kl(&theta, &teacher, ep, &ctx[0], first, 1.0, None);
        assert_eq!(cut[1], 0.0);
        assert_eq!(total, cut[0]);
    }

    #[test]
    fn teacher_outputs_skip_hint_positions() {
        let theta = Params::zeros();
        let turn = TurnSample {
            state: TurnState::from_history("x", &[]),
            tokens: vec![SUBMIT, LOOKUP, END],
            old_logprobs: vec![],
            offset: 0,
        };
        let ctx = privileged_context(1, true, &HintCatalog::default(), true).remove(0);
        assert!(!ctx.hint_tokens.is_empty());
        assert_eq!(teacher_logprobs(&theta, &turn, &ctx, 1.0).len(), 3);
    }
}
