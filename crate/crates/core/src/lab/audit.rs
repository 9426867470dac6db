//! Central finite-difference audits of the analytic gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::policy::toy::{features, log_softmax, D};
use crate::policy::vocab::{THINK, VOCAB_SIZE};
use crate::policy::{LastTool, Params, ToyPrior, ToySoftmaxPolicy, TurnState};
use crate::trainer::{privileged_context, total_loss, Batch, EpisodeSample, HintCatalog, ObjectiveConfig, PrivilegedContext, TurnSample};

const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FdAudit {
    /// Worst over instances of max|analytic − numeric| / max|analytic|.
    pub max_rel_err: f64,
    pub instances: usize,
    pub coordinates: usize,
}

fn random_state(rng: &mut ChaCha8Rng, turn: usize) -> TurnState {
    let tools = [LastTool::None, LastTool::Lookup, LastTool::Assess, LastTool::Think, LastTool::Other];
    TurnState {
        turn,
        last_tool: *tools.choose(rng).expect("non-empty"),
        revealed: rng.gen_bool(0.6).then(|| rng.gen_range(0..5)),
        finding: rng.gen_bool(0.5),
        ticket_bucket: rng.gen_range(0..4),
        reasoning: rng.gen_range(0..16),
    }
}

fn perturbed(theta: &Params, scale: f64, rng: &mut ChaCha8Rng) -> Params {
    let mut p = theta.clone();
    p.data.iter_mut().for_each(|x| *x += scale * (rng.gen::<f64>() - 0.5));
    p
}

/// A random batch: parameters, rollout-time parameters, teacher, episodes
/// with hinted contexts. Turns often start with a tool head so that hinted
/// positions occur.
pub struct Instance {
    pub theta: Params,
    pub old: Params,
    pub teacher: Params,
    pub episodes: Vec<EpisodeSample>,
    pub contexts: Vec<Vec<PrivilegedContext>>,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let theta = perturbed(&ToyPrior::default().params(rng), 0.5, rng);
    let old = perturbed(&theta, 0.05, rng);
    let teacher = perturbed(&theta, 0.4, rng);
    let catalog = HintCatalog::default();
    let mut episodes = Vec::new();
    let mut contexts = Vec::new();
    for _ in 0..rng.gen_range(1..=3) {
        let n_turns = rng.gen_range(1..=3);
        let mut offset = 0;
        let mut turns = Vec::new();
        for t in 0..n_turns {
            let state = random_state(rng, t);
            let len = rng.gen_range(1..=5);
            let mut tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..VOCAB_SIZE)).collect();
            if rng.gen_bool(0.5) {
                tokens[0] = rng.gen_range(0..=THINK + 1);
            }
            let old_logprobs = (0..len)
                .map(|k| log_softmax(&old.logits(&features(&state, &tokens[..k])))[tokens[k]])
                .collect();
            turns.push(TurnSample { state, tokens, old_logprobs, offset });
            offset += len;
        }
        let correct = rng.gen_bool(0.5);
        contexts.push(privileged_context(n_turns, correct, &catalog, true));
        episodes.push(EpisodeSample { turns, advantage: rng.gen_range(-1.5..1.5), correct });
    }
    Instance { theta, old, teacher, episodes, contexts }
}

/// Coordinates touched by the instance: rows of every active feature.
fn active_rows(inst: &Instance) -> Vec<usize> {
    let mut rows = vec![false; D];
    for ep in &inst.episodes {
        for t in &ep.turns {
            for k in 0..t.tokens.len() {
                for f in features(&t.state, &t.tokens[..k]) {
                    rows[f] = true;
                }
            }
        }
    }
    (0..D).filter(|&r| rows[r]).collect()
}

fn rel_err(analytic: &Params, numeric: &[(usize, f64)]) -> f64 {
    let scale = analytic.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let worst = numeric.iter().map(|&(i, fd)| (fd - analytic.data[i]).abs()).fold(0.0f64, f64::max);
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// Audits the combined objective (clipped surrogate, β-KL to the rollout
/// policy, λ-weighted turn-level KL) on `trials` random instances,
/// checking `per_instance` random coordinates of the active rows each.
pub fn finite_diff_audit(trials: usize, per_instance: usize, lambda: f64, seed: u64) -> FdAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ObjectiveConfig { beta: 0.01, lambda, clip_eps: 0.2, l_max: 9, temperature: 1.0 };
    let mut out = FdAudit { instances: trials, ..Default::default() };
    for _ in 0..trials {
        let inst = random_instance(&mut rng);
        let batch = Batch { episodes: &inst.episodes, contexts: &inst.contexts, old: &inst.old, teacher: &inst.teacher };
        let loss = |th: &Params| total_loss(th, &batch, &cfg, false).0.total();
        let g = total_loss(&inst.theta, &batch, &cfg, true).1.expect("gradient").0;
        let rows = active_rows(&inst);
        let mut numeric = Vec::with_capacity(per_instance);
        for _ in 0..per_instance {
            let i = rows[rng.gen_range(0..rows.len())] * VOCAB_SIZE + rng.gen_range(0..VOCAB_SIZE);
            let mut a = inst.theta.clone();
            a.data[i] += STEP;
            let mut b = inst.theta.clone();
            b.data[i] -= STEP;
            numeric.push((i, (loss(&a) - loss(&b)) / (2.0 * STEP)));
        }
        out.coordinates += numeric.len();
        out.max_rel_err = out.max_rel_err.max(rel_err(&g, &numeric));
    }
    out
}

/// Audits Σ_k c_k log π(token_k) of the toy policy over every coordinate
/// of the active rows.
pub fn logprob_fd_audit(trials: usize, seed: u64) -> FdAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FdAudit { instances: trials, ..Default::default() };
    for _ in 0..trials {
        let theta = perturbed(&ToyPrior::default().params(&mut rng), 1.0, &mut rng);
        let turn = rng.gen_range(0..5);
        let state = random_state(&mut rng, turn);
        let tokens: Vec<usize> = (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(0..VOCAB_SIZE)).collect();
        let coefs: Vec<f64> = tokens.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ctxs = ToySoftmaxPolicy::contexts(&state, &tokens);
        let obj = |th: &Params| -> f64 {
            let p = ToySoftmaxPolicy::new(th.clone());
            p.logprob_of(&state, &tokens).expect("in vocabulary").iter().zip(&coefs).map(|(l, c)| l * c).sum()
        };
        let mut g = Params::zeros();
        ToySoftmaxPolicy::new(theta.clone()).grad_logprob(&ctxs, &tokens, &coefs, &mut g);
        let mut rows: Vec<usize> = ctxs.iter().flatten().copied().collect();
        rows.sort_unstable();
        rows.dedup();
        let mut numeric = Vec::new();
        for r in rows {
            for v in 0..VOCAB_SIZE {
                let i = r * VOCAB_SIZE + v;
                let mut a = theta.clone();
                a.data[i] += STEP;
                let mut b = theta.clone();
                b.data[i] -= STEP;
                numeric.push((i, (obj(&a) - obj(&b)) / (2.0 * STEP)));
            }
        }
        out.coordinates += numeric.len();
        out.max_rel_err = out.max_rel_err.max(rel_err(&g, &numeric));
    }
    out
}

/// With zero advantages, β = 0 and λ = 0 the objective is identically 0;
/// returns the largest analytic and numeric gradient magnitudes seen.
pub fn zero_objective_audit(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inst = random_instance(&mut rng);
    inst.episodes.iter_mut().for_each(|e| e.advantage = 0.0);
    let cfg = ObjectiveConfig { beta: 0.0, lambda: 0.0, clip_eps: 0.2, l_max: 100, temperature: 1.0 };
    let batch = Batch { episodes: &inst.episodes, contexts: &inst.contexts, old: &inst.old, teacher: &inst.teacher };
    let g = total_loss(&inst.theta, &batch, &cfg, true).1.expect("gradient").0;
    let analytic = g.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut numeric: f64 = 0.0;
    for i in (0..D * VOCAB_SIZE).step_by(11) {
        let mut a = inst.theta.clone();
        a.data[i] += STEP;
        let mut b = inst.theta.clone();
        b.data[i] -= STEP;
        let fd = (total_loss(&a, &batch, &cfg, false).0.total() - total_loss(&b, &batch, &cfg, false).0.total()) / (2.0 * STEP);
        numeric = numeric.max(fd.abs());
    }
    (analytic, numeric)
}
