//! Group rollouts, cosine scoring, dynamic filtering, group-relative
//! advantages, turn-level distillation to an outcome-conditioned EMA
//! teacher, and the teacher update schedules.

pub mod objective;

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use objective::{
    dynamic_filter, group_advantages, privileged_context, teacher_logprobs, total_loss, turn_level_kl, Batch,
    EpisodeSample, HintCatalog, LossParts, ObjectiveConfig, PrivilegedContext, TurnSample,
};

use crate::env::{Env, EpisodeConfig, Trajectory};
use crate::policy::toy::{D, TURN_CAP};
use crate::policy::vocab::VOCAB_SIZE;
use crate::policy::{rollout, HintTargets, Params, ToyPrior, ToySoftmaxPolicy};
use crate::reward::{episode_cosine, CosineParams};
use crate::tasks::{micro_clinic_suite, Task};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("task {0} is not a micro-clinic task")]
    Domain(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain group policy optimization on accuracy.
    Grpo,
    /// Distillation to a hard-copied teacher, cosine reward, no hints.
    Reset,
    /// Distillation to an EMA teacher, cosine reward, no hints.
    Ema,
    /// EMA teacher with outcome hints, accuracy reward.
    EmaHints,
    /// EMA teacher with hints, hard-copy fallback and cosine reward.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Grpo, Variant::Reset, Variant::Ema, Variant::EmaHints, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Grpo => "grpo",
            Variant::Reset => "reset",
            Variant::Ema => "ema",
            Variant::EmaHints => "ema_hints",
            Variant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Cosine,
    Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub variant: Variant,
    pub group_size: usize,
    pub batch_prompts: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub lambda_distill: f64,
    pub alpha: f64,
    pub ema_interval: usize,
    pub hard_copy_interval: usize,
    pub clip_eps: f64,
    /// Response-token budget per episode.
    pub l_max: usize,
    pub max_turns: usize,
    pub steps: usize,
    pub seed: u64,
    pub reward: RewardKind,
    pub hints: bool,
    pub ema: bool,
    pub hard_copy: bool,
    pub cosine: CosineParams,
    pub grad_clip: f64,
    pub temperature: f64,
    pub train_tasks: usize,
    pub validation_tasks: usize,
    pub probe_tasks: usize,
    pub prior: ToyPrior,
    pub hint_targets: HintTargets,
}

/// Toy response budget; the structural hyperparameters keep their
/// published values while the scale parameters fit the toy policy.
pub const TOY_L_MAX: usize = 48;

impl TrainerConfig {
    pub fn new(variant: Variant) -> Self {
        let (lambda, reward, hints, ema, hard_copy) = match variant {
            Variant::Grpo => (0.0, RewardKind::Accuracy, true, true, true),
            Variant::Reset => (4.0, RewardKind::Cosine, false, false, true),
            Variant::Ema => (4.0, RewardKind::Cosine, false, true, false),
            Variant::EmaHints => (4.0, RewardKind::Accuracy, true, true, false),
            Variant::Full => (4.0, RewardKind::Cosine, true, true, true),
        };
        Self {
            variant,
            group_size: 3,
            batch_prompts: 8,
            learning_rate: 1e-2,
            beta: 0.01,
            lambda_distill: lambda,
            alpha: 0.995,
            ema_interval: 5,
            hard_copy_interval: 30,
            clip_eps: 0.2,
            l_max: TOY_L_MAX,
            max_turns: 5,
            steps: 200,
            seed: 0,
            reward,
            hints,
            ema,
            hard_copy,
            cosine: CosineParams { l_max: TOY_L_MAX, ..Default::default() },
            grad_clip: 1.0,
            temperature: 1.0,
            train_tasks: 64,
            validation_tasks: 32,
            probe_tasks: 8,
            prior: ToyPrior::default(),
            hint_targets: HintTargets::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |m: &str| Err(TrainerError::Config(m.into()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.batch_prompts == 0 || self.ema_interval == 0 || self.hard_copy_interval == 0 {
            return bad("batch size and intervals must be positive");
        }
        if !(self.learning_rate > 0.0 && self.temperature > 0.0 && self.clip_eps > 0.0 && self.grad_clip > 0.0) {
            return bad("learning rate, temperature, clip and grad clip must be positive");
        }
        if self.l_max == 0 || self.max_turns == 0 || self.validation_tasks == 0 || self.probe_tasks == 0 {
            return bad("budgets and task counts must be positive");
        }
        if self.cosine.l_max != self.l_max {
            return bad("cosine l_max must equal l_max");
        }
        Ok(())
    }

    fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            beta: self.beta,
            lambda: self.lambda_distill,
            clip_eps: self.clip_eps,
            l_max: self.l_max,
            temperature: self.temperature,
        }
    }

    fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig { max_turns: self.max_turns, max_response_tokens: self.l_max, ..Default::default() }
    }
}

/// One row of training telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub validation_accuracy: f64,
    /// Mean over the batch of Σ_t KL_t against the hinted teacher.
    pub mean_kl: f64,
    pub mean_response_tokens: f64,
    pub mean_turns: f64,
    pub loss_grpo: f64,
    pub loss_distill: f64,
    pub clip_activations: usize,
    pub filtered_groups: usize,
    /// Same KL on a fixed probe batch, after this step's updates.
    pub probe_kl: f64,
    pub teacher_update: String,
    pub max_ratio_dev: f64,
    pub mean_reward: f64,
    pub skipped: bool,
    pub update_norm: f64,
    pub param_gap: f64,
    pub kl_grad_norm: f64,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 17] = [
        "step",
        "validation_accuracy",
        "mean_kl",
        "mean_response_tokens",
        "mean_turns",
        "loss_grpo",
        "loss_distill",
        "clip_activations",
        "filtered_groups",
        "probe_kl",
        "teacher_update",
        "max_ratio_dev",
        "mean_reward",
        "skipped",
        "update_norm",
        "param_gap",
        "kl_grad_norm",
    ];

    pub fn record(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            self.validation_accuracy.to_string(),
            self.mean_kl.to_string(),
            self.mean_response_tokens.to_string(),
            self.mean_turns.to_string(),
            self.loss_grpo.to_string(),
            self.loss_distill.to_string(),
            self.clip_activations.to_string(),
            self.filtered_groups.to_string(),
            self.probe_kl.to_string(),
            self.teacher_update.clone(),
            self.max_ratio_dev.to_string(),
            self.mean_reward.to_string(),
            self.skipped.to_string(),
            self.update_norm.to_string(),
            self.param_gap.to_string(),
            self.kl_grad_norm.to_string(),
        ]
    }
}

/// Writes metrics as CSV with a header row.
pub fn write_metrics(w: impl Write, rows: &[MetricsRow]) -> Result<(), TrainerError> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| TrainerError::Io(e.into());
    out.write_record(MetricsRow::HEADER).map_err(io)?;
    for r in rows {
        out.write_record(r.record()).map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

/// θ_T ← αθ_T + (1−α)θ_S.
pub fn ema_update(teacher: &mut Params, student: &Params, alpha: f64) {
    for (t, s) in teacher.data.iter_mut().zip(&student.data) {
        *t = alpha * *t + (1.0 - alpha) * s;
    }
}

pub fn hard_copy(teacher: &mut Params, student: &Params) {
    teacher.data.copy_from_slice(&student.data);
}

#[derive(Debug, Clone, PartialEq)]
struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64) -> Self {
        Self { lr, m: vec![0.0; D * VOCAB_SIZE], v: vec![0.0; D * VOCAB_SIZE], t: 0 }
    }

    /// Applies one descent step and returns the update norm.
    fn step(&mut self, theta: &mut Params, g: &Params) -> f64 {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut sq = 0.0;
        for (((x, gi), m), v) in theta.data.iter_mut().zip(&g.data).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * gi;
            *v = Self::B2 * *v + (1.0 - Self::B2) * gi * gi;
            let d = self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            *x -= d;
            sq += d * d;
        }
        sq.sqrt()
    }
}

/// Deterministic seed for a (run, step, slot) triple.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^ (x >> 29)
}

/// One scored rollout.
#[derive(Debug, Clone)]
pub struct ScoredRollout {
    pub trajectory: Trajectory,
    pub correct: bool,
    pub reward: f64,
}

pub struct Trainer {
    cfg: TrainerConfig,
    student: Params,
    teacher: Params,
    adam: Adam,
    step: usize,
    train: Vec<Task>,
    validation: Vec<Task>,
    probe: Vec<EpisodeSample>,
    probe_ctx: Vec<Vec<PrivilegedContext>>,
    catalog: HintCatalog,
}

impl Trainer {
    /// Trainer on `tasks` (micro-clinic tasks), or on a generated suite
    /// when `tasks` is empty. Validation uses a disjoint generated suite.
    pub fn new(cfg: TrainerConfig, tasks: Vec<Task>) -> Result<Self, TrainerError> {
        cfg.validate()?;
        let train = if tasks.is_empty() {
            micro_clinic_suite(mix(cfg.seed, 1, 0), cfg.train_tasks).into_iter().map(|m| m.task).collect()
        } else {
            tasks
        };
        if let Some(t) = train.iter().find(|t| t.domain != crate::tasks::micro::DOMAIN) {
            return Err(TrainerError::Config(format!("task {} is not a micro-clinic task", t.id)));
        }
        let validation: Vec<Task> =
            micro_clinic_suite(mix(cfg.seed, 2, 0), cfg.validation_tasks).into_iter().map(|m| m.task).collect();
        let student = cfg.prior.params(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, 3, 0)));
        let mut t = Self {
            adam: Adam::new(cfg.learning_rate),
            teacher: student.clone(),
            student,
            step: 0,
            train,
            validation,
            probe: Vec::new(),
            probe_ctx: Vec::new(),
            catalog: HintCatalog { targets: cfg.hint_targets, ..Default::default() },
            cfg,
        };
        t.build_probe();
        Ok(t)
    }

    /// Fixed batch of base-policy rollouts used to track the KL smoothly.
    fn build_probe(&mut self) {
        let probe_tasks: Vec<Task> = micro_clinic_suite(mix(self.cfg.seed, 4, 0), self.cfg.probe_tasks)
            .into_iter()
            .map(|m| m.task)
            .collect();
        for (i, task) in probe_tasks.iter().enumerate() {
            let r = self.rollout(task, mix(self.cfg.seed, 5, i as u64), false);
            let ep = EpisodeSample::from_trajectory(&task.ticket, &r.trajectory, 0.0, r.correct);
            self.probe_ctx.push(privileged_context(ep.turns.len(), r.correct, &self.catalog, self.cfg.hints));
            self.probe.push(ep);
        }
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn student(&self) -> &Params {
        &self.student
    }

    pub fn teacher(&self) -> &Params {
        &self.teacher
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Student rollout on `task`, scored by the configured reward.
    pub fn rollout(&self, task: &Task, seed: u64, greedy: bool) -> ScoredRollout {
        let mut env = Env::new(self.cfg.episode_config(), None).expect("valid episode config");
        let mut policy = ToySoftmaxPolicy { theta: self.student.clone(), temperature: self.cfg.temperature, greedy };
        let trajectory = rollout(&mut env, task, &mut policy, &mut ChaCha8Rng::seed_from_u64(seed)).expect("micro task");
        let b = env.reward().expect("finished episode");
        let reward = match self.cfg.reward {
            RewardKind::Cosine => episode_cosine(&trajectory, b.correct, &self.cfg.cosine),
            RewardKind::Accuracy => b.r_acc,
        };
        ScoredRollout { correct: b.correct, reward, trajectory }
    }

    /// Sampled accuracy on the held-out suite. The sampling seeds are
    /// fixed across steps so successive values share their noise.
    pub fn validation_accuracy(&self) -> f64 {
        let n = self.validation.len();
        let hits = self
            .validation
            .iter()
            .enumerate()
            .filter(|(i, t)| self.rollout(t, mix(self.cfg.seed, 6, *i as u64), false).correct)
            .count();
        hits as f64 / n as f64
    }

    /// Probe KL and the norm of its student gradient.
    pub fn probe_kl(&self) -> (f64, f64) {
        let (kl, g) = self.probe_kl_at(&self.student);
        (kl, g.norm())
    }

    /// Probe KL of `student` against the current teacher, with its
    /// gradient in θ_S.
    pub fn probe_kl_at(&self, student: &Params) -> (f64, Params) {
        let mut g = Params::zeros();
        let n = self.probe.len() as f64;
        let mut kl = 0.0;
        for (ep, ctx) in self.probe.iter().zip(&self.probe_ctx) {
            let (k, _) =
                turn_level_kl(student, &self.teacher, ep, ctx, self.cfg.l_max, self.cfg.temperature, Some((&mut g, 1.0 / n)));
            kl += k / n;
        }
        (kl, g)
    }

    pub fn step(&mut self) -> MetricsRow {
        self.step += 1;
        let t = self.step as u64;
        let cfg = self.cfg.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 10, t));
        let n_prompts = cfg.batch_prompts.min(self.train.len());
        let prompts: Vec<usize> = sample(&mut rng, self.train.len(), n_prompts).into_vec();

        let groups: Vec<Vec<ScoredRollout>> = prompts
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                (0..cfg.group_size)
                    .map(|g| self.rollout(&self.train[p], mix(cfg.seed, t, (i * cfg.group_size + g) as u64 + 1), false))
                    .collect()
            })
            .collect();
        let all: Vec<&ScoredRollout> = groups.iter().flatten().collect();
        let n_all = all.len() as f64;
        let mean_response_tokens = all.iter().map(|r| r.trajectory.total_response_tokens as f64).sum::<f64>() / n_all;
        let mean_turns = all.iter().map(|r| r.trajectory.turns.len() as f64).sum::<f64>() / n_all;
        let mean_reward = all.iter().map(|r| r.reward).sum::<f64>() / n_all;

        let flags: Vec<Vec<bool>> = groups.iter().map(|g| g.iter().map(|r| r.correct).collect()).collect();
        let kept = dynamic_filter(&flags);
        let mut episodes = Vec::new();
        let mut contexts = Vec::new();
        let mut mean_kl = 0.0;
        for (gi, group) in groups.iter().enumerate() {
            let rewards: Vec<f64> = group.iter().map(|r| r.reward).collect();
            let adv = group_advantages(&rewards);
            let ticket = &self.train[prompts[gi]].ticket;
            for (r, a) in group.iter().zip(adv) {
                let ep = EpisodeSample::from_trajectory(ticket, &r.trajectory, a, r.correct);
                let ctx = privileged_context(ep.turns.len(), r.correct, &self.catalog, cfg.hints);
                let (kl, _) = turn_level_kl(&self.student, &self.teacher, &ep, &ctx, cfg.l_max, cfg.temperature, None);
                mean_kl += kl / n_all;
                if kept.contains(&gi) {
                    episodes.push(ep);
                    contexts.push(ctx);
                }
            }
        }

        let skipped = episodes.is_empty();
        let mut parts = LossParts::default();
        let mut update_norm = 0.0;
        if !skipped {
            let old = self.student.clone();
            let batch = Batch { episodes: &episodes, contexts: &contexts, old: &old, teacher: &self.teacher };
            let (p, grads) = total_loss(&self.student, &batch, &cfg.objective(), true);
            // One update per batch: the policy that sampled is the one scored.
            assert!(
                p.max_ratio_dev < 1e-9 && p.clip_activations == 0,
                "off-policy ratio at step {}: dev {}, clips {}",
                self.step,
                p.max_ratio_dev,
                p.clip_activations
            );
            parts = p;
            let (mut g, _) = grads.expect("gradient requested");
            let norm = g.norm();
            if norm > cfg.grad_clip {
                g.scale(cfg.grad_clip / norm);
            }
            update_norm = self.adam.step(&mut self.student, &g);
        }

        let mut updates = Vec::new();
        if cfg.ema && self.step % cfg.ema_interval == 0 {
            ema_update(&mut self.teacher, &self.student, cfg.alpha);
            updates.push("ema");
        }
        if cfg.hard_copy && self.step % cfg.hard_copy_interval == 0 {
            hard_copy(&mut self.teacher, &self.student);
            updates.push("copy");
        }
        let (probe_kl, kl_grad_norm) = self.probe_kl();
        MetricsRow {
            step: self.step,
            validation_accuracy: self.validation_accuracy(),
            mean_kl,
            mean_response_tokens,
            mean_turns,
            loss_grpo: parts.grpo,
            loss_distill: parts.distill,
            clip_activations: parts.clip_activations,
            filtered_groups: groups.len() - kept.len(),
            probe_kl,
            teacher_update: if updates.is_empty() { "none".into() } else { updates.join("+") },
            max_ratio_dev: parts.max_ratio_dev,
            mean_reward,
            skipped,
            update_norm,
            param_gap: self.student.distance(&self.teacher),
            kl_grad_norm,
        }
    }

    /// Runs the configured number of steps.
    pub fn run(&mut self) -> Vec<MetricsRow> {
        (0..self.cfg.steps.saturating_sub(self.step)).map(|_| self.step()).collect()
    }

    /// Little-endian layout: magic `CGYMCKPT`, u32 version (1), u64 step,
    /// u32 rows, u32 columns, then θ_S and θ_T as row-major f64.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainerError> {
        let mut buf = Vec::with_capacity(32 + 16 * D * VOCAB_SIZE);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(self.step as u64).to_le_bytes());
        buf.extend_from_slice(&(D as u32).to_le_bytes());
        buf.extend_from_slice(&(VOCAB_SIZE as u32).to_le_bytes());
        for x in self.student.data.iter().chain(&self.teacher.data) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    /// Restores θ_S, θ_T and the step counter. Optimizer moments restart.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<(), TrainerError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let (student, teacher, step) = parse_checkpoint(&buf)?;
        self.student = student;
        self.teacher = teacher;
        self.step = step;
        Ok(())
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CGYMCKPT";

pub fn parse_checkpoint(buf: &[u8]) -> Result<(Params, Params, usize), TrainerError> {
    let bad = |m: &str| TrainerError::Checkpoint(m.into());
    let n = D * VOCAB_SIZE;
    if buf.len() < 28 || &buf[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing magic header"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().expect("4 bytes"));
    if u32_at(8) != 1 {
        return Err(bad("unsupported version"));
    }
    let step = u64::from_le_bytes(buf[12..20].try_into().expect("8 bytes")) as usize;
    if u32_at(20) as usize != D || u32_at(24) as usize != VOCAB_SIZE {
        return Err(bad("shape mismatch"));
    }
    if buf.len() != 28 + 16 * n {
        return Err(bad("truncated parameters"));
    }
    let floats: Vec<f64> =
        buf[28..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((Params { data: floats[..n].to_vec() }, Params { data: floats[n..].to_vec() }, step))
}

/// Mean of a metric over the last `k` rows.
pub fn tail_mean(rows: &[MetricsRow], k: usize, f: impl Fn(&MetricsRow) -> f64) -> f64 {
    let tail = &rows[rows.len().saturating_sub(k)..];
    tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64
}

/// Largest per-turn cap the toy policy can emit; used by the lab.
pub const MAX_TURN_TOKENS: usize = TURN_CAP;

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: Variant) -> TrainerConfig {
        let mut c = TrainerConfig::new(variant);
        c.steps = 6;
        c.validation_tasks = 4;
        c.train_tasks = 12;
        c.seed = 3;
        c
    }

    #[test]
    fn ema_arithmetic() {
        let mut t = Params::zeros();
        t.data.iter_mut().for_each(|x| *x = 1.0);
        let s = Params::zeros();
        ema_update(&mut t, &s, 0.995);
        assert_eq!(t.data[0], 0.995);
        for _ in 1..60 {
            ema_update(&mut t, &s, 0.995);
        }
        assert!((t.data[5] - 0.995f64.powi(60)).abs() < 1e-12);
        hard_copy(&mut t, &s);
        assert_eq!(t, s);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainerConfig::new(Variant::Full);
        assert!(c.validate().is_ok());
        c.group_size = 1;
        assert!(c.validate().is_err());
        let mut c = TrainerConfig::new(Variant::Full);
        c.alpha = 1.0;
        assert!(c.validate().is_err());
        assert_eq!(Variant::parse("ema_hints"), Some(Variant::EmaHints));
    }

    #[test]
    fn runs_are_reproducible_and_single_iteration() {
        let a = Trainer::new(small(Variant::Full), vec![]).unwrap().run();
        let b = Trainer::new(small(Variant::Full), vec![]).unwrap().run();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        for r in &a {
            assert_eq!(r.clip_activations, 0);
            assert_eq!(r.max_ratio_dev, 0.0);
            assert!(r.mean_kl.is_finite() && r.probe_kl >= 0.0);
        }
        assert_eq!(a[4].teacher_update, "ema");
    }

    #[test]
    fn full_with_grpo_settings_degenerates_to_grpo() {
        let grpo = Trainer::new(small(Variant::Grpo), vec![]).unwrap().run();
        let mut c = small(Variant::Full);
        c.lambda_distill = 0.0;
        c.reward = RewardKind::Accuracy;
        let full = Trainer::new(c, vec![]).unwrap().run();
        assert_eq!(grpo, full);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let mut t = Trainer::new(small(Variant::Ema), vec![]).unwrap();
        t.step();
        t.save_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"CGYMCKPT");
        let mut u = Trainer::new(small(Variant::Ema), vec![]).unwrap();
        u.load_checkpoint(&path).unwrap();
        assert_eq!(u.student(), t.student());
        assert_eq!(u.steps_done(), 1);
        assert!(parse_checkpoint(&bytes[..100]).is_err());
    }

    #[test]
    fn rejects_other_domains() {
        let mut task = micro_clinic_suite(1, 1).remove(0).task;
        task.domain = "medical_qa".into();
        assert!(Trainer::new(small(Variant::Full), vec![task]).is_err());
    }
}
