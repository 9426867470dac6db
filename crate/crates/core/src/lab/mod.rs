//! Executable checks of the training-dynamics claims: reward-component
//! signal-to-noise, EMA and hard-copy KL bounds, the restoring force,
//! gradient audits, and the ablation suite, all emitting CSV.

pub mod audit;
pub mod stats;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{finite_diff_audit, logprob_fd_audit, zero_objective_audit, FdAudit};
pub use stats::{pop_std, ranks, spearman};

use crate::env::{Env, EpisodeConfig};
use crate::policy::{rollout, Params, ToyPrior, ToySoftmaxPolicy};
use crate::reward::{cosine_reward, CosineParams, RewardWeights};
use crate::tasks::micro_clinic_suite;
use crate::trainer::{tail_mean, write_metrics, MetricsRow, Trainer, TrainerConfig, TrainerError, Variant};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("unknown experiment {0:?}; expected cosine-sweep, snr, kl-bound or ablation-suite")]
    Usage(String),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Samples of one reward component and its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSamples {
    pub name: String,
    pub weight: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSnr {
    pub name: String,
    pub weight: f64,
    pub sigma: f64,
    /// w_j σ_j.
    pub contribution: f64,
    /// w_j σ_j / σ_R.
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub components: Vec<ComponentSnr>,
    /// Standard deviation of the weighted sum.
    pub sigma_r: f64,
}

impl SnrReport {
    pub fn get(&self, name: &str) -> Option<&ComponentSnr> {
        self.components.iter().find(|c| c.name == name)
    }

    /// (w_a σ_a) / (w_b σ_b).
    pub fn ratio(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.get(a)?.contribution / self.get(b)?.contribution)
    }

    /// Every ordered pair with a nonzero denominator.
    pub fn pairwise(&self) -> Vec<(String, String, f64)> {
        let mut out = Vec::new();
        for a in &self.components {
            for b in &self.components {
                if a.name != b.name && b.contribution > 0.0 {
                    out.push((a.name.clone(), b.name.clone(), a.contribution / b.contribution));
                }
            }
        }
        out
    }
}

/// Population standard deviations per component and of the weighted sum.
/// Samples are aligned by index; components need at least two samples.
pub fn snr_report(components: &[ComponentSamples]) -> SnrReport {
    let n = components.iter().map(|c| c.values.len()).min().unwrap_or(0);
    let total: Vec<f64> = (0..n).map(|i| components.iter().map(|c| c.weight * c.values[i]).sum()).collect();
    let sigma_r = pop_std(&total);
    let components = components
        .iter()
        .map(|c| {
            let sigma = pop_std(&c.values[..n]);
            let contribution = c.weight * sigma;
            let snr = if sigma_r > 0.0 { contribution / sigma_r } else { 0.0 };
            ComponentSnr { name: c.name.clone(), weight: c.weight, sigma, contribution, snr }
        })
        .collect();
    SnrReport { components, sigma_r }
}

/// `n` samples (n even) with mean `mean` and population std exactly `sigma`
/// up to rounding, interleaved so that two such series are uncorrelated.
pub fn two_point_samples(mean: f64, sigma: f64, n: usize, phase: usize) -> Vec<f64> {
    (0..n).map(|i| if ((i >> phase) & 1) == 0 { mean + sigma } else { mean - sigma }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlBoundParams {
    /// Smoothness estimate L̂ of the KL.
    pub smoothness: f64,
    /// Bound on the parameter change between teacher updates.
    pub eps_step: f64,
    pub alpha: f64,
    pub copy_interval: usize,
}

/// (L̂ε²/(2(1−α)²), (L̂/2)·T_copy²·ε²).
pub fn kl_bound(p: &KlBoundParams) -> (f64, f64) {
    let e2 = p.eps_step * p.eps_step;
    let steady = p.smoothness * e2 / (2.0 * (1.0 - p.alpha).powi(2));
    let peak = 0.5 * p.smoothness * (p.copy_interval as f64).powi(2) * e2;
    (steady, peak)
}

/// max ‖∇KL(θ) − ∇KL(θ′)‖ / ‖θ − θ′‖ over the given gradient pairs.
pub fn estimate_smoothness(pairs: &[(Params, Params, Params, Params)]) -> f64 {
    pairs
        .iter()
        .filter_map(|(a, b, ga, gb)| {
            let d = a.distance(b);
            (d > 0.0).then(|| ga.distance(gb) / d)
        })
        .fold(0.0, f64::max)
}

/// Largest relative single-step fall of the probe KL.
pub fn max_kl_drop(rows: &[MetricsRow]) -> f64 {
    rows.windows(2)
        .filter(|w| w[0].probe_kl > 0.0)
        .map(|w| 1.0 - w[1].probe_kl / w[0].probe_kl)
        .fold(0.0, f64::max)
}

/// probe KL after / before every hard copy.
pub fn copy_ratios(rows: &[MetricsRow]) -> Vec<f64> {
    rows.windows(2)
        .filter(|w| w[1].teacher_update.contains("copy") && w[0].probe_kl > 0.0)
        .map(|w| w[1].probe_kl / w[0].probe_kl)
        .collect()
}

/// One named pass/fail assertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.into(), pass, detail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    CosineSweep,
    Snr,
    KlBound,
    AblationSuite,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [Experiment::CosineSweep, Experiment::Snr, Experiment::KlBound, Experiment::AblationSuite];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::CosineSweep => "cosine-sweep",
            Experiment::Snr => "snr",
            Experiment::KlBound => "kl-bound",
            Experiment::AblationSuite => "ablation-suite",
        }
    }

    pub fn parse(s: &str) -> Result<Self, LabError> {
        Self::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| LabError::Usage(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabOptions {
    pub seeds: Vec<u64>,
    pub steps: usize,
    /// Rows averaged at the end of a run for "final" values.
    pub tail: usize,
    pub out: Option<PathBuf>,
}

impl Default for LabOptions {
    fn default() -> Self {
        Self { seeds: (0..5).collect(), steps: 200, tail: 20, out: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabOutcome {
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
}

impl LabOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Rows of a CSV table: header then records.
type Table = (Vec<String>, Vec<Vec<String>>);

fn write_table(path: &Path, t: &Table) -> Result<(), LabError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&t.0)?;
    for r in &t.1 {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// Runs one experiment and, when `opts.out` is set, writes
/// `<out>/<experiment>/<seed>.csv` and `<out>/<experiment>/summary.csv`.
pub fn run_experiment(exp: Experiment, opts: &LabOptions) -> Result<LabOutcome, LabError> {
    let (per_seed, summary, checks) = match exp {
        Experiment::CosineSweep => cosine_sweep(opts),
        Experiment::Snr => snr_experiment(opts),
        Experiment::KlBound => kl_bound_experiment(opts)?,
        Experiment::AblationSuite => ablation_suite(opts)?,
    };
    let mut files = Vec::new();
    if let Some(out) = &opts.out {
        let dir = out.join(exp.name());
        fs::create_dir_all(&dir)?;
        for (seed, t) in &per_seed {
            let p = dir.join(format!("{seed}.csv"));
            write_table(&p, t)?;
            files.push(p);
        }
        let p = dir.join("summary.csv");
        write_table(&p, &summary)?;
        files.push(p);
    }
    Ok(LabOutcome { checks, files })
}

type Parts = (Vec<(u64, Table)>, Table, Vec<Check>);

fn cosine_sweep(opts: &LabOptions) -> Parts {
    let p = CosineParams { l_max: crate::trainer::TOY_L_MAX, ..Default::default() };
    let mut rows = Vec::new();
    for l in 0..=p.l_max {
        let c = cosine_reward(true, false, l, &p).expect("within budget");
        let w = cosine_reward(false, false, l, &p).expect("within budget");
        rows.push(vec![l.to_string(), c.to_string(), w.to_string()]);
    }
    let ends = [
        cosine_reward(true, false, 0, &p).unwrap(),
        cosine_reward(true, false, p.l_max, &p).unwrap(),
        cosine_reward(false, false, p.l_max, &p).unwrap(),
        cosine_reward(false, true, p.l_max + 1, &p).unwrap(),
    ];
    let want = [1.1, 0.7, -0.7, -0.5];
    let ok = ends.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12);
    let table = (header(&["length", "correct", "incorrect"]), rows);
    let summary = (
        header(&["case", "value"]),
        ["correct_l0", "correct_lmax", "incorrect_lmax", "truncated"]
            .iter()
            .zip(ends)
            .map(|(k, v)| vec![k.to_string(), v.to_string()])
            .collect(),
    );
    let seed = opts.seeds.first().copied().unwrap_or(0);
    (vec![(seed, table)], summary, vec![Check::new("cosine endpoints", ok, format!("{ends:?}"))])
}

/// Reward components of initial-policy rollouts on micro-clinic tasks.
pub fn rollout_components(seed: u64, n: usize) -> Vec<ComponentSamples> {
    let theta = ToyPrior::default().params(&mut ChaCha8Rng::seed_from_u64(seed));
    let w = RewardWeights::default();
    let names = ["acc", "proc", "safe", "fmt", "coh"];
    let weights = [w.acc, w.proc, w.safe, w.fmt, w.coh];
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 5];
    let cfg = EpisodeConfig { max_response_tokens: crate::trainer::TOY_L_MAX, ..Default::default() };
    for (i, m) in micro_clinic_suite(seed, n).iter().enumerate() {
        let mut env = Env::new(cfg, None).expect("valid config");
        let mut p = ToySoftmaxPolicy::new(theta.clone());
        rollout(&mut env, &m.task, &mut p, &mut ChaCha8Rng::seed_from_u64(seed ^ i as u64)).expect("micro task");
        let b = env.reward().expect("finished");
        for (c, v) in cols.iter_mut().zip([b.r_acc, b.r_proc, b.r_safe, b.r_fmt, b.r_coh]) {
            c.push(v);
        }
    }
    names
        .iter()
        .zip(weights)
        .zip(cols)
        .map(|((n, w), values)| ComponentSamples { name: n.to_string(), weight: w, values })
        .collect()
}

fn snr_rows(r: &SnrReport) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = r
        .components
        .iter()
        .map(|c| vec![c.name.clone(), c.weight.to_string(), c.sigma.to_string(), c.contribution.to_string(), c.snr.to_string()])
        .collect();
    rows.push(vec!["total".into(), String::new(), r.sigma_r.to_string(), String::new(), String::new()]);
    rows
}

fn snr_experiment(opts: &LabOptions) -> Parts {
    let n = 1 << 12;
    let synthetic = snr_report(&[
        ComponentSamples { name: "acc".into(), weight: 0.25, values: two_point_samples(0.5, 0.41, n, 0) },
        ComponentSamples { name: "fmt".into(), weight: 0.10, values: two_point_samples(0.9, 0.02, n, 1) },
    ]);
    let ratio = synthetic.ratio("acc", "fmt").unwrap_or(f64::NAN);
    let mut checks = vec![Check::new("acc:fmt ratio", (ratio - 51.25).abs() < 1e-9, format!("{ratio}"))];
    let cols = header(&["component", "weight", "sigma", "contribution", "snr"]);
    let mut per_seed = Vec::new();
    let mut summary = vec![vec!["synthetic".into(), "acc_fmt_ratio".into(), ratio.to_string()]];
    for &seed in &opts.seeds {
        let r = snr_report(&rollout_components(seed, 256));
        let acc = r.get("acc").expect("acc component");
        // Against an accuracy-only reward, whose accuracy SNR is 1.
        let share = if r.sigma_r > 0.0 { acc.contribution / r.sigma_r } else { 0.0 };
        let reduction = 1.0 - share;
        checks.push(Check::new(
            &format!("seed {seed} accuracy share"),
            (acc.snr - share).abs() < 1e-12 && (0.0..1.0).contains(&reduction),
            format!("snr {:.4}, reduction {:.1}%", acc.snr, 100.0 * reduction),
        ));
        summary.push(vec![seed.to_string(), "acc_reduction".into(), reduction.to_string()]);
        per_seed.push((seed, (cols.clone(), snr_rows(&r))));
    }
    (per_seed, (header(&["seed", "metric", "value"]), summary), checks)
}

/// A run with gradient pairs sampled along the path for L̂, and
/// restoring-force samples: at each sampled step the student is moved
/// along the ray θ_T + s(θ_S − θ_T) and the probe KL gradient recorded.
pub struct TracedRun {
    pub rows: Vec<MetricsRow>,
    pub smoothness: f64,
    /// (‖θ − θ_T‖, ‖∇KL(θ)‖, ⟨∇KL(θ), θ − θ_T⟩) per ray point.
    pub ray: Vec<(f64, f64, f64)>,
}

/// Ray scales used for the restoring-force samples.
pub const RAY_SCALES: [f64; 5] = [0.25, 0.5, 1.0, 1.5, 2.0];

/// Trains `variant` for `steps`, sampling every `every` steps.
pub fn traced_run(variant: Variant, seed: u64, steps: usize, every: usize) -> Result<TracedRun, TrainerError> {
    let mut cfg = TrainerConfig::new(variant);
    cfg.seed = seed;
    cfg.steps = steps;
    let mut tr = Trainer::new(cfg, Vec::new())?;
    let mut rows = Vec::with_capacity(steps);
    let mut pairs = Vec::new();
    let mut ray = Vec::new();
    for s in 1..=steps {
        let before = tr.student().clone();
        rows.push(tr.step());
        if s % every == 0 {
            let after = tr.student().clone();
            let (_, ga) = tr.probe_kl_at(&before);
            let (_, gb) = tr.probe_kl_at(&after);
            let mut diff = after.clone();
            diff.axpy(-1.0, tr.teacher());
            for a in RAY_SCALES {
                let mut th = tr.teacher().clone();
                th.axpy(a, &diff);
                let (_, g) = tr.probe_kl_at(&th);
                let dot: f64 = g.data.iter().zip(&diff.data).map(|(x, y)| a * x * y).sum();
                ray.push((a * diff.norm(), g.norm(), dot));
            }
            pairs.push((before, after, ga, gb));
        }
    }
    Ok(TracedRun { rows, smoothness: estimate_smoothness(&pairs), ray })
}

/// Spearman correlation of distance and KL-gradient norm over the ray
/// samples, and the share of samples whose gradient points away from the
/// teacher (so that descent moves back toward it).
pub fn restoring_force(ray: &[(f64, f64, f64)]) -> (f64, f64) {
    let gap: Vec<f64> = ray.iter().map(|r| r.0).collect();
    let norm: Vec<f64> = ray.iter().map(|r| r.1).collect();
    let moving: Vec<&(f64, f64, f64)> = ray.iter().filter(|r| r.0 > 0.0).collect();
    let share = moving.iter().filter(|r| r.2 > 0.0).count() as f64 / moving.len().max(1) as f64;
    (spearman(&gap, &norm), share)
}

fn metrics_table(rows: &[MetricsRow], variant: &str) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            let mut v = vec![variant.to_string()];
            v.extend(r.record());
            v
        })
        .collect()
}

fn metrics_header() -> Vec<String> {
    let mut h = vec!["variant".to_string()];
    h.extend(MetricsRow::HEADER.iter().map(|s| s.to_string()));
    h
}

fn kl_bound_experiment(opts: &LabOptions) -> Result<Parts, LabError> {
    let mut per_seed = Vec::new();
    let mut summary = Vec::new();
    let mut checks = Vec::new();
    for &seed in &opts.seeds {
        let mut rows_out = Vec::new();
        for variant in [Variant::Reset, Variant::Ema] {
            let cfg = TrainerConfig::new(variant);
            let run = traced_run(variant, seed, opts.steps, 10)?;
            let eps = run.rows.iter().map(|r| r.update_norm).fold(0.0, f64::max);
            // Teacher updates happen every `ema_interval` steps, so the
            // student moves up to that many steps between them.
            let p = KlBoundParams {
                smoothness: run.smoothness,
                eps_step: eps * cfg.ema_interval as f64,
                alpha: cfg.alpha,
                copy_interval: cfg.hard_copy_interval,
            };
            let (steady, _) = kl_bound(&p);
            let (_, peak) = kl_bound(&KlBoundParams { eps_step: eps, ..p });
            let measured = tail_mean(&run.rows, opts.tail, |r| r.probe_kl);
            let max_kl = run.rows.iter().map(|r| r.probe_kl).fold(0.0, f64::max);
            let name = variant.name();
            for r in metrics_table(&run.rows, name) {
                let mut r = r;
                r.push(steady.to_string());
                r.push(peak.to_string());
                rows_out.push(r);
            }
            match variant {
                Variant::Reset => {
                    let ratios = copy_ratios(&run.rows);
                    let worst = ratios.iter().cloned().fold(0.0, f64::max);
                    checks.push(Check::new(
                        &format!("seed {seed} reset copy collapse"),
                        !ratios.is_empty() && worst < 0.1,
                        format!("{} copies, worst post/pre {worst:.4}", ratios.len()),
                    ));
                }
                _ => {
                    checks.push(Check::new(
                        &format!("seed {seed} ema under bound"),
                        max_kl <= steady,
                        format!("max probe KL {max_kl:.4} vs bound {steady:.4} (L̂ {:.3}, ε {eps:.4})", run.smoothness),
                    ));
                    let (rho, share) = restoring_force(&run.ray);
                    checks.push(Check::new(
                        &format!("seed {seed} restoring force"),
                        rho > 0.8 && share == 1.0,
                        format!("spearman {rho:.3}, restoring share {share:.2}"),
                    ));
                }
            }
            summary.push(vec![
                seed.to_string(),
                name.to_string(),
                run.smoothness.to_string(),
                eps.to_string(),
                steady.to_string(),
                peak.to_string(),
                measured.to_string(),
                max_kl_drop(&run.rows).to_string(),
            ]);
        }
        let mut h = metrics_header();
        h.push("steady_bound".into());
        h.push("sawtooth_peak".into());
        per_seed.push((seed, (h, rows_out)));
    }
    let sh = header(&["seed", "variant", "smoothness", "eps_step", "steady_bound", "sawtooth_peak", "final_kl", "max_drop"]);
    Ok((per_seed, (sh, summary), checks))
}

/// Seed-averaged final values of one variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub accuracy: f64,
    pub turns: f64,
    pub tokens: f64,
    pub kl: f64,
    pub max_kl_drop: f64,
    pub clip_activations: usize,
    pub max_ratio_dev: f64,
}

/// Runs every variant on every seed; each run averages its last `tail`
/// rows, then runs are averaged over seeds.
pub fn ablation(opts: &LabOptions) -> Result<Vec<(Variant, AblationSummary, Vec<(u64, Vec<MetricsRow>)>)>, TrainerError> {
    let jobs: Vec<(Variant, u64)> =
        Variant::ALL.into_iter().flat_map(|v| opts.seeds.iter().map(move |&s| (v, s))).collect();
    let runs: Vec<Result<Vec<MetricsRow>, TrainerError>> = std::thread::scope(|sc| {
        let hs: Vec<_> = jobs
            .iter()
            .map(|&(v, s)| {
                sc.spawn(move || {
                    let mut c = TrainerConfig::new(v);
                    c.seed = s;
                    c.steps = opts.steps;
                    Ok(Trainer::new(c, Vec::new())?.run())
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().expect("trainer thread")).collect()
    });
    let mut out = Vec::new();
    let mut it = jobs.iter().zip(runs);
    for v in Variant::ALL {
        let mut sum = AblationSummary::default();
        let mut per = Vec::new();
        for _ in &opts.seeds {
            let (&(_, s), rows) = it.next().expect("one run per job");
            let rows = rows?;
            let k = opts.tail;
            sum.accuracy += tail_mean(&rows, k, |r| r.validation_accuracy);
            sum.turns += tail_mean(&rows, k, |r| r.mean_turns);
            sum.tokens += tail_mean(&rows, k, |r| r.mean_response_tokens);
            sum.kl += tail_mean(&rows, k, |r| r.probe_kl);
            sum.max_kl_drop = sum.max_kl_drop.max(max_kl_drop(&rows));
            sum.clip_activations += rows.iter().map(|r| r.clip_activations).sum::<usize>();
            sum.max_ratio_dev = rows.iter().map(|r| r.max_ratio_dev).fold(sum.max_ratio_dev, f64::max);
            per.push((s, rows));
        }
        let n = opts.seeds.len().max(1) as f64;
        sum.accuracy /= n;
        sum.turns /= n;
        sum.tokens /= n;
        sum.kl /= n;
        out.push((v, sum, per));
    }
    Ok(out)
}

/// The ordering the full method should show against its ablations.
pub fn ablation_checks(results: &[(Variant, AblationSummary)]) -> Vec<Check> {
    let get = |v: Variant| results.iter().find(|r| r.0 == v).map(|r| r.1).unwrap_or_default();
    let full = get(Variant::Full);
    let worst = results.iter().filter(|r| r.0 != Variant::Full).map(|r| r.1.accuracy).fold(f64::MIN, f64::max);
    let reset = get(Variant::Reset);
    let hints = get(Variant::EmaHints);
    vec![
        Check::new("accuracy full >= ablations", full.accuracy >= worst, format!("full {:.3}, best ablation {worst:.3}", full.accuracy)),
        Check::new("turns full > reset", full.turns > reset.turns, format!("full {:.2}, reset {:.2}", full.turns, reset.turns)),
        Check::new(
            "tokens ema_hints > full",
            hints.tokens > full.tokens,
            format!("ema_hints {:.2}, full {:.2}", hints.tokens, full.tokens),
        ),
    ]
}

fn ablation_suite(opts: &LabOptions) -> Result<Parts, LabError> {
    let results = ablation(opts)?;
    let mut per_seed = Vec::new();
    for &seed in &opts.seeds {
        let mut rows = Vec::new();
        for (v, _, runs) in &results {
            if let Some((_, r)) = runs.iter().find(|(s, _)| *s == seed) {
                rows.extend(metrics_table(r, v.name()));
            }
        }
        per_seed.push((seed, (metrics_header(), rows)));
    }
    let summary = results
        .iter()
        .map(|(v, s, _)| {
            vec![
                v.name().to_string(),
                s.accuracy.to_string(),
                s.turns.to_string(),
                s.tokens.to_string(),
                s.kl.to_string(),
                s.max_kl_drop.to_string(),
            ]
        })
        .collect();
    let brief: Vec<(Variant, AblationSummary)> = results.iter().map(|(v, s, _)| (*v, *s)).collect();
    let sh = header(&["variant", "accuracy", "turns", "tokens", "probe_kl", "max_kl_drop"]);
    Ok((per_seed, (sh, summary), ablation_checks(&brief)))
}

/// Writes the metrics of a single run to `path`.
pub fn write_run(path: &Path, rows: &[MetricsRow]) -> Result<(), LabError> {
    write_metrics(fs::File::create(path)?, rows)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_arithmetic() {
        let p = KlBoundParams { smoothness: 1.0, eps_step: 0.01, alpha: 0.995, copy_interval: 30 };
        let (s, k) = kl_bound(&p);
        assert!((s - 2.0).abs() < 1e-9);
        assert!((k - 0.045).abs() < 1e-12);
        let (s2, k2) = kl_bound(&KlBoundParams { eps_step: 0.03, ..p });
        assert!((s2 / s - 9.0).abs() < 1e-9 && (k2 / k - 9.0).abs() < 1e-9);
        let near = kl_bound(&KlBoundParams { alpha: 0.99999, ..p }).0;
        assert!(near > 1e5);
    }

    #[test]
    fn dilution_ratio() {
        let n = 1024;
        let r = snr_report(&[
            ComponentSamples { name: "acc".into(), weight: 0.25, values: two_point_samples(0.5, 0.41, n, 0) },
            ComponentSamples { name: "fmt".into(), weight: 0.10, values: two_point_samples(0.9, 0.02, n, 1) },
            ComponentSamples { name: "flat".into(), weight: 0.2, values: vec![0.3; n] },
        ]);
        assert!((r.ratio("acc", "fmt").unwrap() - 51.25).abs() < 1e-9);
        assert_eq!(r.get("flat").unwrap().contribution, 0.0);
        // Uncorrelated series: σ_R² is the sum of the squared contributions.
        let want = (0.1025f64.powi(2) + 0.002f64.powi(2)).sqrt();
        assert!((r.sigma_r - want).abs() < 1e-12);
        assert_eq!(r.pairwise().len(), 4);
    }

    #[test]
    fn experiments_parse() {
        for e in Experiment::ALL {
            assert_eq!(Experiment::parse(e.name()).unwrap(), e);
        }
        assert!(matches!(Experiment::parse("nope"), Err(LabError::Usage(_))));
    }

    #[test]
    fn cosine_sweep_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let opts = LabOptions { seeds: vec![3], out: Some(dir.path().into()), ..Default::default() };
        let o = run_experiment(Experiment::CosineSweep, &opts).unwrap();
        assert!(o.passed());
        assert!(dir.path().join("cosine-sweep/3.csv").exists());
        assert!(dir.path().join("cosine-sweep/summary.csv").exists());
    }
}
