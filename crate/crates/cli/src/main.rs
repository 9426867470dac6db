//! Command-line entry point: corpus ingestion, task files, episodes,
//! scoring, training, lab experiments and the agent bridge.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use clinigym::env::{read_jsonl, write_jsonl, Env, EpisodeConfig, Trajectory};
use clinigym::knowledge::KnowledgeIndex;
use clinigym::lab::{run_experiment, Experiment, LabOptions};
use clinigym::policy::bridge::{serve_stdio, serve_tcp, SessionOptions};
use clinigym::policy::{rollout, Policy, ReplayPolicy, ToyPrior, ToySoftmaxPolicy};
use clinigym::reward::{score_episode, RewardWeights};
use clinigym::tasks::{convert_mcqa, load_tasks, micro_clinic_suite, write_tasks, McqaRecord, Task};
use clinigym::tools::catalog::world_for;
use clinigym::trainer::{parse_checkpoint, write_metrics, Trainer, TrainerConfig, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Res<T> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "clinigym", version, about = "Desk-scale clinical agent gym")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a BM25 index from a JSONL passage corpus.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        index: PathBuf,
    },
    /// Validate, convert or generate task files.
    Tasks {
        #[command(subcommand)]
        cmd: TasksCmd,
    },
    /// Run episodes and write their trajectories as JSONL.
    Run(RunArgs),
    /// Score recorded trajectories against their tasks.
    Score {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        /// CSV destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSONL file receiving one full breakdown per episode.
        #[arg(long)]
        breakdown: Option<PathBuf>,
    },
    /// Train the toy policy and write per-step metrics.
    Train {
        #[arg(long, default_value = "full")]
        variant: String,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Micro-clinic task file; a generated suite when absent.
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write θ_S, θ_T and the step counter here when done.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run a dynamics experiment, or all of them.
    Lab {
        /// cosine-sweep, snr, kl-bound, ablation-suite or all.
        experiment: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
    },
    /// Drive episodes from an external agent over newline-delimited JSON.
    Serve {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        /// Listen on this address instead of standard input and output.
        #[arg(long)]
        tcp: Option<String>,
        #[arg(long, default_value_t = 1)]
        sessions: usize,
        #[arg(long)]
        require_logprobs: bool,
        #[arg(long)]
        timeout_ms: Option<u64>,
    },
}

#[derive(Subcommand)]
enum TasksCmd {
    /// Report valid records and per-line diagnostics.
    Validate { path: PathBuf },
    /// Convert multiple-choice records (JSONL) into tasks.
    ConvertMcqa {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a micro-clinic suite.
    GenMicro {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    index: Option<PathBuf>,
    /// Replay recorded trajectories, matched to tasks by id.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Toy policy parameters (student) from a training checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_turns: Option<usize>,
    #[arg(long)]
    max_response_tokens: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print each finished episode's transcript.
    #[arg(long)]
    render: bool,
}

fn knowledge(index: &Option<PathBuf>) -> Res<Option<Arc<KnowledgeIndex>>> {
    Ok(match index {
        Some(p) => Some(Arc::new(KnowledgeIndex::load(p)?)),
        None => None,
    })
}

fn tasks_from(path: &Path) -> Res<Vec<Task>> {
    let report = load_tasks(path)?;
    for d in &report.diagnostics {
        eprintln!("{}:{}: {}", path.display(), d.line, d.message);
    }
    Ok(report.tasks)
}

fn writer(path: &Option<PathBuf>) -> Res<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn ingest(corpus: &Path, index: &Path) -> Res<()> {
    let mut idx = KnowledgeIndex::new();
    let stats = idx.ingest_jsonl(BufReader::new(File::open(corpus)?))?;
    idx.save(index)?;
    println!(
        "passages {} terms {} avg_len {:.2}",
        stats.passage_count, stats.distinct_terms, stats.average_doc_length
    );
    Ok(())
}

fn tasks_cmd(cmd: TasksCmd) -> Res<bool> {
    match cmd {
        TasksCmd::Validate { path } => {
            let text = std::fs::read_to_string(&path)?;
            let report = clinigym::tasks::parse_tasks(&text)?;
            for d in &report.diagnostics {
                println!("line {}: {}", d.line, d.message);
            }
            println!("valid {} invalid {}", report.tasks.len(), report.diagnostics.len());
            Ok(report.diagnostics.is_empty() && !report.tasks.is_empty())
        }
        TasksCmd::ConvertMcqa { input, out } => {
            let text = std::fs::read_to_string(&input)?;
            let mut tasks = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let rec: McqaRecord = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
                tasks.push(convert_mcqa(&rec).map_err(|e| format!("line {}: {e}", i + 1))?);
            }
            write_tasks(&out, &tasks)?;
            println!("converted {}", tasks.len());
            Ok(true)
        }
        TasksCmd::GenMicro { seed, n, out } => {
            let tasks: Vec<Task> = micro_clinic_suite(seed, n).into_iter().map(|m| m.task).collect();
            write_tasks(&out, &tasks)?;
            println!("generated {}", tasks.len());
            Ok(true)
        }
    }
}

fn run(a: RunArgs) -> Res<()> {
    let tasks = tasks_from(&a.tasks)?;
    let kb = knowledge(&a.index)?;
    let mut cfg = EpisodeConfig::default();
    if let Some(t) = a.max_turns {
        cfg.max_turns = t;
    }
    if let Some(l) = a.max_response_tokens {
        cfg.max_response_tokens = l;
    }
    let recorded: HashMap<String, Trajectory> = match &a.replay {
        Some(p) => read_jsonl(BufReader::new(File::open(p)?))?.into_iter().map(|t| (t.task_id.clone(), t)).collect(),
        None => HashMap::new(),
    };
    let theta = match &a.checkpoint {
        Some(p) => parse_checkpoint(&std::fs::read(p)?)?.0,
        None => ToyPrior::default().params(&mut ChaCha8Rng::seed_from_u64(a.seed)),
    };
    let mut out = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let mut env = Env::new(cfg, kb.clone())?;
        let mut policy: Box<dyn Policy> = match (&a.replay, recorded.get(&task.id)) {
            (Some(_), Some(t)) => Box::new(ReplayPolicy::from_trajectory(t)),
            (Some(_), None) => Box::new(ReplayPolicy::default()),
            (None, _) => Box::new(ToySoftmaxPolicy::new(theta.clone())),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(i as u64));
        let t = rollout(&mut env, task, policy.as_mut(), &mut rng)?;
        let r = env.reward().expect("finished episode");
        eprintln!("{} turns {} total {:.4} correct {}", task.id, t.turns.len(), r.total, r.correct);
        if a.render {
            println!("{}", env.render());
        }
        out.push(t);
    }
    if let Some(p) = &a.out {
        write_jsonl(BufWriter::new(File::create(p)?), &out)?;
    }
    Ok(())
}

fn score(trajectory: &Path, tasks: &Path, index: &Option<PathBuf>, out: &Option<PathBuf>, breakdown: &Option<PathBuf>) -> Res<()> {
    let by_id: HashMap<String, Task> = tasks_from(tasks)?.into_iter().map(|t| (t.id.clone(), t)).collect();
    let kb = knowledge(index)?;
    let trajectories = read_jsonl(BufReader::new(File::open(trajectory)?))?;
    let mut csv = csv::Writer::from_writer(writer(out)?);
    csv.write_record(["task_id", "r_acc", "r_proc", "r_safe", "r_fmt", "r_coh", "r_assert", "violations", "total", "correct"])?;
    let mut json = match breakdown {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    for t in &trajectories {
        let task = by_id.get(&t.task_id).ok_or_else(|| format!("no task with id {}", t.task_id))?;
        let world = world_for(task, kb.clone());
        let b = score_episode(t, task, &world, &RewardWeights::default());
        csv.write_record([
            t.task_id.clone(),
            b.r_acc.to_string(),
            b.r_proc.to_string(),
            b.r_safe.to_string(),
            b.r_fmt.to_string(),
            b.r_coh.to_string(),
            b.r_assert.map(|x| x.to_string()).unwrap_or_default(),
            b.violations.len().to_string(),
            b.total.to_string(),
            b.correct.to_string(),
        ])?;
        if let Some(w) = json.as_mut() {
            serde_json::to_writer(&mut *w, &serde_json::json!({"task_id": t.task_id, "breakdown": b}))?;
            w.write_all(b"\n")?;
        }
    }
    csv.flush()?;
    if let Some(mut w) = json {
        w.flush()?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(variant: &str, steps: usize, seed: u64, tasks: &Option<PathBuf>, out: &Path, checkpoint: &Option<PathBuf>, resume: &Option<PathBuf>) -> Res<()> {
    let v = Variant::parse(variant).ok_or_else(|| format!("unknown variant {variant}"))?;
    let mut cfg = TrainerConfig::new(v);
    cfg.steps = steps;
    cfg.seed = seed;
    let tasks = match tasks {
        Some(p) => tasks_from(p)?,
        None => Vec::new(),
    };
    let mut tr = Trainer::new(cfg, tasks)?;
    if let Some(p) = resume {
        tr.load_checkpoint(p)?;
    }
    let rows = tr.run();
    write_metrics(BufWriter::new(File::create(out)?), &rows)?;
    if let Some(last) = rows.last() {
        eprintln!(
            "step {} accuracy {:.3} turns {:.2} tokens {:.1} kl {:.4}",
            last.step, last.validation_accuracy, last.mean_turns, last.mean_response_tokens, last.probe_kl
        );
    }
    if let Some(p) = checkpoint {
        tr.save_checkpoint(p)?;
    }
    Ok(())
}

fn lab(experiment: &str, out: &Path, seeds: u64, steps: usize) -> Res<bool> {
    let exps = if experiment == "all" { Experiment::ALL.to_vec() } else { vec![Experiment::parse(experiment)?] };
    let opts = LabOptions { seeds: (0..seeds).collect(), steps, out: Some(out.to_path_buf()), ..Default::default() };
    let mut ok = true;
    for e in exps {
        let o = run_experiment(e, &opts)?;
        for c in &o.checks {
            println!("{} {}: {} ({})", if c.pass { "PASS" } else { "FAIL" }, e.name(), c.name, c.detail);
        }
        ok &= o.passed();
    }
    Ok(ok)
}

fn serve(tasks: &Path, index: &Option<PathBuf>, tcp: &Option<String>, sessions: usize, require_logprobs: bool, timeout_ms: Option<u64>) -> Res<()> {
    let tasks = tasks_from(tasks)?;
    let kb = knowledge(index)?;
    let opts = SessionOptions { require_logprobs };
    let cfg = EpisodeConfig::default();
    match tcp {
        None => {
            let r = serve_stdio(cfg, kb, &tasks, opts)?;
            eprintln!("episodes {} aborted {:?}", r.episodes.len(), r.aborted);
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr)?;
            eprintln!("listening on {}", listener.local_addr()?);
            let reports = serve_tcp(listener, sessions, cfg, kb, Arc::new(tasks), opts, timeout_ms.map(Duration::from_millis))?;
            for (i, r) in reports.iter().enumerate() {
                match r {
                    Ok(r) => eprintln!("session {i}: episodes {} aborted {:?}", r.episodes.len(), r.aborted),
                    Err(e) => eprintln!("session {i}: {e}"),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Res<bool> = match cli.cmd {
        Cmd::Ingest { corpus, index } => ingest(&corpus, &index).map(|_| true),
        Cmd::Tasks { cmd } => tasks_cmd(cmd),
        Cmd::Run(a) => run(a).map(|_| true),
        Cmd::Score { trajectory, tasks, index, out, breakdown } => score(&trajectory, &tasks, &index, &out, &breakdown).map(|_| true),
        Cmd::Train { variant, steps, seed, tasks, out, checkpoint, resume } => {
            train(&variant, steps, seed, &tasks, &out, &checkpoint, &resume).map(|_| true)
        }
        Cmd::Lab { experiment, out, seeds, steps } => lab(&experiment, &out, seeds, steps),
        Cmd::Serve { tasks, index, tcp, sessions, require_logprobs, timeout_ms } => {
            serve(&tasks, &index, &tcp, sessions, require_logprobs, timeout_ms).map(|_| true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
