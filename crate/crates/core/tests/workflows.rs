//! Cross-module workflows over the bundled fixtures.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use clinigym::env::{Env, EpisodeConfig, TerminatedBy};
use clinigym::lab::{run_experiment, Experiment, LabOptions};
use clinigym::policy::bridge::{serve_tcp, BridgeMessage, MessageKind, SessionOptions};
use clinigym::policy::{rollout, ReplayPolicy};
use clinigym::reward::score_episode;
use clinigym::tasks::{canonical_bytes, convert_mcqa, evaluate_pathway, load_tasks, micro_clinic_suite, McqaRecord, PathwaySpec, Task};
use clinigym::tools::catalog::{default_knowledge, world_for};
use clinigym::trainer::{RewardKind, Trainer, TrainerConfig, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn diagnosis_tasks() -> Vec<Task> {
    load_tasks(&fixture("clinical_diagnosis_tasks.jsonl")).unwrap().tasks
}

fn play(task: &Task, actions: &[String]) -> (clinigym::env::Trajectory, clinigym::reward::RewardBreakdown) {
    let mut env = Env::new(EpisodeConfig { max_turns: 10, ..Default::default() }, Some(default_knowledge())).unwrap();
    let mut p = ReplayPolicy::from_texts(actions);
    let t = rollout(&mut env, task, &mut p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    (t, env.reward().unwrap().clone())
}

fn call(name: &str, args: serde_json::Value) -> String {
    serde_json::json!({"name": name, "arguments": args}).to_string()
}

fn workup(task: &Task) -> Vec<String> {
    let pid = task.patient_id.clone().unwrap();
    let lab = task.expected_actions[2].arguments["lab_name"].as_str().unwrap().to_string();
    vec![
        call("get_patient_info", serde_json::json!({"patient_id": pid})),
        call("get_vital_signs", serde_json::json!({"patient_id": pid})),
        call("order_lab", serde_json::json!({"patient_id": pid, "lab_name": lab})),
        call(
            "submit_answer",
            serde_json::json!({
                "answer": task.gold_answer.clone().unwrap(),
                "reasoning": format!("{} supported by {lab}; plan: {}; follow up and reassess", task.nl_assertions.join(", "), task.nl_assertions.last().unwrap())
            }),
        ),
    ]
}

#[test]
fn diagnosis_fixture_loads_five_tasks() {
    let tasks = diagnosis_tasks();
    assert_eq!(tasks.len(), 5);
    assert!(tasks.iter().all(|t| t.domain == "clinical_diagnosis"));
    let again = diagnosis_tasks();
    let ids = |ts: &[Task]| {
        let mut v: Vec<String> = ts.iter().map(|t| t.id.clone()).collect();
        v.sort();
        v
    };
    assert_eq!(ids(&tasks), ids(&again));
}

#[test]
fn task_ids_match_an_external_md5() {
    let Ok(probe) = Command::new("md5sum").arg("--version").output() else {
        eprintln!("md5sum unavailable; skipping");
        return;
    };
    assert!(probe.status.success());
    let dir = tempfile::tempdir().unwrap();
    for t in diagnosis_tasks() {
        let p = dir.path().join("canon");
        std::fs::write(&p, canonical_bytes(&t)).unwrap();
        let out = Command::new("md5sum").arg(&p).output().unwrap();
        let hex = String::from_utf8(out.stdout).unwrap();
        assert_eq!(hex.split_whitespace().next().unwrap(), t.id);
    }
}

#[test]
fn careful_workups_are_clean_and_correct() {
    for task in diagnosis_tasks() {
        let (t, r) = play(&task, &workup(&task));
        assert_eq!(t.terminated_by, Some(TerminatedBy::Submit));
        assert!(r.violations.iter().all(|v| v.severity < 4), "{}: {:?}", task.patient_id.as_deref().unwrap(), r.violations);
        assert!(r.correct, "{:?}", task.gold_answer);
        assert!(r.total > 0.6, "{}", r.total);
    }
}

#[test]
fn allergic_prescription_is_capped() {
    let task = &diagnosis_tasks()[0];
    let mut actions = workup(task);
    actions.insert(3, call("prescribe", serde_json::json!({"patient_id": "P001", "drug": "amoxicillin", "dose_mg": 500})));
    let (_, r) = play(task, &actions);
    assert!(r.violations.iter().any(|v| v.pattern_id == "S5-ALLERGY"));
    assert!(r.capped && r.total <= 0.1);
}

#[test]
fn warfarin_patient_given_nsaid_costs_a_ddi() {
    let task = diagnosis_tasks().into_iter().find(|t| t.patient_id.as_deref() == Some("P003")).unwrap();
    let mut actions = workup(&task);
    actions.insert(3, call("prescribe", serde_json::json!({"patient_id": "P003", "drug": "ibuprofen", "dose_mg": 400})));
    let (_, r) = play(&task, &actions);
    let ddi = r.violations.iter().filter(|v| v.category == "Missed DDI").count();
    assert!(ddi >= 1, "{:?}", r.violations);
    assert!(r.penalized <= r.raw - 0.3 + 1e-12);
}

#[test]
fn pathway_fixture_scores_by_phase() {
    let spec: PathwaySpec = serde_json::from_str(&std::fs::read_to_string(fixture("pathway_sepsis.json")).unwrap()).unwrap();
    spec.validate().unwrap();
    let task = &diagnosis_tasks()[0];
    let triage = vec![
        call("get_vital_signs", serde_json::json!({"patient_id": "P001"})),
        call("order_lab", serde_json::json!({"patient_id": "P001", "lab_name": "lactate"})),
    ];
    let mut all = triage.clone();
    all.push(call("think", serde_json::json!({"thought": "sepsis likely; antibiotic after cultures"})));
    all.push(call("prescribe", serde_json::json!({"patient_id": "P001", "drug": "levofloxacin", "dose_mg": 750})));
    all.push(call("submit_answer", serde_json::json!({"answer": "sepsis", "reasoning": "antibiotic started"})));
    let (full, _) = play(task, &all);
    let s = evaluate_pathway(&full, &spec);
    assert_eq!(s.phases.len(), 2);
    assert_eq!(s.phases[1], 1.0);

    let mut first = triage;
    first.push(call("think", serde_json::json!({"thought": "sepsis"})));
    first.push(call("submit_answer", serde_json::json!({"answer": "unsure"})));
    let (half, _) = play(task, &first);
    let h = evaluate_pathway(&half, &spec);
    assert_eq!(h.phases[0], 1.0);
    assert!(h.phases[1] < 1.0);
    assert!(h.overall < s.overall);
}

#[test]
fn mcqa_fixture_converts_to_gold_a() {
    let text = std::fs::read_to_string(fixture("medqa_pharmacology.jsonl")).unwrap();
    let rec: McqaRecord = serde_json::from_str(text.trim()).unwrap();
    let t = convert_mcqa(&rec).unwrap();
    assert_eq!(t.gold_answer.as_deref(), Some("A"));
    for l in ["(A) ", "(B) ", "(C) ", "(D) "] {
        assert!(t.ticket.contains(l));
    }
    assert!(!t.ticket.contains("(E) "));
    assert_eq!(convert_mcqa(&rec).unwrap().id, t.id);
}

fn client(addr: std::net::SocketAddr, m: &clinigym::tasks::MicroClinicTask) -> String {
    let stream = TcpStream::connect(addr).unwrap();
    let mut w = stream.try_clone().unwrap();
    let mut r = BufReader::new(stream);
    let mut actions = m.solution_actions().into_iter();
    let mut line = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line).unwrap() == 0 {
            panic!("server closed early");
        }
        let msg: BridgeMessage = serde_json::from_str(line.trim_end()).unwrap();
        match msg.kind {
            MessageKind::Observation => {
                let a = BridgeMessage::new(MessageKind::Action, &msg.episode_id, msg.turn, actions.next().unwrap());
                w.write_all(a.to_line().as_bytes()).unwrap();
            }
            MessageKind::End => return msg.payload,
            _ => {}
        }
    }
}

#[test]
fn concurrent_tcp_sessions_are_isolated() {
    let suite = micro_clinic_suite(21, 1);
    let task = suite[0].task.clone();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let tasks = Arc::new(vec![task.clone()]);
    let server = std::thread::spawn(move || {
        serve_tcp(listener, 2, EpisodeConfig::default(), None, tasks, SessionOptions::default(), Some(std::time::Duration::from_secs(10)))
    });
    let clients: Vec<_> = (0..2)
        .map(|_| {
            let m = suite[0].clone();
            std::thread::spawn(move || client(addr, &m))
        })
        .collect();
    let ends: Vec<String> = clients.into_iter().map(|h| h.join().unwrap()).collect();
    let reports = server.join().unwrap().unwrap();
    assert_eq!(reports.len(), 2);
    for (end, rep) in ends.iter().zip(&reports) {
        let rep = rep.as_ref().unwrap();
        let ep = &rep.episodes[0];
        let offline = score_episode(&ep.trajectory, &task, &world_for(&task, None), &Default::default());
        let sent: serde_json::Value = serde_json::from_str(end).unwrap();
        assert_eq!(sent["total"].as_f64().unwrap(), offline.total);
        assert_eq!(offline.r_acc, 1.0);
    }
}

#[test]
fn grpo_is_full_without_distillation_or_length_control() {
    let run = |mut c: TrainerConfig| {
        c.steps = 12;
        c.seed = 4;
        Trainer::new(c, Vec::new()).unwrap().run()
    };
    let mut full = TrainerConfig::new(Variant::Full);
    full.lambda_distill = 0.0;
    full.reward = RewardKind::Accuracy;
    let a = run(TrainerConfig::new(Variant::Grpo));
    assert_eq!(a, run(full));
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let mut c = TrainerConfig::new(Variant::Full);
    c.steps = 6;
    let mut tr = Trainer::new(c.clone(), Vec::new()).unwrap();
    tr.run();
    tr.save_checkpoint(&path).unwrap();
    let mut back = Trainer::new(c, Vec::new()).unwrap();
    back.load_checkpoint(&path).unwrap();
    assert_eq!(back.student(), tr.student());
    assert_eq!(back.teacher(), tr.teacher());
    assert_eq!(back.steps_done(), 6);
}

#[test]
fn lab_writes_per_seed_and_summary_files() {
    let dir = tempfile::tempdir().unwrap();
    let opts = LabOptions { seeds: vec![0, 1], steps: 20, tail: 5, out: Some(dir.path().to_path_buf()) };
    let out = run_experiment(Experiment::Snr, &opts).unwrap();
    assert!(out.files.iter().all(|f| f.exists()));
    assert!(dir.path().join("snr").join("summary.csv").exists());
    let cos = run_experiment(Experiment::CosineSweep, &opts).unwrap();
    assert!(cos.passed());
}
