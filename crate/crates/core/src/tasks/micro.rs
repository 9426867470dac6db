//! Synthetic micro-clinic tasks: the right option is only revealed by
//! `assess_case`, which in turn needs a prior `lookup_fact`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::mcqa::LETTERS;
use super::{AccuracyMode, ExpectedAction, RewardBasis, Task};

pub const DOMAIN: &str = "micro_clinic";
pub const SOLUTION: [&str; 3] = ["lookup_fact", "assess_case", "submit_answer"];

const SYMPTOMS: &[&str] = &[
    "fever and productive cough",
    "acute chest pain",
    "progressive dyspnea",
    "new confusion",
    "abdominal pain and vomiting",
    "palpitations",
    "a persistent headache",
    "swelling of one leg",
    "polyuria and thirst",
    "a rash after a new drug",
];

const CONDITIONS: &[&str] = &[
    "community-acquired pneumonia",
    "acute coronary syndrome",
    "pulmonary embolism",
    "heart failure exacerbation",
    "sepsis",
    "diabetic ketoacidosis",
    "atrial fibrillation",
    "migraine",
    "deep vein thrombosis",
    "drug hypersensitivity",
    "appendicitis",
    "hypothyroidism",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroClinicTask {
    pub task: Task,
    /// Tool calls of the reference solution, in order.
    pub solution: Vec<String>,
    pub correct: char,
    pub options: Vec<String>,
}

impl MicroClinicTask {
    /// Reference solution as action texts.
    pub fn solution_actions(&self) -> Vec<String> {
        vec![
            json!({"name": "lookup_fact", "arguments": {}}).to_string(),
            json!({"name": "assess_case", "arguments": {}}).to_string(),
            json!({"name": "submit_answer", "arguments": {
                "answer": self.correct.to_string(),
                "reasoning": "assessment of the looked-up finding supports this option"
            }})
            .to_string(),
        ]
    }
}

/// Deterministic suite of `n` tasks for `seed`.
pub fn micro_clinic_suite(seed: u64, n: usize) -> Vec<MicroClinicTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|k| one(&mut rng, seed, k)).collect()
}

fn one(rng: &mut ChaCha8Rng, seed: u64, k: usize) -> MicroClinicTask {
    let n_opts = rng.gen_range(3..=LETTERS.len());
    let options: Vec<String> =
        CONDITIONS.choose_multiple(rng, n_opts).map(|s| s.to_string()).collect();
    let correct = LETTERS[rng.gen_range(0..n_opts)];
    let age = rng.gen_range(18..=90);
    let symptom = SYMPTOMS.choose(rng).expect("non-empty");
    let mut ticket = format!(
        "Micro-clinic case {seed}-{k}: a {age}-year-old presents with {symptom}. \
         Which option is best supported by the case findings?\n\nOptions:"
    );
    for (l, o) in LETTERS.iter().zip(&options) {
        ticket.push_str(&format!("\n({l}) {o}"));
    }
    let task = Task {
        id: String::new(),
        domain: DOMAIN.into(),
        ticket,
        expected_actions: vec![
            ExpectedAction::new("lookup_fact"),
            ExpectedAction::new("assess_case"),
            ExpectedAction::with_args("submit_answer", &[("answer", json!(correct.to_string()))]),
        ],
        nl_assertions: Vec::new(),
        reward_basis: vec![RewardBasis::Action],
        rubric: None,
        gold_answer: Some(correct.to_string()),
        accuracy_mode: AccuracyMode::Exact,
        patient_id: None,
    }
    .with_id();
    MicroClinicTask { task, solution: SOLUTION.iter().map(|s| s.to_string()).collect(), correct, options }
}
