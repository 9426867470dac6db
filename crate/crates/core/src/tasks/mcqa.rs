//! Multiple-choice QA records to tasks.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AccuracyMode, ExpectedAction, RewardBasis, Task, TaskError};

pub const LETTERS: [char; 5] = ['A', 'B', 'C', 'D', 'E'];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqaRecord {
    pub question: String,
    /// Option texts in letter order.
    pub options: Vec<String>,
    #[serde(default)]
    pub answer_key: Option<String>,
    #[serde(default)]
    pub source: String,
}

/// Builds a `medical_qa` task: lettered options in the ticket, an analysis
/// step and a letter-exact submission as the expected actions.
pub fn convert_mcqa(record: &McqaRecord) -> Result<Task, TaskError> {
    let n = record.options.len();
    if !(2..=LETTERS.len()).contains(&n) {
        return Err(TaskError::Conversion(format!("{n} options; expected 2 to 5")));
    }
    let key = record
        .answer_key
        .as_deref()
        .map(|k| k.trim().to_ascii_uppercase())
        .ok_or_else(|| TaskError::Conversion("missing answer_key".into()))?;
    if !LETTERS[..n].iter().any(|l| key == l.to_string()) {
        return Err(TaskError::Conversion(format!("answer_key {key:?} is not one of the {n} option letters")));
    }
    let mut ticket = record.question.trim().to_string();
    ticket.push_str("\n\nOptions:");
    for (letter, text) in LETTERS.iter().zip(&record.options) {
        ticket.push_str(&format!("\n({letter}) {}", text.trim()));
    }
    if !record.source.is_empty() {
        ticket.push_str(&format!("\n\nSource: {}", record.source));
    }
    let task = Task {
        id: String::new(),
        domain: "medical_qa".into(),
        ticket,
        expected_actions: vec![
            ExpectedAction::new("analyze_answer_options"),
            ExpectedAction::with_args("submit_answer", &[("answer", json!(key))]),
        ],
        nl_assertions: Vec::new(),
        reward_basis: vec![RewardBasis::Action],
        rubric: None,
        gold_answer: Some(key),
        accuracy_mode: AccuracyMode::Exact,
        patient_id: None,
    };
    task.validate()?;
    Ok(task.with_id())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn losartan() -> McqaRecord {
        McqaRecord {
            question: "A physician is choosing whether to prescribe losartan or lisinopril to treat hypertension in a 56-year-old male. Relative to losartan, one would expect treatment with lisinopril to produce which of the following changes in the circulating levels of these peptides?".into(),
            options: vec![
                "Bradykinin increase; angiotensin II decrease".into(),
                "Renin decrease; angiotensin 1 increase".into(),
                "Aldosterone increase; bradykinin decrease".into(),
                "Renin decrease; angiotensin II increase".into(),
            ],
            answer_key: Some("A".into()),
            source: "MedQA".into(),
        }
    }

    #[test]
    fn losartan_item() {
        let t = convert_mcqa(&losartan()).unwrap();
        assert_eq!(t.gold_answer.as_deref(), Some("A"));
        assert_eq!(t.reward_basis, vec![RewardBasis::Action]);
        assert_eq!(t.expected_actions[1].compare_args, vec!["answer"]);
        assert!(t.ticket.contains("(D) Renin decrease; angiotensin II increase"));
    }

    #[test]
    fn two_options() {
        let r = McqaRecord {
            question: "Is aspirin an NSAID?".into(),
            options: vec!["Yes".into(), "No".into()],
            answer_key: Some("a".into()),
            source: String::new(),
        };
        let t = convert_mcqa(&r).unwrap();
        assert!(t.ticket.contains("(A) Yes") && t.ticket.contains("(B) No"));
        assert!(!t.ticket.contains("(C)"));
    }

    #[test]
    fn deterministic_id() {
        assert_eq!(convert_mcqa(&losartan()).unwrap().id, convert_mcqa(&losartan()).unwrap().id);
    }

    #[test]
    fn errors() {
        let r = McqaRecord { answer_key: None, ..losartan() };
        assert!(matches!(convert_mcqa(&r), Err(TaskError::Conversion(_))));
        let r = McqaRecord { answer_key: Some("E".into()), ..losartan() };
        assert!(convert_mcqa(&r).is_err());
        let r = McqaRecord { options: vec!["x".into()], ..losartan() };
        assert!(convert_mcqa(&r).is_err());
    }
}
