//! Fixed 64-token vocabulary of the toy policy and the deterministic
//! mapping from token sequences to tool-call documents.

use serde_json::{Map, Value};

use crate::env::{call_text, parse_action, AgentAction};

/// Tool-name tokens occupy ids 0..4.
pub const TOOLS: [&str; 4] = ["lookup_fact", "assess_case", "think", "submit_answer"];
pub const LOOKUP: usize = 0;
pub const ASSESS: usize = 1;
pub const THINK: usize = 2;
pub const SUBMIT: usize = 3;
/// Option letters occupy ids 4..9.
pub const LETTERS: [char; 5] = ['A', 'B', 'C', 'D', 'E'];
pub const FIRST_LETTER: usize = 4;
/// End-of-turn token.
pub const END: usize = 9;
pub const FIRST_WORD: usize = 10;
/// Reasoning words, ids 10..64.
pub const WORDS: [&str; 54] = [
    "the", "finding", "supports", "option", "assessment", "case", "likely", "because", "evidence", "suggests",
    "diagnosis", "differential", "reasoning", "appears", "sound", "revisit", "patient", "history", "exam", "result",
    "consistent", "with", "review", "confirm", "rule", "out", "next", "step", "check", "data", "lab", "value",
    "presents", "symptom", "acute", "chronic", "risk", "factor", "plan", "treat", "monitor", "given", "therefore",
    "answer", "best", "fits", "clinical", "picture", "key", "feature", "points", "toward", "against", "shows",
];
pub const VOCAB_SIZE: usize = FIRST_WORD + WORDS.len();

pub fn is_tool(id: usize) -> bool {
    id < FIRST_LETTER
}

pub fn is_letter(id: usize) -> bool {
    (FIRST_LETTER..END).contains(&id)
}

/// Surface string of a token.
pub fn token_str(id: usize) -> Option<String> {
    match id {
        i if is_tool(i) => Some(TOOLS[i].to_string()),
        i if is_letter(i) => Some(LETTERS[i - FIRST_LETTER].to_string()),
        END => Some("<end>".to_string()),
        i if i < VOCAB_SIZE => Some(WORDS[i - FIRST_WORD].to_string()),
        _ => None,
    }
}

pub fn token_id(s: &str) -> Option<usize> {
    (0..VOCAB_SIZE).find(|&i| token_str(i).as_deref() == Some(s))
}

/// Word ids of a text; words outside the vocabulary are skipped.
pub fn encode_words(text: &str) -> Vec<usize> {
    text.split_whitespace().filter_map(|w| token_id(&w.to_lowercase())).collect()
}

fn join(ids: &[usize]) -> String {
    ids.iter().filter_map(|&i| token_str(i)).collect::<Vec<_>>().join(" ")
}

/// Action for a token sequence. The first token selects a tool; later
/// tokens form the reasoning, and the first letter after `submit_answer`
/// is the answer. A non-tool first token yields free text. Decoding stops
/// at the first end token.
pub fn decode(tokens: &[usize]) -> AgentAction {
    let used = tokens.iter().position(|&t| t == END).map_or(tokens, |i| &tokens[..i]);
    let mut action = match used.split_first() {
        Some((&head, body)) if is_tool(head) => {
            let mut args = Map::new();
            let mut rest: Vec<usize> = body.to_vec();
            if head == SUBMIT {
                let answer = match rest.iter().position(|&t| is_letter(t)) {
                    Some(i) => token_str(rest.remove(i)).unwrap_or_default(),
                    None => String::new(),
                };
                args.insert("answer".into(), Value::String(answer));
            }
            if !rest.is_empty() {
                let key = if head == THINK { "thought" } else { "reasoning" };
                args.insert(key.into(), Value::String(join(&rest)));
            }
            parse_action(&call_text(TOOLS[head], &args))
        }
        _ => AgentAction::free_text(&join(used)),
    };
    action.token_ids = tokens.to_vec();
    action
}
