//! Desk-scale clinical agent gym: episodes, tools, retrieval, rewards, a
//! toy softmax policy, and teacher-distilled group policy optimization.

pub mod env;
pub mod knowledge;
pub mod lab;
pub mod policy;
pub mod reward;
pub mod tasks;
pub mod text;
pub mod tools;
pub mod trainer;
