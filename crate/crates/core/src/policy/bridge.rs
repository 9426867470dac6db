//! Newline-delimited JSON protocol that lets an external agent drive
//! episodes. The server sends `observation`, the client answers with
//! `action`, the server replies with `result` and, once the episode is
//! over, an `end` message whose payload is the reward breakdown.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{parse_action, Env, EnvError, EpisodeConfig, Trajectory};
use crate::knowledge::KnowledgeIndex;
use crate::reward::RewardBreakdown;
use crate::tasks::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Observation,
    Action,
    Result,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeMessage {
    pub kind: MessageKind,
    pub episode_id: String,
    pub turn: usize,
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

impl BridgeMessage {
    pub fn new(kind: MessageKind, episode_id: &str, turn: usize, payload: String) -> Self {
        Self { kind, episode_id: episode_id.into(), turn, payload, token_logprobs: None }
    }

    /// One line, newline included.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("plain data");
        s.push('\n');
        s
    }
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("client timed out")]
    Timeout,
    #[error("client closed the connection")]
    Closed,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionOptions {
    /// Reject actions that carry no token log-probabilities.
    pub require_logprobs: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub episode_id: String,
    pub trajectory: Trajectory,
    pub reward: RewardBreakdown,
}

/// Finished episodes of a session and, when it stopped early, why.
#[derive(Debug, Default)]
pub struct SessionReport {
    pub episodes: Vec<EpisodeOutcome>,
    pub aborted: Option<String>,
}

fn send(w: &mut impl Write, m: &BridgeMessage) -> io::Result<()> {
    w.write_all(m.to_line().as_bytes())?;
    w.flush()
}

fn recv(r: &mut impl BufRead) -> Result<BridgeMessage, BridgeError> {
    let mut line = String::new();
    match r.read_line(&mut line) {
        Ok(0) => Err(BridgeError::Closed),
        Ok(_) => serde_json::from_str(line.trim_end()).map_err(|e| BridgeError::Protocol(format!("bad message: {e}"))),
        Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Err(BridgeError::Timeout),
        Err(e) => Err(e.into()),
    }
}

/// Runs every task in order over one connection. A protocol violation or
/// timeout ends the running episode as truncated, sends its `end` message
/// with an `error` field, and stops the session.
pub fn serve_session(
    reader: &mut impl BufRead,
    writer: &mut impl Write,
    env: &mut Env,
    tasks: &[Task],
    opts: SessionOptions,
) -> Result<SessionReport, BridgeError> {
    let mut report = SessionReport::default();
    for (n, task) in tasks.iter().enumerate() {
        let id = format!("{}-{n}", task.id);
        let mut obs = env.reset(task)?;
        loop {
            send(writer, &BridgeMessage::new(MessageKind::Observation, &id, obs.turn, obs.render()))?;
            let step = recv(reader).and_then(|m| {
                if m.kind != MessageKind::Action {
                    Err(BridgeError::Protocol(format!("expected action, got {:?}", m.kind)))
                } else if m.episode_id != id {
                    Err(BridgeError::Protocol(format!("unknown episode {}", m.episode_id)))
                } else if opts.require_logprobs && m.token_logprobs.is_none() {
                    Err(BridgeError::Protocol("token_logprobs required".into()))
                } else {
                    Ok(m)
                }
            });
            let m = match step {
                Ok(m) => m,
                Err(e) => {
                    let reward = env.truncate()?;
                    let mut payload = serde_json::to_value(&reward).expect("plain data");
                    payload["error"] = e.to_string().into();
                    let _ = send(writer, &BridgeMessage::new(MessageKind::End, &id, obs.turn, payload.to_string()));
                    report.aborted = Some(e.to_string());
                    return Ok(report);
                }
            };
            let out = env.step_action(parse_action(&m.payload), m.token_logprobs)?;
            send(writer, &BridgeMessage::new(MessageKind::Result, &id, out.observation.turn, out.observation.tool_results.clone()))?;
            if let Some(reward) = out.reward {
                let payload = serde_json::to_string(&reward).expect("plain data");
                send(writer, &BridgeMessage::new(MessageKind::End, &id, out.observation.turn, payload))?;
                report.episodes.push(EpisodeOutcome { episode_id: id, trajectory: env.trajectory().clone(), reward });
                break;
            }
            obs = out.observation;
        }
    }
    Ok(report)
}

/// Serves standard input and output.
pub fn serve_stdio(config: EpisodeConfig, knowledge: Option<Arc<KnowledgeIndex>>, tasks: &[Task], opts: SessionOptions) -> Result<SessionReport, BridgeError> {
    let mut env = Env::new(config, knowledge)?;
    let stdin = io::stdin();
    let mut reader = stdin.lock();
    let mut writer = io::stdout().lock();
    serve_session(&mut reader, &mut writer, &mut env, tasks, opts)
}

/// Accepts `sessions` connections, each in its own thread with its own
/// environment, and returns their reports in accept order.
pub fn serve_tcp(
    listener: TcpListener,
    sessions: usize,
    config: EpisodeConfig,
    knowledge: Option<Arc<KnowledgeIndex>>,
    tasks: Arc<Vec<Task>>,
    opts: SessionOptions,
    timeout: Option<Duration>,
) -> Result<Vec<Result<SessionReport, BridgeError>>, BridgeError> {
    let mut handles = Vec::new();
    for _ in 0..sessions {
        let (stream, _) = listener.accept()?;
        let (knowledge, tasks) = (knowledge.clone(), tasks.clone());
        handles.push(std::thread::spawn(move || -> Result<SessionReport, BridgeError> {
            stream.set_read_timeout(timeout)?;
            let mut env = Env::new(config, knowledge)?;
            let mut reader = BufReader::new(stream.try_clone()?);
            let mut writer: TcpStream = stream;
            serve_session(&mut reader, &mut writer, &mut env, &tasks, opts)
        }));
    }
    Ok(handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(BridgeError::Protocol("session panicked".into())))).collect())
}
