//! Wire protocol for out-of-process planners and detectors.
//!
//! Framing: a 4-byte big-endian length, then that many bytes of UTF-8 JSON.
//! One request, one reply, on a TCP stream. See `docs/protocol.md`.

use crate::config::SimConfig;
use crate::constraint::{parse_constraint, render_question, Constraint};
use crate::detector::{CheckRecord, DetectorModel};
use crate::executive::{Detector, DetectorError};
use crate::planner::{FeedbackMsg, HistoryEntry, PlanDecision, Planner, PlannerError, PromptState, ScriptedPlanner};
use crate::skills::parse_skill;
use crate::world::{TaskSpec, WorldState};
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
pub const MAX_FRAME: u32 = 16 << 20;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("timed out waiting for the peer")]
    Timeout,
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("malformed document: {reason}; raw payload: {raw}")]
    Malformed { reason: String, raw: String },
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("unparseable constraint `{0}`")]
    BadConstraint(String),
    #[error("answer `{0}` is neither Yes nor No")]
    BadAnswer(String),
    #[error("expected {expected} answers, got {got}")]
    AnswerCount { expected: usize, got: usize },
}

fn io_err(e: io::Error) -> ProtocolError {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ProtocolError::Timeout,
        _ => ProtocolError::Io(e),
    }
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> Result<(), ProtocolError> {
    let len = u32::try_from(body.len()).map_err(|_| ProtocolError::TooLarge(u32::MAX))?;
    if len > MAX_FRAME {
        return Err(ProtocolError::TooLarge(len));
    }
    w.write_all(&len.to_be_bytes()).map_err(io_err)?;
    w.write_all(body).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Reads one frame; `Ok(None)` on a clean end of stream before the header.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(io_err(e)),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(ProtocolError::TooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).map_err(io_err)?;
    Ok(Some(body))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireStep {
    pub step: String,
    pub annotation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRequest {
    pub instruction: String,
    pub history: Vec<WireStep>,
    pub feedback: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanReply {
    pub step: String,
    pub constraints: Vec<String>,
    pub rationale: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectRequest {
    pub questions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectReply {
    pub answers: Vec<String>,
}

impl PlanRequest {
    pub fn from_prompt(prompt: &PromptState) -> Self {
        Self {
            instruction: prompt.instruction.clone(),
            history: prompt
                .history
                .iter()
                .map(|e| WireStep { step: e.step.text(), annotation: e.annotation() })
                .collect(),
            feedback: prompt.feedback.as_ref().map(FeedbackMsg::line),
        }
    }

    /// Server side: rebuild the prompt the request describes.
    pub fn to_prompt(&self) -> Result<PromptState, ProtocolError> {
        let mut prompt = PromptState::new(&self.instruction);
        for w in &self.history {
            let step = parse_skill(&w.step).map_err(|_| ProtocolError::UnknownSkill(w.step.clone()))?;
            let entry = HistoryEntry::from_annotation(step, &w.annotation).map_err(|e| ProtocolError::Malformed {
                reason: e.to_string(),
                raw: w.annotation.clone(),
            })?;
            prompt.history.push(entry);
        }
        if let Some(f) = &self.feedback {
            let violated = FeedbackMsg::parse_line(f)
                .map_err(|e| ProtocolError::Malformed { reason: e.to_string(), raw: f.clone() })?;
            let during_step = self.history.last().map(|w| w.step.clone()).unwrap_or_default();
            prompt.feedback = Some(FeedbackMsg { violated, at_tick: 0, during_step });
        }
        Ok(prompt)
    }
}

impl PlanReply {
    pub fn from_decision(d: &PlanDecision) -> Self {
        Self {
            step: d.step.text(),
            constraints: d.constraints.iter().map(Constraint::text).collect(),
            rationale: d.rationale.clone(),
        }
    }

    pub fn into_decision(self) -> Result<PlanDecision, ProtocolError> {
        let step = parse_skill(&self.step).map_err(|_| ProtocolError::UnknownSkill(self.step.clone()))?;
        let constraints = self
            .constraints
            .iter()
            .map(|c| parse_constraint(c).map_err(|_| ProtocolError::BadConstraint(c.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PlanDecision::new(step, constraints, self.rationale))
    }
}

fn decode<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ProtocolError> {
    let raw = String::from_utf8_lossy(body).into_owned();
    serde_json::from_slice(body).map_err(|e| {
        tracing::warn!(%raw, "malformed protocol document");
        ProtocolError::Malformed { reason: e.to_string(), raw }
    })
}

/// One request/reply exchange on a fresh connection.
fn exchange<Req: Serialize, Rep: for<'de> Deserialize<'de>>(
    endpoint: &str,
    req: &Req,
    timeout: Duration,
) -> Result<Rep, ProtocolError> {
    let addr: SocketAddr = endpoint
        .to_socket_addrs()
        .map_err(io_err)?
        .next()
        .ok_or_else(|| ProtocolError::Io(io::Error::new(io::ErrorKind::NotFound, endpoint.to_string())))?;
    let mut s = TcpStream::connect_timeout(&addr, timeout).map_err(io_err)?;
    s.set_read_timeout(Some(timeout))?;
    s.set_write_timeout(Some(timeout))?;
    write_frame(&mut s, &serde_json::to_vec(req).expect("requests serialize"))?;
    let body = read_frame(&mut s)?
        .ok_or_else(|| ProtocolError::Io(io::Error::new(io::ErrorKind::UnexpectedEof, "peer closed the connection")))?;
    decode(&body)
}

pub fn external_plan_next(endpoint: &str, prompt: &PromptState, timeout: Duration) -> Result<PlanDecision, ProtocolError> {
    let reply: PlanReply = exchange(endpoint, &PlanRequest::from_prompt(prompt), timeout)?;
    reply.into_decision()
}

pub fn parse_answer(a: &str) -> Result<bool, ProtocolError> {
    match a.trim() {
        "Yes" => Ok(true),
        "No" => Ok(false),
        other => Err(ProtocolError::BadAnswer(other.to_string())),
    }
}

pub fn external_check(endpoint: &str, questions: &[String], timeout: Duration) -> Result<Vec<bool>, ProtocolError> {
    let reply: DetectReply = exchange(endpoint, &DetectRequest { questions: questions.to_vec() }, timeout)?;
    if reply.answers.len() != questions.len() {
        return Err(ProtocolError::AnswerCount { expected: questions.len(), got: reply.answers.len() });
    }
    reply.answers.iter().map(|a| parse_answer(a)).collect()
}

/// A planner living behind the wire protocol.
#[derive(Clone, Debug)]
pub struct ExternalPlanner {
    pub endpoint: String,
    pub timeout: Duration,
}

impl ExternalPlanner {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into(), timeout: DEFAULT_TIMEOUT }
    }
}

impl Planner for ExternalPlanner {
    fn plan_next(&mut self, prompt: &PromptState, _task: &TaskSpec) -> Result<PlanDecision, PlannerError> {
        external_plan_next(&self.endpoint, prompt, self.timeout).map_err(|e| PlannerError::External(e.to_string()))
    }

    fn name(&self) -> String {
        format!("external({})", self.endpoint)
    }
}

/// A detector living behind the wire protocol. Ground truth is still
/// recorded alongside each answer.
#[derive(Clone, Debug)]
pub struct ExternalDetector {
    pub endpoint: String,
    pub timeout: Duration,
}

impl ExternalDetector {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into(), timeout: DEFAULT_TIMEOUT }
    }
}

impl Detector for ExternalDetector {
    fn check(
        &mut self,
        _model: &DetectorModel,
        constraints: &[Constraint],
        world: &WorldState,
    ) -> Result<Vec<CheckRecord>, DetectorError> {
        let questions: Vec<String> = constraints.iter().map(render_question).collect();
        let answers =
            external_check(&self.endpoint, &questions, self.timeout).map_err(|e| DetectorError::External(e.to_string()))?;
        constraints
            .iter()
            .zip(answers)
            .map(|(c, reported)| {
                Ok(CheckRecord { tick: world.tick, constraint: c.clone(), truth: world.evaluate_predicate(c)?, reported })
            })
            .collect()
    }
}

/// What a [`MockServer`] replies.
#[derive(Clone, Debug)]
pub enum MockBehavior {
    /// Plan requests go to the scripted planner (the task is rebuilt from the
    /// instruction); detector requests get `answer` for every question.
    Scripted { cfg: SimConfig, answer: String },
    /// Raw reply bodies, one per request; the last repeats.
    Canned(Vec<String>),
    /// Read requests and never answer.
    Silent,
}

/// In-process protocol server for tests and examples.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    /// Raw request bodies received, in order.
    pub received: Arc<Mutex<Vec<String>>>,
}

impl MockServer {
    pub fn spawn(behavior: MockBehavior) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", behavior)
    }

    pub fn bind(addr: &str, behavior: MockBehavior) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let received = Arc::new(Mutex::new(Vec::new()));
        let (stop2, rec2) = (stop.clone(), received.clone());
        let handle = std::thread::spawn(move || {
            let mut served = 0usize;
            for conn in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(mut s) = conn else { continue };
                if let Err(e) = serve(&mut s, &behavior, &rec2, &mut served, &stop2) {
                    tracing::debug!(error = %e, "mock connection ended");
                }
            }
        });
        Ok(Self { addr, stop, handle: Some(handle), received })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    /// Blocks the calling thread until the server thread exits.
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(
    s: &mut TcpStream,
    behavior: &MockBehavior,
    received: &Mutex<Vec<String>>,
    served: &mut usize,
    stop: &AtomicBool,
) -> Result<(), ProtocolError> {
    s.set_read_timeout(Some(Duration::from_millis(100)))?;
    loop {
        let body = match read_frame(s) {
            Ok(Some(b)) => b,
            Ok(None) => return Ok(()),
            Err(ProtocolError::Timeout) if !stop.load(Ordering::SeqCst) => continue,
            Err(e) => return Err(e),
        };
        received.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());
        let reply = match behavior {
            MockBehavior::Silent => {
                // hold the connection open until the client gives up
                while !stop.load(Ordering::SeqCst) {
                    let mut b = [0u8; 1];
                    match s.read(&mut b) {
                        Ok(0) => return Ok(()),
                        Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
                        _ => {}
                    }
                }
                return Ok(());
            }
            MockBehavior::Canned(replies) => {
                let r = replies.get(*served).or(replies.last()).cloned().unwrap_or_default();
                r.into_bytes()
            }
            MockBehavior::Scripted { cfg, answer } => scripted_reply(&body, cfg, answer),
        };
        *served += 1;
        write_frame(s, &reply)?;
        let _ = s.flush();
        if matches!(behavior, MockBehavior::Canned(_)) {
            let _ = s.shutdown(Shutdown::Write);
        }
    }
}

fn scripted_reply(body: &[u8], cfg: &SimConfig, answer: &str) -> Vec<u8> {
    if let Ok(req) = serde_json::from_slice::<DetectRequest>(body) {
        let reply = DetectReply { answers: vec![answer.to_string(); req.questions.len()] };
        return serde_json::to_vec(&reply).unwrap();
    }
    let decision = serde_json::from_slice::<PlanRequest>(body)
        .map_err(|e| e.to_string())
        .and_then(|req| {
            let task = TaskSpec::from_instruction(&req.instruction, cfg)
                .ok_or_else(|| format!("unknown instruction `{}`", req.instruction))?;
            let prompt = req.to_prompt().map_err(|e| e.to_string())?;
            ScriptedPlanner.plan_next(&prompt, &task).map_err(|e| e.to_string())
        });
    let reply = match decision {
        Ok(d) => PlanReply::from_decision(&d),
        // an empty step is rejected by the client as an unknown skill
        Err(e) => PlanReply { step: String::new(), constraints: Vec::new(), rationale: format!("error: {e}") },
    };
    serde_json::to_vec(&reply).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_layout() {
        let mut buf = Vec::new();
        write_frame(&mut buf, br#"{"answers":["Yes"]}"#).unwrap();
        assert_eq!(&buf[..4], &[0, 0, 0, 19]);
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), br#"{"answers":["Yes"]}"#);
        assert!(read_frame(&mut r).unwrap().is_none());
        let mut huge = &(MAX_FRAME + 1).to_be_bytes()[..];
        assert!(matches!(read_frame(&mut huge), Err(ProtocolError::TooLarge(_))));
    }

    #[test]
    fn answers_are_exactly_yes_or_no() {
        assert!(parse_answer("Yes").unwrap());
        assert!(!parse_answer("No").unwrap());
        assert!(matches!(parse_answer("Maybe"), Err(ProtocolError::BadAnswer(_))));
        assert!(parse_answer("yes").is_err());
    }
}
