//! Trace files: one event per line, `time<TAB>kind<TAB>payload`.
//!
//! The first line is a `Header` whose payload is JSON (version, task, seed,
//! policy, injections, config). Every other payload is canonical grammar
//! text; see `docs/trace.md`.

use crate::config::SimConfig;
use crate::executive::{
    run_episode, EpisodeSpec, EpisodeTrace, Event, ExecError, TraceEvent, TraceHeader, TRACE_VERSION,
};
use crate::planner::ScriptedPlanner;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("trace has no header")]
    NoHeader,
    #[error(transparent)]
    Exec(#[from] ExecError),
}

fn time_text(tick: u64, tps: u32) -> String {
    format!("{:.3}", tick as f64 / f64::from(tps))
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn payload(event: &Event) -> String {
    match event {
        Event::Plan { step, constraints } if constraints.is_empty() => step.clone(),
        Event::Plan { step, constraints } => format!("{step} | {}", constraints.join("; ")),
        Event::SkillStart { step } | Event::Abort { step } => step.clone(),
        Event::Check { constraint, truth, reported } => {
            format!("{constraint} | truth={} reported={}", yes_no(*truth), yes_no(*reported))
        }
        Event::Armed { constraint } => constraint.clone(),
        Event::Violation { constraints } => constraints.join("; "),
        Event::SkillEnd { step, status } => format!("{step} | {status}"),
        Event::Disturbance { what } => what.clone(),
        Event::Timeout | Event::Success => String::new(),
        Event::Failure { reason } => reason.clone(),
    }
}

pub fn format_event(e: &TraceEvent, tps: u32) -> String {
    format!("{}\t{}\t{}", time_text(e.tick, tps), e.event.kind_name(), payload(&e.event))
}

pub fn format_trace(trace: &EpisodeTrace) -> String {
    let tps = trace.header.ticks_per_second;
    let header = serde_json::to_string(&trace.header).expect("header serializes");
    let mut out = format!("{}\tHeader\t{header}\n", time_text(0, tps));
    for e in &trace.events {
        out.push_str(&format_event(e, tps));
        out.push('\n');
    }
    out
}

/// A file name unique within one experiment run.
pub fn file_name(trace: &EpisodeTrace) -> String {
    let h = &trace.header;
    let levels: String = h
        .task
        .levels()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '=' { c } else { '_' })
        .collect();
    format!("{}_{}_{}_{:016x}.trace", h.task.family, levels, h.policy.label, h.seed)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

fn split_list(s: &str) -> Vec<String> {
    if s.is_empty() {
        Vec::new()
    } else {
        s.split("; ").map(str::to_string).collect()
    }
}

fn parse_event(kind: &str, payload: &str) -> Option<Event> {
    let pair = || payload.split_once(" | ");
    Some(match kind {
        "Plan" => match pair() {
            Some((step, cs)) => Event::Plan { step: step.into(), constraints: split_list(cs) },
            None => Event::Plan { step: payload.into(), constraints: Vec::new() },
        },
        "SkillStart" => Event::SkillStart { step: payload.into() },
        "Abort" => Event::Abort { step: payload.into() },
        "Check" => {
            let (c, rest) = pair()?;
            let (t, r) = rest.split_once(' ')?;
            Event::Check {
                constraint: c.into(),
                truth: parse_bool(t.strip_prefix("truth=")?)?,
                reported: parse_bool(r.strip_prefix("reported=")?)?,
            }
        }
        "Armed" => Event::Armed { constraint: payload.into() },
        "Violation" => Event::Violation { constraints: split_list(payload) },
        "SkillEnd" => {
            let (step, status) = pair()?;
            Event::SkillEnd { step: step.into(), status: status.into() }
        }
        "Disturbance" => Event::Disturbance { what: payload.into() },
        "Timeout" => Event::Timeout,
        "Success" => Event::Success,
        "Failure" => Event::Failure { reason: payload.into() },
        _ => return None,
    })
}

#[derive(Clone, Debug)]
pub struct ParsedTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
    /// Event lines as written, for divergence reports.
    pub lines: Vec<String>,
}

pub fn parse_trace(text: &str) -> Result<ParsedTrace, TraceError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.is_empty());
    let (_, first) = lines.next().ok_or(TraceError::NoHeader)?;
    let mut parts = first.splitn(3, '\t');
    let (_, kind, json) = (parts.next(), parts.next(), parts.next());
    if kind != Some("Header") {
        return Err(TraceError::NoHeader);
    }
    let header: TraceHeader = serde_json::from_str(json.unwrap_or(""))
        .map_err(|e| TraceError::Parse { line: 1, reason: e.to_string() })?;
    let tps = f64::from(header.ticks_per_second);
    let mut events = Vec::new();
    let mut raw = Vec::new();
    for (i, line) in lines {
        let bad = |reason: &str| TraceError::Parse { line: i + 1, reason: reason.to_string() };
        let mut f = line.splitn(3, '\t');
        let (t, k, p) = (f.next().unwrap_or(""), f.next().ok_or_else(|| bad("missing kind"))?, f.next().unwrap_or(""));
        let secs: f64 = t.parse().map_err(|_| bad("bad time"))?;
        if secs < 0.0 {
            return Err(bad("negative time"));
        }
        let event = parse_event(k, p).ok_or_else(|| bad("unknown kind or malformed payload"))?;
        events.push(TraceEvent { tick: (secs * tps).round() as u64, event });
        raw.push(line.to_string());
    }
    Ok(ParsedTrace { header, events, lines: raw })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    /// 1-based event index (the header is line 0).
    pub index: usize,
    pub recorded: Option<String>,
    pub replayed: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub events: usize,
    pub version_mismatch: Option<u32>,
    pub config_mismatch: bool,
    pub divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn is_identical(&self) -> bool {
        self.divergence.is_none()
    }
}

impl fmt::Display for ReplayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(v) = self.version_mismatch {
            writeln!(f, "warning: trace version {v}, this build writes {TRACE_VERSION}")?;
        }
        if self.config_mismatch {
            writeln!(f, "warning: replaying with a config that differs from the recorded one")?;
        }
        match &self.divergence {
            None => write!(f, "identical ({} events)", self.events),
            Some(d) => write!(
                f,
                "diverged at event {}:\n  recorded: {}\n  replayed: {}",
                d.index,
                d.recorded.as_deref().unwrap_or("<end of trace>"),
                d.replayed.as_deref().unwrap_or("<end of trace>"),
            ),
        }
    }
}

/// Re-simulates the recorded episode with the scripted planner and compares
/// event lines. `cfg` overrides the recorded configuration.
pub fn replay(parsed: &ParsedTrace, cfg: Option<&SimConfig>) -> Result<ReplayReport, TraceError> {
    let h = &parsed.header;
    let cfg = cfg.unwrap_or(&h.config);
    let spec = EpisodeSpec { task: &h.task, seed: h.seed, policy: &h.policy, cfg, injections: &h.injections };
    let fresh = run_episode(&spec, &mut ScriptedPlanner)?;
    let tps = fresh.header.ticks_per_second;
    let replayed: Vec<String> = fresh.events.iter().map(|e| format_event(e, tps)).collect();
    let n = parsed.lines.len().max(replayed.len());
    let divergence = (0..n)
        .find(|&i| parsed.lines.get(i) != replayed.get(i))
        .map(|i| Divergence { index: i + 1, recorded: parsed.lines.get(i).cloned(), replayed: replayed.get(i).cloned() });
    Ok(ReplayReport {
        events: parsed.lines.len(),
        version_mismatch: (h.version != TRACE_VERSION).then_some(h.version),
        config_mismatch: cfg.digest() != h.config_digest,
        divergence,
    })
}

pub fn replay_text(text: &str, cfg: Option<&SimConfig>) -> Result<ReplayReport, TraceError> {
    replay(&parse_trace(text)?, cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyViolation {
    pub abort_tick: u64,
    pub onset_tick: Option<u64>,
}

/// Every abort must follow its most recent possible violation onset (a
/// disturbance, a step start or an armed constraint) by at most one check
/// period.
pub fn lint_abort_latency(events: &[TraceEvent], period_ticks: u64) -> Vec<LatencyViolation> {
    let mut onset = None;
    let mut out = Vec::new();
    for e in events {
        match &e.event {
            Event::Disturbance { .. } | Event::SkillStart { .. } | Event::Armed { .. } => onset = Some(e.tick),
            Event::Abort { .. } => {
                if !matches!(onset, Some(t) if e.tick - t <= period_ticks) {
                    out.push(LatencyViolation { abort_tick: e.tick, onset_tick: onset });
                }
            }
            _ => {}
        }
    }
    out
}
