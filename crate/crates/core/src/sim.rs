//! Deterministic discrete-event rehearsal of a plan.
//!
//! Time is an integer tick counter. Each step draws its duration from the
//! configured range for its action using a seeded ChaCha8 generator, so a
//! `(plan, config)` pair always yields the same trace.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use thiserror::Error;

use crate::plan::{Action, Plan, PlanError};

pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FailureMode {
    SshTimeout,
    TaskFail,
}

impl FailureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureMode::SshTimeout => "SshTimeout",
            FailureMode::TaskFail => "TaskFail",
        }
    }
}

impl fmt::Display for FailureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FailureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SshTimeout" | "ssh_timeout" => Ok(FailureMode::SshTimeout),
            "TaskFail" | "task_fail" => Ok(FailureMode::TaskFail),
            other => Err(format!("unknown failure mode `{other}` (expected SshTimeout or TaskFail)")),
        }
    }
}

/// A failure injection. `pattern` is a step id in which `*` matches any run
/// of characters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub pattern: String,
    pub mode: FailureMode,
}

impl Failure {
    pub fn new(pattern: &str, mode: FailureMode) -> Self {
        Failure { pattern: pattern.to_string(), mode }
    }

    pub fn matches(&self, step_id: &str) -> bool {
        let re = format!("^{}$", self.pattern.split('*').map(regex::escape).collect::<Vec<_>>().join(".*"));
        Regex::new(&re).expect("escaped pattern is a valid regex").is_match(step_id)
    }

    /// SshTimeout only hits WaitSsh steps; TaskFail hits anything.
    fn applies_to(&self, step_id: &str, action: Action) -> bool {
        (self.mode == FailureMode::TaskFail || action == Action::WaitSsh) && self.matches(step_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub provision_latency: RangeInclusive<Tick>,
    pub ssh_ready_latency: RangeInclusive<Tick>,
    pub task_latency: RangeInclusive<Tick>,
    pub failures: Vec<Failure>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            provision_latency: 20..=40,
            ssh_ready_latency: 2..=10,
            task_latency: 1..=5,
            failures: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimConfigError {
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn parse_range(v: &str) -> Result<RangeInclusive<Tick>, String> {
    let num = |s: &str| s.trim().parse::<Tick>().map_err(|_| format!("`{s}` is not a non-negative integer"));
    let (lo, hi) = match v.split_once("..") {
        Some((lo, hi)) => (num(lo)?, num(hi)?),
        None => {
            let n = num(v)?;
            (n, n)
        }
    };
    if lo > hi {
        return Err(format!("range {lo}..{hi} is empty"));
    }
    Ok(lo..=hi)
}

impl SimConfig {
    /// Parses the key-value format:
    ///
    /// ```text
    /// seed = 7
    /// provision_latency = 20..40
    /// ssh_ready_latency = 2..10
    /// task_latency = 1..5
    /// fail = wait_ssh:ec2_vm SshTimeout
    /// ```
    ///
    /// Unset keys keep their defaults; `fail` may repeat.
    pub fn parse_named(file: &str, text: &str) -> Result<Self, SimConfigError> {
        let mut cfg = SimConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let err = |message: String| SimConfigError::Parse { file: file.to_string(), line: i + 1, message };
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            let value = value.trim();
            match key.trim() {
                "seed" => cfg.seed = value.parse().map_err(|_| err(format!("bad seed `{value}`")))?,
                "provision_latency" => cfg.provision_latency = parse_range(value).map_err(err)?,
                "ssh_ready_latency" => cfg.ssh_ready_latency = parse_range(value).map_err(err)?,
                "task_latency" => cfg.task_latency = parse_range(value).map_err(err)?,
                "fail" => {
                    let mut parts = value.split_whitespace();
                    let (Some(pattern), Some(mode), None) = (parts.next(), parts.next(), parts.next()) else {
                        return Err(err("expected `fail = <step pattern> <SshTimeout|TaskFail>`".into()));
                    };
                    cfg.failures.push(Failure::new(pattern, mode.parse().map_err(err)?));
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, SimConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SimConfigError::Io { path: path.display().to_string(), source })?;
        SimConfig::parse_named(&path.display().to_string(), &text)
    }

    fn latency(&self, action: Action) -> RangeInclusive<Tick> {
        match action {
            Action::Provision => self.provision_latency.clone(),
            Action::WaitSsh => self.ssh_ready_latency.clone(),
            _ => self.task_latency.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Begin,
    End,
    Fail,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Begin => "Begin",
            Phase::End => "End",
            Phase::Fail => "Fail",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Begin" => Ok(Phase::Begin),
            "End" => Ok(Phase::End),
            "Fail" => Ok(Phase::Fail),
            other => Err(format!("unknown phase `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub tick: Tick,
    pub step: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Succeeded,
    Failed,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Succeeded => "Succeeded",
            Status::Failed => "Failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventTrace {
    pub events: Vec<Event>,
    pub status: Status,
}

const STATUS_PREFIX: &str = "# status: ";

impl EventTrace {
    /// One `<tick>\t<step>\t<phase>` line per event, then `# status: <status>`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s += &format!("{}\t{}\t{}\n", e.tick, e.step, e.phase);
        }
        s += &format!("{STATUS_PREFIX}{}\n", self.status);
        s
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut events = Vec::new();
        let mut status = None;
        for (i, line) in text.lines().enumerate() {
            if let Some(s) = line.strip_prefix(STATUS_PREFIX) {
                status = Some(match s {
                    "Succeeded" => Status::Succeeded,
                    "Failed" => Status::Failed,
                    other => return Err(format!("line {}: unknown status `{other}`", i + 1)),
                });
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [tick, step, phase] = fields[..] else {
                return Err(format!("line {}: expected three tab-separated fields", i + 1));
            };
            events.push(Event {
                tick: tick.parse().map_err(|_| format!("line {}: bad tick `{tick}`", i + 1))?,
                step: step.to_string(),
                phase: phase.parse().map_err(|e| format!("line {}: {e}", i + 1))?,
            });
        }
        Ok(EventTrace { events, status: status.ok_or("trace has no status line")? })
    }

    pub fn first(&self, step: &str, phase: Phase) -> Option<usize> {
        self.events.iter().position(|e| e.step == step && e.phase == phase)
    }

    pub fn began(&self, step: &str) -> bool {
        self.first(step, Phase::Begin).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Runs the plan. Ready steps begin in id order; several ends at the same
/// tick are processed before any step they release begins. Existing-marker
/// steps take no time and never fail.
pub fn simulate(plan: &Plan, config: &SimConfig) -> Result<EventTrace, SimError> {
    plan.topological_order()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut remaining: BTreeMap<&str, usize> = plan.steps().iter().map(|s| (s.id.as_str(), 0)).collect();
    for e in plan.edges() {
        *remaining.get_mut(e.after.as_str()).expect("edge endpoints exist") += 1;
    }
    let mut ready: BTreeSet<&str> = remaining.iter().filter(|(_, n)| **n == 0).map(|(id, _)| *id).collect();
    // (end tick, step id) → fails
    let mut running: BTreeMap<(Tick, &str), bool> = BTreeMap::new();
    let mut events = Vec::new();
    let mut failed = false;
    let mut now: Tick = 0;

    loop {
        for id in std::mem::take(&mut ready) {
            let step = plan.step(id).expect("ready ids come from the plan");
            events.push(Event { tick: now, step: id.to_string(), phase: Phase::Begin });
            let (duration, fails) = if step.existing {
                (0, false)
            } else {
                let d = rng.gen_range(config.latency(step.action));
                (d, config.failures.iter().any(|f| f.applies_to(id, step.action)))
            };
            running.insert((now + duration, id), fails);
        }
        let Some(((tick, _), _)) = running.first_key_value() else { break };
        now = *tick;
        while let Some(entry) = running.first_entry() {
            if entry.key().0 != now {
                break;
            }
            let ((_, id), fails) = entry.remove_entry();
            if fails {
                failed = true;
                events.push(Event { tick: now, step: id.to_string(), phase: Phase::Fail });
                continue;
            }
            events.push(Event { tick: now, step: id.to_string(), phase: Phase::End });
            for next in plan.successors(id) {
                let n = remaining.get_mut(next).expect("edge endpoints exist");
                *n -= 1;
                if *n == 0 {
                    ready.insert(next);
                }
            }
        }
    }
    Ok(EventTrace { events, status: if failed { Status::Failed } else { Status::Succeeded } })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnknownStep(String),
    TimeReversed { index: usize },
    DuplicatePhase { step: String, phase: Phase },
    TerminalWithoutBegin(String),
    NotFinished(String),
    EdgeViolated { before: String, after: String },
    SkipViolated { step: String, failed: String },
    NotRun(String),
    StatusMismatch { recorded: Status, expected: Status },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownStep(s) => write!(f, "trace names unknown step {s}"),
            Violation::TimeReversed { index } => write!(f, "event {index} goes back in time"),
            Violation::DuplicatePhase { step, phase } => write!(f, "{step} has more than one {phase}"),
            Violation::TerminalWithoutBegin(s) => write!(f, "{s} finished without beginning"),
            Violation::NotFinished(s) => write!(f, "{s} began but never finished"),
            Violation::EdgeViolated { before, after } => write!(f, "edge {before} -> {after}: {after} began before {before} ended"),
            Violation::SkipViolated { step, failed } => write!(f, "{step} ran although {failed} failed"),
            Violation::NotRun(s) => write!(f, "{s} never ran although all its predecessors ended"),
            Violation::StatusMismatch { recorded, expected } => write!(f, "status is {recorded} but should be {expected}"),
        }
    }
}

/// Every way `trace` departs from what `plan` allows; empty means the trace
/// is a valid execution.
pub fn check_trace(trace: &EventTrace, plan: &Plan) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut begin: BTreeMap<&str, usize> = BTreeMap::new();
    let mut end: BTreeMap<&str, usize> = BTreeMap::new();
    let mut fail: BTreeMap<&str, usize> = BTreeMap::new();
    let mut last_tick = 0;
    for (i, e) in trace.events.iter().enumerate() {
        if plan.step(&e.step).is_none() {
            out.push(Violation::UnknownStep(e.step.clone()));
            continue;
        }
        if e.tick < last_tick {
            out.push(Violation::TimeReversed { index: i });
        }
        last_tick = e.tick;
        let slot = match e.phase {
            Phase::Begin => &mut begin,
            Phase::End => &mut end,
            Phase::Fail => &mut fail,
        };
        if slot.insert(e.step.as_str(), i).is_some() {
            out.push(Violation::DuplicatePhase { step: e.step.clone(), phase: e.phase });
        }
    }
    for step in plan.steps() {
        let id = step.id.as_str();
        let terminal: Vec<usize> = end.get(id).into_iter().chain(fail.get(id)).copied().collect();
        if terminal.len() > 1 {
            out.push(Violation::DuplicatePhase { step: step.id.clone(), phase: Phase::Fail });
        }
        match begin.get(id) {
            None if !terminal.is_empty() => out.push(Violation::TerminalWithoutBegin(step.id.clone())),
            Some(_) if terminal.is_empty() => out.push(Violation::NotFinished(step.id.clone())),
            Some(b) if terminal.iter().any(|t| t < b) => out.push(Violation::TerminalWithoutBegin(step.id.clone())),
            _ => {}
        }
    }
    for e in plan.edges() {
        if let Some(&b) = begin.get(e.after.as_str()) {
            if end.get(e.before.as_str()).is_none_or(|&x| x > b) {
                out.push(Violation::EdgeViolated { before: e.before.clone(), after: e.after.clone() });
            }
        }
    }
    for f in fail.keys() {
        for d in plan.descendants(f) {
            if begin.contains_key(d.as_str()) {
                out.push(Violation::SkipViolated { step: d, failed: f.to_string() });
            }
        }
    }
    for step in plan.steps() {
        let id = step.id.as_str();
        if !begin.contains_key(id) && plan.predecessors(id).all(|p| end.contains_key(p)) {
            out.push(Violation::NotRun(step.id.clone()));
        }
    }
    let expected = if fail.is_empty() { Status::Succeeded } else { Status::Failed };
    if trace.status != expected {
        out.push(Violation::StatusMismatch { recorded: trace.status, expected });
    }
    out
}
