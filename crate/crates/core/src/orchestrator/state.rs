//! Pipeline state machine and its append-only event log.

use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetRef, Provenance};
use crate::error::{Error, Result};
use crate::monitor::MonitorReport;
use crate::orchestrator::volume::ModelRole;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum State {
    Idle,
    TrainingBaseline,
    Serving,
    Attacked,
    Defending,
    ServingHardened,
    Failed,
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// What happened, serialized as `{"kind": ..., "payload": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    StateEntered {
        state: State,
        served_model_id: Option<String>,
        /// Log index of the trigger being acted on (Defending only).
        trigger: Option<usize>,
        note: Option<String>,
    },
    DatasetUploaded {
        dataset: DatasetRef,
        provenance: Provenance,
        checksum: String,
    },
    MonitorReport(MonitorReport),
    /// Raised by the monitor; `report` is the log index of the triggering
    /// report.
    DefenseTriggered { report: usize },
    ModelStored {
        model_id: String,
        role: ModelRole,
        parent_model_id: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub ts: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

impl EventBody {
    pub fn enter(state: State, served_model_id: Option<String>) -> Self {
        EventBody::StateEntered {
            state,
            served_model_id,
            trigger: None,
            note: None,
        }
    }
}

/// Current pipeline state plus the full event history.
///
/// Every change goes through [`PipelineState::record`], which rejects
/// illegal transitions before anything is appended.
#[derive(Debug, Clone)]
pub struct PipelineState {
    state: State,
    served_model_id: Option<String>,
    events: Vec<Event>,
    log_path: Option<PathBuf>,
}

impl Default for PipelineState {
    fn default() -> Self {
        PipelineState::new()
    }
}

impl PipelineState {
    /// An in-memory pipeline in `Idle`.
    pub fn new() -> Self {
        PipelineState {
            state: State::Idle,
            served_model_id: None,
            events: Vec::new(),
            log_path: None,
        }
    }

    /// A pipeline that also appends every event to a JSON-lines file.
    /// The file must not exist yet.
    pub fn with_log(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if path.exists() {
            return Err(Error::Conflict(format!("event log {}", path.display())));
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
        std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(PipelineState {
            log_path: Some(path),
            ..PipelineState::new()
        })
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn served_model_id(&self) -> Option<&str> {
        self.served_model_id.as_deref()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    /// Log index of a trigger that has not been acted on yet.
    pub fn pending_trigger(&self) -> Option<usize> {
        let consumed: Vec<usize> = self
            .events
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::StateEntered {
                    state: State::Defending,
                    trigger: Some(t),
                    ..
                } => Some(*t),
                _ => None,
            })
            .collect();
        self.events.iter().enumerate().find_map(|(i, e)| match e.body {
            EventBody::DefenseTriggered { .. } if !consumed.contains(&i) => Some(i),
            _ => None,
        })
    }

    /// Checks `body` against the transition rules without applying it.
    pub fn check(&self, body: &EventBody) -> Result<()> {
        let illegal = |msg: String| Err(Error::State(msg));
        if self.state == State::Failed {
            return illegal("pipeline has failed; no further events accepted".into());
        }
        match body {
            EventBody::StateEntered {
                state: to,
                served_model_id,
                trigger,
                ..
            } => {
                let from = self.state;
                let ok = match to {
                    State::Idle => false,
                    State::TrainingBaseline => from == State::Idle,
                    State::Serving => from == State::TrainingBaseline && served_model_id.is_some(),
                    State::Attacked => from == State::Serving,
                    State::Defending => {
                        from == State::Attacked && trigger.is_some() && *trigger == self.pending_trigger()
                    }
                    State::ServingHardened => from == State::Defending && served_model_id.is_some(),
                    State::Failed => true,
                };
                if !ok {
                    return illegal(format!("transition {from} → {to} is not allowed here"));
                }
            }
            EventBody::DefenseTriggered { report } => {
                if self.state != State::Attacked {
                    return illegal(format!("defense can only be triggered while Attacked, not {}", self.state));
                }
                match self.events.get(*report).map(|e| &e.body) {
                    Some(EventBody::MonitorReport(r)) if r.triggered => {}
                    _ => return illegal(format!("event {report} is not a triggered monitor report")),
                }
                let already = self
                    .events
                    .iter()
                    .any(|e| matches!(e.body, EventBody::DefenseTriggered { report: r } if r == *report));
                if already {
                    return illegal(format!("report {report} already raised a trigger"));
                }
            }
            EventBody::DatasetUploaded { .. } | EventBody::MonitorReport(_) | EventBody::ModelStored { .. } => {}
        }
        Ok(())
    }

    fn apply(&mut self, event: Event) {
        if let EventBody::StateEntered {
            state,
            served_model_id,
            ..
        } = &event.body
        {
            self.state = *state;
            if served_model_id.is_some() {
                self.served_model_id = served_model_id.clone();
            }
        }
        self.events.push(event);
    }

    /// Validates, timestamps, persists and applies an event. Returns its log
    /// index.
    pub fn record(&mut self, body: EventBody) -> Result<usize> {
        self.check(&body)?;
        let event = Event { ts: Utc::now(), body };
        if let Some(path) = &self.log_path {
            let mut line = serde_json::to_vec(&event).map_err(|e| Error::json("event", e))?;
            line.push(b'\n');
            let mut f = OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            f.write_all(&line).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        self.apply(event);
        Ok(self.events.len() - 1)
    }

    /// Moves to `Failed`, recording the cause.
    pub fn fail(&mut self, cause: &Error) {
        let body = EventBody::StateEntered {
            state: State::Failed,
            served_model_id: None,
            trigger: None,
            note: Some(cause.to_string()),
        };
        if self.state != State::Failed {
            // a log write failure here leaves the in-memory state authoritative
            if self.record(body.clone()).is_err() {
                self.apply(Event { ts: Utc::now(), body });
            }
        }
    }

    /// Rebuilds a pipeline from its history, re-checking every transition.
    pub fn replay(events: &[Event]) -> Result<Self> {
        let mut p = PipelineState::new();
        for e in events {
            p.check(&e.body)?;
            p.apply(e.clone());
        }
        Ok(p)
    }
}

pub fn read_event_log(path: &Path) -> Result<Vec<Event>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e)))
        .collect()
}
