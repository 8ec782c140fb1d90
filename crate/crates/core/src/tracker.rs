//! Inactivity state machine and the append-only `events.jsonl` log.
//!
//! The timer starts on the first frame with a person and no motion and stops
//! on motion, when the person leaves, on a not-human vote, or at stream end.
//! Durations come from frame timestamps. While the person is hidden behind a
//! pet the clock is paused (`Held`); the event keeps its true start and end
//! but the paused time is left out of `dur_s`.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::suppression::Verdict;

/// Shorter periods are never logged.
pub const MIN_EVENT_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    NoPerson,
    Active,
    Inactive,
    Held,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndReason {
    Motion,
    PersonLeft,
    NonHumanVote,
    StreamEnd,
}

/// One logged period. Only timestamps and a pseudonymous id: the schema has
/// no field that could carry image data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InactivityEvent {
    pub pid: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub dur_s: f64,
    pub reason: EndReason,
}

impl InactivityEvent {
    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("event serializes");
        s.push('\n');
        s
    }
}

/// What the pipeline observed about one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub human_present: bool,
    pub motion: bool,
    /// Foreground existed but lay wholly under pet boxes.
    pub occluded: bool,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackerState {
    pub phase: Phase,
    pub inactivity_start_ms: Option<u64>,
    pub last_motion_ms: Option<u64>,
    held_since_ms: Option<u64>,
    held_total_ms: u64,
    last_ts_ms: Option<u64>,
    last_index: u64,
}

impl Default for TrackerState {
    fn default() -> Self {
        TrackerState {
            phase: Phase::NoPerson,
            inactivity_start_ms: None,
            last_motion_ms: None,
            held_since_ms: None,
            held_total_ms: 0,
            last_ts_ms: None,
            last_index: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tracker {
    pid: String,
    state: TrackerState,
}

impl Tracker {
    pub fn new(pid: impl Into<String>) -> Self {
        Tracker {
            pid: pid.into(),
            state: TrackerState::default(),
        }
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    /// Advance by one frame. Returns the event closed by this frame, if it
    /// lasted at least a second.
    pub fn step(&mut self, index: u64, ts_ms: u64, obs: Observation) -> Result<Option<InactivityEvent>> {
        if let Some(prev) = self.state.last_ts_ms {
            if ts_ms < prev {
                return Err(Error::NonMonotoneTimestamp {
                    index,
                    prev_ms: prev,
                    ts_ms,
                });
            }
        }
        self.state.last_ts_ms = Some(ts_ms);
        self.state.last_index = index;
        if obs.motion && obs.human_present {
            self.state.last_motion_ms = Some(ts_ms);
        }

        let timing = matches!(self.state.phase, Phase::Inactive | Phase::Held);
        if obs.verdict == Verdict::NotHuman {
            let ev = if timing { self.close(ts_ms, EndReason::NonHumanVote) } else { None };
            self.state.phase = Phase::NoPerson;
            return Ok(ev);
        }
        if obs.occluded && !obs.human_present {
            if self.state.phase == Phase::Inactive {
                self.state.phase = Phase::Held;
                self.state.held_since_ms = Some(ts_ms);
            }
            return Ok(None);
        }
        if self.state.phase == Phase::Held {
            let since = self.state.held_since_ms.take().expect("held has a start");
            self.state.held_total_ms += ts_ms - since;
            self.state.phase = Phase::Inactive;
        }

        let ev = match (obs.human_present, obs.motion, self.state.phase) {
            (false, _, Phase::Inactive) => {
                let ev = self.close(ts_ms, EndReason::PersonLeft);
                self.state.phase = Phase::NoPerson;
                ev
            }
            (false, _, _) => {
                self.state.phase = Phase::NoPerson;
                None
            }
            (true, true, Phase::Inactive) => {
                let ev = self.close(ts_ms, EndReason::Motion);
                self.state.phase = Phase::Active;
                ev
            }
            (true, true, _) => {
                self.state.phase = Phase::Active;
                None
            }
            (true, false, Phase::Inactive) => None,
            (true, false, _) => {
                self.state.phase = Phase::Inactive;
                self.state.inactivity_start_ms = Some(ts_ms);
                self.state.held_total_ms = 0;
                None
            }
        };
        Ok(ev)
    }

    /// Close an open period at the last seen timestamp.
    pub fn finish(&mut self) -> Option<InactivityEvent> {
        let end = self.state.last_ts_ms?;
        if !matches!(self.state.phase, Phase::Inactive | Phase::Held) {
            return None;
        }
        let ev = self.close(end, EndReason::StreamEnd);
        self.state.phase = Phase::NoPerson;
        ev
    }

    fn close(&mut self, end_ms: u64, reason: EndReason) -> Option<InactivityEvent> {
        let start = self.state.inactivity_start_ms.take().expect("timing phase has a start");
        let mut held = self.state.held_total_ms;
        if let Some(since) = self.state.held_since_ms.take() {
            held += end_ms - since;
        }
        self.state.held_total_ms = 0;
        let counted = (end_ms - start).saturating_sub(held);
        if counted < MIN_EVENT_MS {
            return None;
        }
        Some(InactivityEvent {
            pid: self.pid.clone(),
            start_ms: start,
            end_ms,
            dur_s: counted as f64 / 1000.0,
            reason,
        })
    }
}

/// Where log lines go. Each call must write the whole line or fail.
pub trait EventSink {
    fn write_line(&mut self, line: &[u8]) -> io::Result<()>;
    fn sync(&mut self) -> io::Result<()>;
}

#[derive(Debug)]
pub struct FileSink {
    path: PathBuf,
    file: File,
}

impl FileSink {
    /// Open `path` for appending, creating it if needed.
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(FileSink { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventSink for FileSink {
    fn write_line(&mut self, line: &[u8]) -> io::Result<()> {
        // One write per line keeps appends line-atomic for tailing readers.
        self.file.write_all(line)
    }

    fn sync(&mut self) -> io::Result<()> {
        self.file.sync_data()
    }
}

impl EventSink for Vec<u8> {
    fn write_line(&mut self, line: &[u8]) -> io::Result<()> {
        self.extend_from_slice(line);
        Ok(())
    }

    fn sync(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FsyncPolicy {
    #[default]
    Never,
    EveryEvent,
}

/// Append-only event log. Lines that fail to write stay queued and are
/// retried on the next append or flush.
#[derive(Debug)]
pub struct EventLog<S: EventSink = FileSink> {
    sink: S,
    fsync: FsyncPolicy,
    queued: Vec<String>,
    written: u64,
}

impl EventLog<FileSink> {
    pub fn open(path: impl AsRef<Path>, fsync: FsyncPolicy) -> Result<Self> {
        Ok(Self::with_sink(FileSink::append(path)?, fsync))
    }
}

impl<S: EventSink> EventLog<S> {
    pub fn with_sink(sink: S, fsync: FsyncPolicy) -> Self {
        EventLog {
            sink,
            fsync,
            queued: Vec::new(),
            written: 0,
        }
    }

    /// Queue `event` and try to write everything queued. A write failure is
    /// logged and the lines stay queued; it is not an error here.
    pub fn append(&mut self, event: &InactivityEvent) {
        self.queued.push(event.to_json_line());
        if let Err(e) = self.try_flush() {
            log::warn!("event log write failed, {} event(s) queued: {e}", self.queued.len());
        }
    }

    fn try_flush(&mut self) -> io::Result<()> {
        let mut done = 0;
        let res = (|| {
            for line in &self.queued {
                self.sink.write_line(line.as_bytes())?;
                done += 1;
                if self.fsync == FsyncPolicy::EveryEvent {
                    self.sink.sync()?;
                }
            }
            Ok(())
        })();
        self.written += done as u64;
        self.queued.drain(..done);
        res
    }

    /// Write everything queued; fails if anything is still undelivered.
    pub fn flush(&mut self) -> Result<()> {
        self.try_flush()
            .and_then(|_| self.sink.sync())
            .map_err(|e| Error::io("events.jsonl", e))
    }

    pub fn queued(&self) -> usize {
        self.queued.len()
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn into_sink(self) -> S {
        self.sink
    }
}

/// Parse log text. A final line without a newline is an append still in
/// progress and is ignored.
pub fn parse_events(text: &str) -> Result<Vec<InactivityEvent>> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut out = Vec::new();
    for (i, line) in complete.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev: InactivityEvent =
            serde_json::from_str(line).map_err(|e| Error::parse("events.jsonl", i + 1, e.to_string()))?;
        out.push(ev);
    }
    Ok(out)
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<InactivityEvent>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_events(&text)
}
