//! Human/pet detection behind one interface.
//!
//! Three backends: a stub that replays ground-truth boxes, a precomputed
//! `detections.jsonl` file, and an external process speaking a small line
//! protocol on stdio:
//!
//! ```text
//! > DETECT 42 /tmp/.tmpXYZ.ppm
//! < HUMAN 300 200 80 160 0.97
//! < PET 60 300 48 32 0.81
//! < END
//! ```
//!
//! Requests and answers are decoupled: [`Detector::step`] submits a request
//! when the cadence says so and returns whatever answers have arrived. The
//! file and stub backends answer within the same step; the process backend
//! answers at a later frame boundary and never blocks the caller.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::RgbdFrame;
use crate::image::BBox;
use crate::labels::GroundTruth;

/// Detections below this confidence are dropped.
pub const MIN_CONFIDENCE: f64 = 0.5;

/// Pet mode lasts this long after the last pet detection.
pub const PET_MODE_MS: u64 = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionClass {
    Human,
    Pet,
}

/// One `detections.jsonl` record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub frame: u64,
    #[serde(rename = "class")]
    pub class: DetectionClass,
    pub bbox: BBox,
    pub conf: f64,
}

/// Parse `detections.jsonl` into per-frame lists. Blank lines are skipped.
pub fn parse_detections_jsonl(text: &str) -> Result<BTreeMap<u64, Vec<Detection>>> {
    let mut out: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let d: Detection =
            serde_json::from_str(line).map_err(|e| Error::parse("detections.jsonl", i + 1, e.to_string()))?;
        if !d.conf.is_finite() || !(0.0..=1.0).contains(&d.conf) {
            return Err(Error::parse("detections.jsonl", i + 1, "conf must be in [0, 1]"));
        }
        out.entry(d.frame).or_default().push(d);
    }
    Ok(out)
}

pub fn write_detections_jsonl(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        s.push_str(&serde_json::to_string(d).expect("detection serializes"));
        s.push('\n');
    }
    s
}

/// One line of a detector process's answer.
#[derive(Debug, Clone, PartialEq)]
pub enum ResponseLine {
    Detection { class: DetectionClass, bbox: BBox, conf: f64 },
    End,
}

pub fn parse_response_line(line: &str) -> Result<ResponseLine, String> {
    let mut it = line.split_ascii_whitespace();
    let class = match it.next() {
        Some("END") => {
            return match it.next() {
                None => Ok(ResponseLine::End),
                Some(_) => Err("trailing fields after END".into()),
            }
        }
        Some("HUMAN") => DetectionClass::Human,
        Some("PET") => DetectionClass::Pet,
        Some(other) => return Err(format!("unknown response `{other}`")),
        None => return Err("empty response line".into()),
    };
    let mut nums = [0u32; 4];
    for n in nums.iter_mut() {
        let tok = it.next().ok_or("missing bbox field")?;
        *n = tok.parse().map_err(|_| format!("bad bbox field `{tok}`"))?;
    }
    let tok = it.next().ok_or("missing confidence")?;
    let conf: f64 = tok.parse().map_err(|_| format!("bad confidence `{tok}`"))?;
    if !conf.is_finite() || !(0.0..=1.0).contains(&conf) {
        return Err(format!("confidence {conf} outside [0, 1]"));
    }
    if it.next().is_some() {
        return Err("trailing fields".into());
    }
    Ok(ResponseLine::Detection {
        class,
        bbox: BBox::from(nums),
        conf,
    })
}

/// Answer to one request.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub frame: u64,
    /// Whether the request was a periodic (vote-bearing) one.
    pub periodic: bool,
    pub detections: Vec<Detection>,
}

impl Delivery {
    pub fn humans(&self) -> impl Iterator<Item = &Detection> {
        self.detections.iter().filter(|d| d.class == DetectionClass::Human)
    }

    pub fn pets(&self) -> impl Iterator<Item = &Detection> {
        self.detections.iter().filter(|d| d.class == DetectionClass::Pet)
    }
}

pub trait DetectorBackend: Send {
    /// Start detection on `frame`. Only called when not [`busy`](Self::busy).
    fn submit(&mut self, frame: &RgbdFrame) -> Result<()>;

    /// Completed answers, as `(frame, detections)`, oldest first.
    fn collect(&mut self) -> Vec<(u64, Vec<Detection>)>;

    fn busy(&self) -> bool {
        false
    }

    /// Warnings raised since the last call.
    fn take_warnings(&mut self) -> Vec<String> {
        Vec::new()
    }
}

/// Replays boxes keyed by frame index.
#[derive(Debug, Clone, Default)]
pub struct TableBackend {
    table: BTreeMap<u64, Vec<Detection>>,
    ready: VecDeque<(u64, Vec<Detection>)>,
}

impl TableBackend {
    pub fn new(table: BTreeMap<u64, Vec<Detection>>) -> Self {
        TableBackend {
            table,
            ready: VecDeque::new(),
        }
    }

    /// Oracle detector: every labeled person and pet box, confidence 1.
    pub fn from_ground_truth(gt: &GroundTruth) -> Self {
        let mut table: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
        let boxes = [
            (DetectionClass::Human, &gt.person_boxes),
            (DetectionClass::Pet, &gt.pet_boxes),
        ];
        for (class, map) in boxes {
            for (&frame, bbs) in map {
                table.entry(frame).or_default().extend(bbs.iter().map(|&bbox| Detection {
                    frame,
                    class,
                    bbox,
                    conf: 1.0,
                }));
            }
        }
        Self::new(table)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(parse_detections_jsonl(&text)?))
    }

    pub fn lookup(&self, frame: u64) -> Vec<Detection> {
        self.table.get(&frame).cloned().unwrap_or_default()
    }
}

impl DetectorBackend for TableBackend {
    fn submit(&mut self, frame: &RgbdFrame) -> Result<()> {
        let dets = self.lookup(frame.index);
        self.ready.push_back((frame.index, dets));
        Ok(())
    }

    fn collect(&mut self) -> Vec<(u64, Vec<Detection>)> {
        self.ready.drain(..).collect()
    }
}

enum Reply {
    Answer(Vec<Detection>),
    Malformed(String),
}

/// External detector process. At most one request is outstanding; if the
/// process dies, the pending request resolves to no detections and every
/// later request is answered empty.
pub struct ProcessBackend {
    child: Child,
    stdin: Option<ChildStdin>,
    replies: Receiver<Reply>,
    pending: Option<(u64, tempfile::TempPath)>,
    dead: bool,
    ready: VecDeque<(u64, Vec<Detection>)>,
    warnings: Vec<String>,
}

impl ProcessBackend {
    /// Spawn `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Detector(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut current = Vec::new();
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                let msg = match parse_response_line(&line) {
                    Ok(ResponseLine::End) => Reply::Answer(std::mem::take(&mut current)),
                    Ok(ResponseLine::Detection { class, bbox, conf }) => {
                        current.push(Detection {
                            frame: 0,
                            class,
                            bbox,
                            conf,
                        });
                        continue;
                    }
                    Err(e) => Reply::Malformed(format!("{e}: `{line}`")),
                };
                if tx.send(msg).is_err() {
                    break;
                }
            }
        });
        Ok(ProcessBackend {
            child,
            stdin,
            replies: rx,
            pending: None,
            dead: false,
            ready: VecDeque::new(),
            warnings: Vec::new(),
        })
    }

    fn die(&mut self, why: String) {
        if self.dead {
            return;
        }
        self.dead = true;
        self.stdin = None;
        log::warn!("detector process unavailable: {why}");
        self.warnings.push(format!("detector process unavailable: {why}"));
        if let Some((frame, _)) = self.pending.take() {
            self.ready.push_back((frame, Vec::new()));
        }
    }

    fn drain_replies(&mut self) {
        loop {
            match self.replies.try_recv() {
                Ok(Reply::Answer(mut dets)) => match self.pending.take() {
                    Some((frame, _ppm)) => {
                        for d in dets.iter_mut() {
                            d.frame = frame;
                        }
                        self.ready.push_back((frame, dets));
                    }
                    None => self.warnings.push("unsolicited detector answer ignored".into()),
                },
                Ok(Reply::Malformed(msg)) => {
                    log::warn!("detector protocol error: {msg}");
                    self.warnings.push(format!("detector protocol error: {msg}"));
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    self.die("output closed".into());
                    break;
                }
            }
        }
    }
}

impl DetectorBackend for ProcessBackend {
    fn submit(&mut self, frame: &RgbdFrame) -> Result<()> {
        if self.dead {
            self.ready.push_back((frame.index, Vec::new()));
            return Ok(());
        }
        let mut tmp = tempfile::Builder::new()
            .suffix(".ppm")
            .tempfile()
            .map_err(|e| Error::Detector(format!("temp file: {e}")))?;
        tmp.write_all(&frame.to_ppm())
            .map_err(|e| Error::io(tmp.path(), e))?;
        let path = tmp.into_temp_path();
        let line = format!("DETECT {} {}\n", frame.index, path.display());
        self.pending = Some((frame.index, path));
        let sent = match self.stdin.as_mut() {
            Some(s) => s.write_all(line.as_bytes()).and_then(|_| s.flush()),
            None => Err(std::io::ErrorKind::BrokenPipe.into()),
        };
        if let Err(e) = sent {
            self.die(format!("write failed: {e}"));
        }
        Ok(())
    }

    fn collect(&mut self) -> Vec<(u64, Vec<Detection>)> {
        self.drain_replies();
        self.ready.drain(..).collect()
    }

    fn busy(&self) -> bool {
        self.pending.is_some()
    }

    fn take_warnings(&mut self) -> Vec<String> {
        std::mem::take(&mut self.warnings)
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Detector cadence: one periodic request per period, plus a request on
/// every frame while a pet was seen within [`PET_MODE_MS`].
#[derive(Debug, Clone)]
pub struct Schedule {
    period_ms: u64,
    next_due_ms: Option<u64>,
    last_pet_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestKind {
    Periodic,
    PetMode,
}

impl Schedule {
    pub fn new(period_s: f64) -> Self {
        Schedule {
            period_ms: ((period_s * 1000.0).round() as u64).max(1),
            next_due_ms: None,
            last_pet_ms: None,
        }
    }

    pub fn pet_mode(&self, now_ms: u64) -> bool {
        self.last_pet_ms.is_some_and(|t| now_ms < t + PET_MODE_MS)
    }

    /// What kind of request, if any, is due at `now_ms`. Periodic
    /// requests keep their phase: the next one is due a whole number of
    /// periods after the first.
    pub fn poll(&mut self, now_ms: u64) -> Option<RequestKind> {
        let due = self.next_due_ms.is_none_or(|d| now_ms >= d);
        if due {
            let mut next = self.next_due_ms.unwrap_or(now_ms);
            while next <= now_ms {
                next += self.period_ms;
            }
            self.next_due_ms = Some(next);
            Some(RequestKind::Periodic)
        } else if self.pet_mode(now_ms) {
            Some(RequestKind::PetMode)
        } else {
            None
        }
    }

    /// Put a periodic request back when it could not be submitted.
    pub fn defer(&mut self, now_ms: u64) {
        self.next_due_ms = Some(now_ms);
    }

    pub fn saw_pet(&mut self, at_ms: u64) {
        self.last_pet_ms = Some(self.last_pet_ms.map_or(at_ms, |t| t.max(at_ms)));
    }
}

/// A backend plus its cadence.
pub struct Detector {
    backend: Box<dyn DetectorBackend>,
    schedule: Schedule,
    /// Request kind and timestamp of requests in flight, by frame.
    in_flight: BTreeMap<u64, (RequestKind, u64)>,
    requests: u64,
    warnings: Vec<String>,
}

impl Detector {
    pub fn new(backend: Box<dyn DetectorBackend>, period_s: f64) -> Self {
        Detector {
            backend,
            schedule: Schedule::new(period_s),
            in_flight: BTreeMap::new(),
            requests: 0,
            warnings: Vec::new(),
        }
    }

    /// Submit a request for `frame` if one is due, then return every
    /// answer that has arrived, confidence-filtered.
    pub fn step(&mut self, frame: &RgbdFrame) -> Result<Vec<Delivery>> {
        let now = frame.timestamp_ms;
        if let Some(kind) = self.schedule.poll(now) {
            if self.backend.busy() {
                if kind == RequestKind::Periodic {
                    self.schedule.defer(now);
                }
            } else {
                self.backend.submit(frame)?;
                self.in_flight.insert(frame.index, (kind, now));
                self.requests += 1;
            }
        }
        let mut out = Vec::new();
        for (f, dets) in self.backend.collect() {
            let (kind, at) = self.in_flight.remove(&f).unwrap_or((RequestKind::PetMode, now));
            let detections: Vec<Detection> = dets.into_iter().filter(|d| d.conf >= MIN_CONFIDENCE).collect();
            if detections.iter().any(|d| d.class == DetectionClass::Pet) {
                self.schedule.saw_pet(at);
            }
            out.push(Delivery {
                frame: f,
                periodic: kind == RequestKind::Periodic,
                detections,
            });
        }
        self.warnings.extend(self.backend.take_warnings());
        Ok(out)
    }

    pub fn requests(&self) -> u64 {
        self.requests
    }

    pub fn pet_mode(&self, now_ms: u64) -> bool {
        self.schedule.pet_mode(now_ms)
    }

    pub fn take_warnings(&mut self) -> Vec<String> {
        std::mem::take(&mut self.warnings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(index: u64, ts: u64) -> RgbdFrame {
        RgbdFrame::zeros(index, ts, 32, 32).unwrap()
    }

    #[test]
    fn response_lines() {
        assert_eq!(parse_response_line("END"), Ok(ResponseLine::End));
        assert_eq!(
            parse_response_line("HUMAN 1 2 3 4 0.9"),
            Ok(ResponseLine::Detection {
                class: DetectionClass::Human,
                bbox: BBox::new(1, 2, 3, 4),
                conf: 0.9
            })
        );
        for bad in ["", "CAT 1 2 3 4 0.5", "PET 1 2 3 0.5", "PET 1 2 3 4 1.5", "PET 1 2 3 4 0.5 x", "END now", "PET -1 2 3 4 0.5"] {
            assert!(parse_response_line(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn detections_file_round_trip() {
        let dets = vec![
            Detection {
                frame: 3,
                class: DetectionClass::Pet,
                bbox: BBox::new(1, 2, 3, 4),
                conf: 0.75,
            },
            Detection {
                frame: 3,
                class: DetectionClass::Human,
                bbox: BBox::new(5, 6, 7, 8),
                conf: 1.0,
            },
        ];
        let text = write_detections_jsonl(&dets);
        assert!(text.contains(r#""class":"pet""#));
        let table = parse_detections_jsonl(&text).unwrap();
        assert_eq!(table[&3], dets);
        assert!(parse_detections_jsonl(r#"{"frame":1,"class":"dog","bbox":[0,0,1,1],"conf":1}"#).is_err());
        assert!(parse_detections_jsonl(r#"{"frame":1,"class":"pet","bbox":[0,0,1,1],"conf":1,"x":0}"#).is_err());
    }

    #[test]
    fn file_backend_missing_frame_is_empty() {
        let mut b = TableBackend::new(BTreeMap::new());
        b.submit(&frame(7, 0)).unwrap();
        assert_eq!(b.collect(), vec![(7, vec![])]);
    }

    #[test]
    fn stub_passes_boxes_through() {
        let mut gt = GroundTruth::default();
        gt.person_boxes.insert(2, vec![BBox::new(10, 20, 30, 40)]);
        let b = TableBackend::from_ground_truth(&gt);
        assert_eq!(
            b.lookup(2),
            vec![Detection {
                frame: 2,
                class: DetectionClass::Human,
                bbox: BBox::new(10, 20, 30, 40),
                conf: 1.0
            }]
        );
        assert!(b.lookup(3).is_empty());
    }

    #[test]
    fn cadence_normal_mode() {
        // 4 fps for 95 s.
        let mut s = Schedule::new(10.0);
        let n = (0..380).filter(|i| s.poll(i * 250).is_some()).count();
        assert_eq!(n, 10);
    }

    #[test]
    fn cadence_with_jittered_timestamps() {
        let mut s = Schedule::new(10.0);
        let mut t = 0;
        let mut n = 0;
        for i in 0..2000u64 {
            t += 200 + (i * 7919 % 101);
            if s.poll(t).is_some() {
                n += 1;
            }
        }
        let expect = (t as f64 / 10_000.0).ceil() as i64;
        assert!((n as i64 - expect).abs() <= 1, "{n} vs {expect}");
    }

    #[test]
    fn pet_mode_runs_every_frame_for_a_minute() {
        let mut gt = GroundTruth::default();
        gt.pet_boxes.insert(0, vec![BBox::new(0, 0, 2, 2)]);
        let mut d = Detector::new(Box::new(TableBackend::from_ground_truth(&gt)), 10.0);
        let mut calls = 0;
        for i in 0..400u64 {
            let out = d.step(&frame(i, i * 250)).unwrap();
            calls += out.len();
            if i == 0 {
                assert!(out[0].periodic);
                assert_eq!(out[0].pets().count(), 1);
            }
        }
        // 240 frames of pet mode, then periodic requests at 60, 70, 80, 90 s.
        assert_eq!(calls, 240 + 4);
        assert!(!d.pet_mode(100_000));
    }

    #[test]
    fn low_confidence_dropped() {
        let mut table = BTreeMap::new();
        table.insert(
            0,
            vec![Detection {
                frame: 0,
                class: DetectionClass::Human,
                bbox: BBox::new(0, 0, 1, 1),
                conf: 0.49,
            }],
        );
        let mut d = Detector::new(Box::new(TableBackend::new(table)), 10.0);
        let out = d.step(&frame(0, 0)).unwrap();
        assert!(out[0].detections.is_empty());
    }

    fn wait_for(d: &mut Detector, frame0: u64) -> Vec<Delivery> {
        for i in 0..500 {
            let out = d.step(&frame(frame0 + i, (frame0 + i) * 250)).unwrap();
            if !out.is_empty() {
                return out;
            }
            thread::sleep(std::time::Duration::from_millis(10));
        }
        panic!("no answer");
    }

    #[test]
    fn process_backend_answers_later() {
        let cmd = r#"while read verb idx path; do test -s "$path" && echo "HUMAN 1 2 3 4 0.9"; echo "PET 0 0 1 1 0.2"; echo END; done"#;
        let mut d = Detector::new(Box::new(ProcessBackend::spawn(cmd).unwrap()), 10.0);
        let out = wait_for(&mut d, 0);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].frame, 0);
        assert!(out[0].periodic);
        // Low-confidence pet filtered, human kept and stamped with its frame.
        assert_eq!(out[0].detections.len(), 1);
        assert_eq!(out[0].detections[0].frame, 0);
        assert_eq!(d.requests(), 1);
    }

    #[test]
    fn killed_process_resolves_empty() {
        let mut d = Detector::new(Box::new(ProcessBackend::spawn("read line; exit 0").unwrap()), 10.0);
        let out = wait_for(&mut d, 0);
        assert_eq!(out[0].frame, 0);
        assert!(out[0].detections.is_empty());
        assert!(!d.take_warnings().is_empty());
        // Later requests keep being answered, empty.
        let out = d.step(&frame(100, 100 * 250)).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].detections.is_empty());
    }

    #[test]
    fn silent_process_never_blocks() {
        let mut d = Detector::new(Box::new(ProcessBackend::spawn("sleep 30").unwrap()), 0.25);
        for i in 0..20 {
            assert!(d.step(&frame(i, i * 250)).unwrap().is_empty());
        }
        assert_eq!(d.requests(), 1);
    }

    proptest! {
        #[test]
        fn cadence_within_one_request(period in 2.0f64..30.0, fps in 3.0f64..5.0, secs in 10u64..600) {
            let mut s = Schedule::new(period);
            let frames = (secs as f64 * fps) as u64;
            let n = (0..frames).filter(|&i| s.poll((i as f64 * 1000.0 / fps) as u64).is_some()).count() as i64;
            let span_s = (frames - 1) as f64 / fps;
            let expect = (span_s / period).ceil() as i64;
            prop_assert!((n - expect).abs() <= 1, "{} vs {}", n, expect);
        }

        #[test]
        fn table_backend_is_pure(frames in prop::collection::vec(0u64..50, 1..20)) {
            let mut gt = GroundTruth::default();
            for f in (0..50).step_by(3) {
                gt.person_boxes.insert(f, vec![BBox::new(f as u32, 0, 4, 4)]);
            }
            let a = TableBackend::from_ground_truth(&gt);
            let b = TableBackend::from_ground_truth(&gt);
            for f in frames {
                prop_assert_eq!(a.lookup(f), b.lookup(f));
                prop_assert_eq!(a.lookup(f), a.lookup(f));
            }
        }
    }
}
