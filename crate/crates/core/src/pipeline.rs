//! Frame-by-frame processing: foreground, background update, region
//! growing, the human/non-human vote, pet exclusion, motion and the
//! inactivity tracker.
//!
//! The first `n_history` frames initialise the background and are reported
//! as empty. Motion is decided two frames late (temporal median), so states
//! and tracker steps are emitted for frame `t - 2` when frame `t` arrives;
//! [`Pipeline::finish`] drains the rest.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::background::{BackgroundModel, BackgroundParams, ForegroundMask};
use crate::config::PipelineConfig;
use crate::detector::{Delivery, Detector};
use crate::error::{Error, Result};
use crate::frame::{RgbdFrame, SequenceReader};
use crate::image::BBox;
use crate::motion::{self, MotionFilter, MotionMask, MotionParams};
use crate::suppression::{self, GrowthParams, Verdict, VoteSample, VoteState};
use crate::tracker::{EventLog, FsyncPolicy, InactivityEvent, Observation, Tracker};

/// Per-frame output, one `states.jsonl` line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameState {
    pub frame: u64,
    pub t_ms: u64,
    pub human: bool,
    pub motion: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Options {
    pub pet_exclusion: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options { pet_exclusion: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub states: Vec<FrameState>,
    pub events: Vec<InactivityEvent>,
}

impl StepOutput {
    fn extend(&mut self, other: StepOutput) {
        self.states.extend(other.states);
        self.events.extend(other.events);
    }
}

/// Image-derived state held between frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Retained {
    pub depth_frames: usize,
    pub color_frames: usize,
    pub masks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedAudit {
    pub peak: Retained,
    pub bound: Retained,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub frames: u64,
    pub width: usize,
    pub height: usize,
    /// Frames per second of pipeline processing time.
    pub fps: f64,
    /// Frames per second including reading frames and writing outputs.
    pub wall_fps: f64,
    pub processing_s: f64,
    /// Total milliseconds per stage.
    pub stage_ms: BTreeMap<String, f64>,
    pub retained: RetainedAudit,
    pub detector_requests: u64,
    pub events: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    frame: u64,
    t_ms: u64,
    human: bool,
    occluded: bool,
    verdict: Verdict,
}

const STAGES: [&str; 7] = ["smooth+detect", "update", "detector+vote", "grow", "pets", "motion", "tracker"];

pub struct Pipeline {
    cfg: PipelineConfig,
    opts: Options,
    width: usize,
    height: usize,
    bg_params: BackgroundParams,
    growth: GrowthParams,
    init: Vec<Vec<u16>>,
    model: Option<BackgroundModel>,
    detector: Detector,
    vote: VoteState,
    motion: MotionFilter,
    prev_color: Option<Vec<u8>>,
    pet_boxes: Vec<BBox>,
    prev_pet_boxes: Vec<BBox>,
    pending: VecDeque<Pending>,
    tracker: Tracker,
    last: Option<(u64, u64)>,
    frames: u64,
    stage_ns: [u128; STAGES.len()],
    processing_ns: u128,
    peak: Retained,
    warnings: Vec<String>,
    finished: bool,
}

impl Pipeline {
    pub fn new(
        cfg: PipelineConfig,
        width: usize,
        height: usize,
        participant_id: &str,
        detector: Detector,
        opts: Options,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Pipeline {
            bg_params: BackgroundParams::from_config(&cfg, width, height),
            growth: GrowthParams::from_config(&cfg),
            vote: VoteState::from_config(&cfg),
            motion: MotionFilter::new(MotionParams::from_config(&cfg), width, height),
            tracker: Tracker::new(participant_id),
            cfg,
            opts,
            width,
            height,
            init: Vec::new(),
            model: None,
            detector,
            prev_color: None,
            pet_boxes: Vec::new(),
            prev_pet_boxes: Vec::new(),
            pending: VecDeque::new(),
            last: None,
            frames: 0,
            stage_ns: [0; STAGES.len()],
            processing_ns: 0,
            peak: Retained::default(),
            warnings: Vec::new(),
            finished: false,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Image-derived state currently held.
    pub fn retained(&self) -> Retained {
        let depth_frames = match &self.model {
            Some(m) => m.retained_depth_frames(),
            None => self.init.len(),
        };
        Retained {
            depth_frames,
            color_frames: self.prev_color.is_some() as usize,
            masks: self.model.as_ref().map_or(0, |m| m.recent().count()) + self.motion.retained_masks(),
        }
    }

    /// The most the pipeline may hold: the background history plus the
    /// working depth frame, two color frames and seven masks.
    pub fn retained_bound(&self) -> Retained {
        Retained {
            depth_frames: self.cfg.n_history + 1,
            color_frames: 2,
            masks: 2 + self.motion.params().temporal_window,
        }
    }

    fn note_peak(&mut self, extra_color: usize) {
        let mut r = self.retained();
        r.color_frames += extra_color;
        self.peak.depth_frames = self.peak.depth_frames.max(r.depth_frames);
        self.peak.color_frames = self.peak.color_frames.max(r.color_frames);
        self.peak.masks = self.peak.masks.max(r.masks);
    }

    fn timed<T>(&mut self, stage: usize, f: impl FnOnce(&mut Self) -> T) -> T {
        let t = Instant::now();
        let out = f(self);
        self.stage_ns[stage] += t.elapsed().as_nanos();
        out
    }

    /// Process one frame.
    pub fn push(&mut self, frame: RgbdFrame) -> Result<StepOutput> {
        let started = Instant::now();
        let out = self.push_inner(frame);
        self.processing_ns += started.elapsed().as_nanos();
        out
    }

    fn push_inner(&mut self, frame: RgbdFrame) -> Result<StepOutput> {
        if self.finished {
            return Err(Error::Frame {
                index: frame.index,
                msg: "pipeline already finished".into(),
            });
        }
        if frame.width() != self.width || frame.height() != self.height {
            return Err(Error::Dimensions(format!(
                "frame {} is {}x{}, pipeline is {}x{}",
                frame.index,
                frame.width(),
                frame.height(),
                self.width,
                self.height
            )));
        }
        if let Some((_, prev)) = self.last {
            if frame.timestamp_ms < prev {
                return Err(Error::NonMonotoneTimestamp {
                    index: frame.index,
                    prev_ms: prev,
                    ts_ms: frame.timestamp_ms,
                });
            }
        }
        self.last = Some((frame.index, frame.timestamp_ms));
        self.frames += 1;

        if self.model.is_none() {
            return self.warm_up(frame);
        }
        self.note_peak(1);

        let t_ms = frame.timestamp_ms;
        let fg = self.timed(0, |p| p.model.as_mut().expect("initialised").detect_foreground(frame.depth()));
        self.timed(1, |p| p.model.as_mut().expect("initialised").update_background(&fg.mask));

        let grown = self.timed(3, |p| {
            let model = p.model.as_ref().expect("initialised");
            let recent: Vec<&ForegroundMask> = model.recent().collect();
            suppression::grow_foreground(&fg, model.current_depth(), &p.growth, &recent)
        });

        let (grown, verdict) = self.timed(2, |p| p.detect_and_vote(&frame, grown))?;
        self.model.as_mut().expect("initialised").accept(grown.clone());

        let (fg_final, occluded, motion_fg) = self.timed(4, |p| {
            if !p.opts.pet_exclusion || (p.pet_boxes.is_empty() && p.prev_pet_boxes.is_empty()) {
                let m = grown.mask.clone();
                return (grown, false, m);
            }
            let depth = p.model.as_ref().expect("initialised").current_depth();
            let ex = suppression::exclude_pets(&grown, &p.pet_boxes, depth);
            let mut motion_fg = ex.fg.mask.clone();
            for b in &p.prev_pet_boxes {
                motion_fg.fill_rect(b, false);
            }
            (ex.fg, ex.occluded, motion_fg)
        });

        let filtered = self.timed(5, |p| {
            let prev = p.prev_color.as_deref().expect("set during warm-up");
            let raw = motion::raw_motion_color(frame.color(), prev, &motion_fg, p.cfg.theta);
            p.motion.push(frame.index, &raw, &motion_fg)
        });

        self.pending.push_back(Pending {
            frame: frame.index,
            t_ms,
            human: !fg_final.is_empty(),
            occluded,
            verdict,
        });
        self.prev_pet_boxes.clone_from(&self.pet_boxes);
        self.prev_color = Some(frame.color().to_vec());
        drop(frame);
        self.note_peak(0);

        let mut out = StepOutput::default();
        if let Some(m) = filtered {
            out.extend(self.timed(6, |p| p.emit(m))?);
        }
        Ok(out)
    }

    fn warm_up(&mut self, frame: RgbdFrame) -> Result<StepOutput> {
        self.init.push(frame.depth().to_vec());
        self.prev_color = Some(frame.color().to_vec());
        self.note_peak(0);
        if self.init.len() == self.cfg.n_history {
            let refs: Vec<&[u16]> = self.init.iter().map(|v| v.as_slice()).collect();
            let model = BackgroundModel::init(&refs, self.width, self.height, self.bg_params.clone())
                .map_err(|e| Error::Frame {
                    index: frame.index,
                    msg: e.to_string(),
                })?;
            self.model = Some(model);
            self.init = Vec::new();
        }
        let obs = Observation {
            human_present: false,
            motion: false,
            occluded: false,
            verdict: Verdict::Undecided,
        };
        let ev = self.tracker.step(frame.index, frame.timestamp_ms, obs)?;
        Ok(StepOutput {
            states: vec![FrameState {
                frame: frame.index,
                t_ms: frame.timestamp_ms,
                human: false,
                motion: false,
            }],
            events: ev.into_iter().collect(),
        })
    }

    /// Run the detector, fold periodic answers into the vote, and purge the
    /// foreground into the background on a not-human verdict.
    fn detect_and_vote(&mut self, frame: &RgbdFrame, mut grown: ForegroundMask) -> Result<(ForegroundMask, Verdict)> {
        let deliveries = self.detector.step(frame)?;
        for w in self.detector.take_warnings() {
            if !self.warnings.contains(&w) {
                self.warnings.push(w);
            }
        }
        let mut verdict = Verdict::Undecided;
        if grown.is_empty() {
            self.vote.reset();
        }
        for d in &deliveries {
            self.pet_boxes = d.pets().map(|p| p.bbox).collect();
            if d.periodic && !grown.is_empty() {
                verdict = self.vote.vote_step(sample_for(d, &grown), frame.timestamp_ms);
            }
        }
        if verdict == Verdict::NotHuman {
            log::debug!("frame {}: foreground voted not human, merged into background", frame.index);
            self.model.as_mut().expect("initialised").merge_into_background(&grown.mask);
            self.vote.reset();
            grown = ForegroundMask::empty(self.width, self.height);
        }
        Ok((grown, verdict))
    }

    fn emit(&mut self, m: MotionMask) -> Result<StepOutput> {
        let p = self.pending.pop_front().expect("one pending frame per motion output");
        debug_assert_eq!(p.frame, m.frame);
        let motion = p.human && motion::has_motion(&m, self.cfg.min_motion_pixels);
        let obs = Observation {
            human_present: p.human,
            motion,
            occluded: p.occluded,
            verdict: p.verdict,
        };
        let ev = self.tracker.step(p.frame, p.t_ms, obs)?;
        Ok(StepOutput {
            states: vec![FrameState {
                frame: p.frame,
                t_ms: p.t_ms,
                human: p.human,
                motion,
            }],
            events: ev.into_iter().collect(),
        })
    }

    /// Drain the motion filter and close any open inactivity period.
    pub fn finish(&mut self) -> Result<StepOutput> {
        let started = Instant::now();
        let mut out = StepOutput::default();
        if !self.finished {
            self.finished = true;
            for m in self.motion.flush() {
                out.extend(self.emit(m)?);
            }
            out.events.extend(self.tracker.finish());
        }
        self.processing_ns += started.elapsed().as_nanos();
        Ok(out)
    }

    pub fn stage_ms(&self) -> BTreeMap<String, f64> {
        STAGES
            .iter()
            .zip(self.stage_ns)
            .map(|(s, ns)| (s.to_string(), ns as f64 / 1e6))
            .collect()
    }

    pub fn processing_s(&self) -> f64 {
        self.processing_ns as f64 / 1e9
    }

    pub fn audit(&self) -> RetainedAudit {
        let bound = self.retained_bound();
        RetainedAudit {
            peak: self.peak,
            within_bound: self.peak.depth_frames <= bound.depth_frames
                && self.peak.color_frames <= bound.color_frames
                && self.peak.masks <= bound.masks,
            bound,
        }
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn detector_requests(&self) -> u64 {
        self.detector.requests()
    }
}

/// A periodic answer votes human when a human box touches the foreground.
fn sample_for(d: &Delivery, fg: &ForegroundMask) -> VoteSample {
    let touches = d
        .humans()
        .any(|h| fg.blobs.iter().any(|b| !h.bbox.intersection(&b.bbox).is_empty()));
    if touches {
        VoteSample::Human
    } else {
        VoteSample::NotHuman
    }
}

/// Run a whole frame source through a pipeline, collecting everything in
/// memory.
pub fn run_frames(
    frames: impl IntoIterator<Item = Result<RgbdFrame>>,
    mut pipeline: Pipeline,
) -> Result<(Vec<FrameState>, Vec<InactivityEvent>, Pipeline)> {
    let mut out = StepOutput::default();
    for f in frames {
        out.extend(pipeline.push(f?)?);
    }
    out.extend(pipeline.finish()?);
    Ok((out.states, out.events, pipeline))
}

/// Output locations for [`run_sequence`].
#[derive(Debug, Clone)]
pub struct RunOutputs<'a> {
    pub events: &'a Path,
    pub states: Option<&'a Path>,
    pub fsync: FsyncPolicy,
}

/// Process a sequence directory, streaming events and per-frame states to
/// disk as they are produced. Existing output files are replaced.
pub fn run_sequence(
    dir: impl AsRef<Path>,
    cfg: PipelineConfig,
    detector: Detector,
    opts: Options,
    outputs: &RunOutputs,
) -> Result<RunReport> {
    let wall = Instant::now();
    let reader = SequenceReader::open(dir)?;
    let m = reader.manifest().clone();
    let mut pipeline = Pipeline::new(cfg, m.width, m.height, &m.participant_id, detector, opts)?;

    File::create(outputs.events).map_err(|e| Error::io(outputs.events, e))?;
    let mut log = EventLog::open(outputs.events, outputs.fsync)?;
    let mut states = match outputs.states {
        Some(p) => Some((p, BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?))),
        None => None,
    };
    let mut n_events = 0;
    let mut write = |out: StepOutput, log: &mut EventLog| -> Result<()> {
        for e in &out.events {
            log.append(e);
        }
        n_events += out.events.len();
        if let Some((p, w)) = states.as_mut() {
            for s in &out.states {
                let line = serde_json::to_string(s).expect("state serializes");
                writeln!(w, "{line}").map_err(|e| Error::io(*p, e))?;
            }
        }
        Ok(())
    };
    for f in reader {
        let out = pipeline.push(f?)?;
        write(out, &mut log)?;
    }
    let out = pipeline.finish()?;
    write(out, &mut log)?;
    log.flush()?;
    if let Some((p, mut w)) = states {
        w.flush().map_err(|e| Error::io(p, e))?;
    }

    let frames = pipeline.frames();
    let processing_s = pipeline.processing_s();
    let wall_s = wall.elapsed().as_secs_f64();
    Ok(RunReport {
        frames,
        width: m.width,
        height: m.height,
        fps: if processing_s > 0.0 { frames as f64 / processing_s } else { 0.0 },
        wall_fps: if wall_s > 0.0 { frames as f64 / wall_s } else { 0.0 },
        processing_s,
        stage_ms: pipeline.stage_ms(),
        retained: pipeline.audit(),
        detector_requests: pipeline.detector_requests(),
        events: n_events,
        warnings: pipeline.warnings().to_vec(),
    })
}

pub fn parse_states(text: &str) -> Result<Vec<FrameState>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::parse("states.jsonl", i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn read_states(path: impl AsRef<Path>) -> Result<Vec<FrameState>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_states(&text)
}
