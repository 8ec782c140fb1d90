//! Ground-truth labels (`labels.jsonl`).
//!
//! One JSON object per line, discriminated by `kind`:
//!
//! ```text
//! {"kind":"sequence","frame_count":240,"timestamps_ms":[0,250,...]}
//! {"kind":"range","tag":"person_present","start":12,"end":240}
//! {"kind":"range","tag":"motion_active","start":12,"end":132,"part":"body"}
//! {"kind":"person_box","frame":12,"bbox":[300,200,80,160]}
//! {"kind":"pet_box","frame":40,"bbox":[60,300,48,32]}
//! {"kind":"transition","frame":12,"event":"human_appear"}
//! {"kind":"flicker","frame":57,"frames":2}
//! ```
//!
//! Ranges are half-open frame intervals `[start, end)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeTag {
    PersonPresent,
    MotionActive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    HumanAppear,
    HumanDisappear,
    MotionStart,
    MotionEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelRecord {
    Sequence {
        frame_count: u64,
        timestamps_ms: Vec<u64>,
    },
    Range {
        tag: RangeTag,
        start: u64,
        end: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        part: Option<String>,
    },
    PersonBox {
        frame: u64,
        bbox: BBox,
    },
    PetBox {
        frame: u64,
        bbox: BBox,
    },
    Transition {
        frame: u64,
        event: TransitionKind,
    },
    Flicker {
        frame: u64,
        frames: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRange {
    pub start: u64,
    pub end: u64,
    pub part: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub frame_count: u64,
    pub timestamps_ms: Vec<u64>,
    pub person_present: Vec<LabeledRange>,
    pub motion_active: Vec<LabeledRange>,
    pub person_boxes: BTreeMap<u64, Vec<BBox>>,
    pub pet_boxes: BTreeMap<u64, Vec<BBox>>,
    pub transitions: Vec<(u64, TransitionKind)>,
    /// `(first frame, length in frames)` of scripted illumination flicker.
    pub flickers: Vec<(u64, u64)>,
}

/// A ground-truth inactivity period in frames, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameInterval {
    pub start: u64,
    pub end: u64,
}

impl GroundTruth {
    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut gt = GroundTruth::default();
        let mut saw_sequence = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let rec: LabelRecord =
                serde_json::from_str(line).map_err(|e| Error::parse("labels.jsonl", i + 1, e.to_string()))?;
            match rec {
                LabelRecord::Sequence {
                    frame_count,
                    timestamps_ms,
                } => {
                    if saw_sequence {
                        return Err(Error::parse("labels.jsonl", i + 1, "duplicate sequence record"));
                    }
                    saw_sequence = true;
                    gt.frame_count = frame_count;
                    gt.timestamps_ms = timestamps_ms;
                }
                LabelRecord::Range { tag, start, end, part } => {
                    let r = LabeledRange { start, end, part };
                    match tag {
                        RangeTag::PersonPresent => gt.person_present.push(r),
                        RangeTag::MotionActive => gt.motion_active.push(r),
                    }
                }
                LabelRecord::PersonBox { frame, bbox } => gt.person_boxes.entry(frame).or_default().push(bbox),
                LabelRecord::PetBox { frame, bbox } => gt.pet_boxes.entry(frame).or_default().push(bbox),
                LabelRecord::Transition { frame, event } => gt.transitions.push((frame, event)),
                LabelRecord::Flicker { frame, frames } => gt.flickers.push((frame, frames)),
            }
        }
        if !saw_sequence {
            return Err(Error::parse("labels.jsonl", 0, "missing sequence record"));
        }
        gt.validate()?;
        Ok(gt)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_jsonl(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::parse("labels.jsonl", 0, msg));
        if self.timestamps_ms.len() as u64 != self.frame_count {
            return fail(format!(
                "frame_count {} but {} timestamps",
                self.frame_count,
                self.timestamps_ms.len()
            ));
        }
        if self.timestamps_ms.windows(2).any(|w| w[1] <= w[0]) {
            return fail("timestamps not strictly increasing".into());
        }
        for (name, ranges) in [("person_present", &self.person_present), ("motion_active", &self.motion_active)] {
            let mut sorted: Vec<_> = ranges.iter().collect();
            sorted.sort_by_key(|r| r.start);
            for r in &sorted {
                if r.start >= r.end || r.end > self.frame_count {
                    return fail(format!("{name} range [{}, {}) out of bounds", r.start, r.end));
                }
            }
            for w in sorted.windows(2) {
                if w[1].start < w[0].end {
                    return fail(format!("{name} ranges overlap at frame {}", w[1].start));
                }
            }
        }
        let frames = self
            .transitions
            .iter()
            .map(|t| t.0)
            .chain(self.person_boxes.keys().copied())
            .chain(self.pet_boxes.keys().copied())
            .chain(self.flickers.iter().map(|f| f.0));
        for f in frames {
            if f >= self.frame_count {
                return fail(format!("frame index {f} outside [0, {})", self.frame_count));
            }
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<LabelRecord> {
        let mut out = vec![LabelRecord::Sequence {
            frame_count: self.frame_count,
            timestamps_ms: self.timestamps_ms.clone(),
        }];
        for (tag, ranges) in [
            (RangeTag::PersonPresent, &self.person_present),
            (RangeTag::MotionActive, &self.motion_active),
        ] {
            out.extend(ranges.iter().map(|r| LabelRecord::Range {
                tag,
                start: r.start,
                end: r.end,
                part: r.part.clone(),
            }));
        }
        out.extend(
            self.transitions
                .iter()
                .map(|&(frame, event)| LabelRecord::Transition { frame, event }),
        );
        out.extend(
            self.flickers
                .iter()
                .map(|&(frame, frames)| LabelRecord::Flicker { frame, frames }),
        );
        for (&frame, boxes) in &self.person_boxes {
            out.extend(boxes.iter().map(|&bbox| LabelRecord::PersonBox { frame, bbox }));
        }
        for (&frame, boxes) in &self.pet_boxes {
            out.extend(boxes.iter().map(|&bbox| LabelRecord::PetBox { frame, bbox }));
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in self.to_records() {
            s.push_str(&serde_json::to_string(&r).expect("label records serialize"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    fn per_frame(&self, ranges: &[LabeledRange]) -> Vec<bool> {
        let mut v = vec![false; self.frame_count as usize];
        for r in ranges {
            v[r.start as usize..r.end as usize].fill(true);
        }
        v
    }

    pub fn person_per_frame(&self) -> Vec<bool> {
        self.per_frame(&self.person_present)
    }

    pub fn motion_per_frame(&self) -> Vec<bool> {
        self.per_frame(&self.motion_active)
    }

    /// Maximal runs where a person is present without motion, kept when
    /// they last at least `min_ms` by timestamps. A run ending at the last
    /// frame ends there (inclusive), matching a stream-end flush.
    pub fn inactivity_intervals(&self, min_ms: u64) -> Vec<FrameInterval> {
        let person = self.person_per_frame();
        let motion = self.motion_per_frame();
        let n = self.frame_count as usize;
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            if person[i] && !motion[i] {
                let start = i;
                while i < n && person[i] && !motion[i] {
                    i += 1;
                }
                let end = if i < n { i } else { n - 1 };
                if self.timestamps_ms[end] - self.timestamps_ms[start] >= min_ms {
                    out.push(FrameInterval {
                        start: start as u64,
                        end: end as u64,
                    });
                }
            } else {
                i += 1;
            }
        }
        out
    }

    /// Frame whose timestamp is closest to `ts_ms`.
    pub fn frame_at(&self, ts_ms: u64) -> u64 {
        nearest_frame(&self.timestamps_ms, ts_ms)
    }
}

pub fn nearest_frame(timestamps_ms: &[u64], ts_ms: u64) -> u64 {
    match timestamps_ms.binary_search(&ts_ms) {
        Ok(i) => i as u64,
        Err(0) => 0,
        Err(i) if i >= timestamps_ms.len() => timestamps_ms.len() as u64 - 1,
        Err(i) => {
            if ts_ms - timestamps_ms[i - 1] <= timestamps_ms[i] - ts_ms {
                i as u64 - 1
            } else {
                i as u64
            }
        }
    }
}
