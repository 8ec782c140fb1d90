//! Scoring predictions against ground truth.
//!
//! Frame scores use a ±k tolerance: a predicted state counts as an error
//! only if no ground-truth frame within k frames has the same state, so
//! disagreements next to a labeled transition are forgiven. All four rates
//! are divided by the total number of frames.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{nearest_frame, FrameInterval, GroundTruth};
use crate::pipeline::FrameState;
use crate::tracker::InactivityEvent;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub tolerance: usize,
    pub frames: usize,
    pub hufp: f64,
    pub hufn: f64,
    pub mofp: f64,
    pub mofn: f64,
}

/// `(false positives, false negatives)` of `pred` against `gt` with ±k.
fn tolerant_errors(pred: &[bool], gt: &[bool], k: usize) -> (usize, usize) {
    let n = gt.len();
    // Prefix counts of positive labels for O(1) window queries.
    let mut pos = vec![0usize; n + 1];
    for i in 0..n {
        pos[i + 1] = pos[i] + gt[i] as usize;
    }
    let (mut fp, mut fn_) = (0, 0);
    for (i, &p) in pred.iter().enumerate() {
        if p == gt[i] {
            continue;
        }
        let lo = i.saturating_sub(k);
        let hi = (i + k + 1).min(n);
        let positives = pos[hi] - pos[lo];
        let matched = if p { positives > 0 } else { positives < hi - lo };
        if !matched {
            if p {
                fp += 1;
            } else {
                fn_ += 1;
            }
        }
    }
    (fp, fn_)
}

fn check_cover(pred: &[FrameState], gt: &GroundTruth) -> Result<()> {
    if pred.len() as u64 != gt.frame_count {
        return Err(Error::Eval(format!(
            "prediction covers {} frames, ground truth {}",
            pred.len(),
            gt.frame_count
        )));
    }
    for (i, s) in pred.iter().enumerate() {
        if s.frame != i as u64 {
            return Err(Error::Eval(format!("prediction line {} is frame {}, expected {i}", i + 1, s.frame)));
        }
    }
    Ok(())
}

pub fn score_frames(pred: &[FrameState], gt: &GroundTruth, k: usize) -> Result<FrameScores> {
    check_cover(pred, gt)?;
    let n = pred.len();
    let ph: Vec<bool> = pred.iter().map(|s| s.human).collect();
    let pm: Vec<bool> = pred.iter().map(|s| s.motion).collect();
    let (hfp, hfn) = tolerant_errors(&ph, &gt.person_per_frame(), k);
    let (mfp, mfn) = tolerant_errors(&pm, &gt.motion_per_frame(), k);
    let rate = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok(FrameScores {
        tolerance: k,
        frames: n,
        hufp: rate(hfp),
        hufn: rate(hfn),
        mofp: rate(mfp),
        mofn: rate(mfn),
    })
}

/// Table of scores with HuFP/HuFN/MoFN in units of 1e-2 and MoFP in 1e-3.
pub fn format_scores(scores: &[FrameScores]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>9} {:>12} {:>12} {:>12} {:>12}",
        "tolerance", "HuFP(e-2)", "HuFN(e-2)", "MoFP(e-3)", "MoFN(e-2)"
    );
    for r in scores {
        let _ = writeln!(
            s,
            "{:>9} {:>12.2} {:>12.2} {:>12.2} {:>12.2}",
            format!("±{}", r.tolerance),
            r.hufp * 1e2,
            r.hufn * 1e2,
            r.mofp * 1e3,
            r.mofn * 1e2
        );
    }
    s
}

/// Frame-weighted rates over several sequences scored at the same
/// tolerance.
pub fn pool_scores(parts: &[FrameScores]) -> Result<FrameScores> {
    let Some(first) = parts.first() else {
        return Err(Error::Eval("nothing to pool".into()));
    };
    if parts.iter().any(|p| p.tolerance != first.tolerance) {
        return Err(Error::Eval("pooled scores differ in tolerance".into()));
    }
    let frames: usize = parts.iter().map(|p| p.frames).sum();
    let w = |f: fn(&FrameScores) -> f64| {
        if frames == 0 {
            0.0
        } else {
            parts.iter().map(|p| f(p) * p.frames as f64).sum::<f64>() / frames as f64
        }
    };
    Ok(FrameScores {
        tolerance: first.tolerance,
        frames,
        hufp: w(|p| p.hufp),
        hufn: w(|p| p.hufn),
        mofp: w(|p| p.mofp),
        mofn: w(|p| p.mofn),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAccuracy {
    pub gt_events: usize,
    pub pred_events: usize,
    pub matched: usize,
    /// Ground-truth events with no matching prediction.
    pub misses: usize,
    /// Predictions with no matching ground-truth event.
    pub ghosts: usize,
    /// Mean absolute offset over start and end boundaries of matched pairs.
    pub mean_abs_offset_frames: f64,
    pub max_abs_offset_frames: u64,
}

/// Frame interval of a logged event.
pub fn event_frames(e: &InactivityEvent, timestamps_ms: &[u64]) -> FrameInterval {
    FrameInterval {
        start: nearest_frame(timestamps_ms, e.start_ms),
        end: nearest_frame(timestamps_ms, e.end_ms),
    }
}

fn overlap(a: &FrameInterval, b: &FrameInterval) -> u64 {
    a.end.min(b.end).saturating_sub(a.start.max(b.start))
}

/// Match predicted to ground-truth intervals greedily by overlap, largest
/// first, then measure boundary offsets.
pub fn event_accuracy(pred: &[FrameInterval], gt: &[FrameInterval]) -> EventAccuracy {
    let mut pairs = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let o = overlap(p, g);
            if o > 0 {
                pairs.push((o, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut offsets = Vec::new();
    for (_, i, j) in pairs {
        if used_p[i] || used_g[j] {
            continue;
        }
        used_p[i] = true;
        used_g[j] = true;
        offsets.push(pred[i].start.abs_diff(gt[j].start));
        offsets.push(pred[i].end.abs_diff(gt[j].end));
    }
    let matched = offsets.len() / 2;
    EventAccuracy {
        gt_events: gt.len(),
        pred_events: pred.len(),
        matched,
        misses: gt.len() - matched,
        ghosts: pred.len() - matched,
        mean_abs_offset_frames: if offsets.is_empty() {
            0.0
        } else {
            offsets.iter().sum::<u64>() as f64 / offsets.len() as f64
        },
        max_abs_offset_frames: offsets.iter().copied().max().unwrap_or(0),
    }
}

/// Share of ground-truth inactivity time covered by predicted events.
pub fn inactivity_recall(pred: &[InactivityEvent], gt: &[FrameInterval], timestamps_ms: &[u64]) -> f64 {
    let mut total = 0u64;
    let mut covered = 0u64;
    for g in gt {
        let (gs, ge) = (timestamps_ms[g.start as usize], timestamps_ms[g.end as usize]);
        total += ge - gs;
        for e in pred {
            let (s, t) = (gs.max(e.start_ms), ge.min(e.end_ms));
            if t > s {
                covered += t - s;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        covered as f64 / total as f64
    }
}

/// Runs of `true` as half-open frame intervals.
pub fn runs(flags: &[bool]) -> Vec<FrameInterval> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if flags[i] {
            let s = i;
            while i < flags.len() && flags[i] {
                i += 1;
            }
            out.push(FrameInterval {
                start: s as u64,
                end: i as u64,
            });
        } else {
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionEventScores {
    pub gt_events: usize,
    pub detected: usize,
    pub pred_events: usize,
    /// Predicted motion runs touching no labeled motion (±k).
    pub false_events: usize,
    pub recall: f64,
    pub precision: f64,
}

/// Event-level motion scores: a labeled motion run is detected if any
/// predicted motion frame falls within it (±k); a predicted run is false if
/// it comes within k frames of no labeled run.
pub fn motion_events(pred: &[FrameState], gt: &GroundTruth, k: usize) -> Result<MotionEventScores> {
    check_cover(pred, gt)?;
    let pm: Vec<bool> = pred.iter().map(|s| s.motion).collect();
    let pr = runs(&pm);
    let gr = runs(&gt.motion_per_frame());
    let near = |a: &FrameInterval, b: &FrameInterval| a.start < b.end + k as u64 && b.start < a.end + k as u64;
    let detected = gr.iter().filter(|g| pr.iter().any(|p| near(p, g))).count();
    let false_events = pr.iter().filter(|p| !gr.iter().any(|g| near(p, g))).count();
    Ok(MotionEventScores {
        gt_events: gr.len(),
        detected,
        pred_events: pr.len(),
        false_events,
        recall: if gr.is_empty() { 1.0 } else { detected as f64 / gr.len() as f64 },
        precision: if pr.is_empty() {
            1.0
        } else {
            (pr.len() - false_events) as f64 / pr.len() as f64
        },
    })
}

/// Flicker events followed by predicted motion at frames labeled still,
/// within the flicker span plus `margin` frames either side.
pub fn flicker_false_positives(pred: &[FrameState], gt: &GroundTruth, margin: u64) -> Result<usize> {
    check_cover(pred, gt)?;
    let gm = gt.motion_per_frame();
    let n = pred.len() as u64;
    Ok(gt
        .flickers
        .iter()
        .filter(|&&(f, len)| {
            let lo = f.saturating_sub(margin);
            let hi = (f + len + margin).min(n);
            (lo..hi).any(|i| pred[i as usize].motion && !gm[i as usize])
        })
        .count())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub frames: usize,
    pub scores: Vec<FrameScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<EventAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inactivity_recall: Option<f64>,
    pub motion_events: MotionEventScores,
}

/// Everything `eval` reports. Ground-truth inactivity periods shorter than
/// `min_event_ms` are not expected to be logged.
pub fn evaluate(
    states: &[FrameState],
    events: Option<&[InactivityEvent]>,
    gt: &GroundTruth,
    tolerances: &[usize],
    min_event_ms: u64,
) -> Result<ScoreReport> {
    let scores = tolerances
        .iter()
        .map(|&k| score_frames(states, gt, k))
        .collect::<Result<Vec<_>>>()?;
    let gt_iv = gt.inactivity_intervals(min_event_ms);
    let (acc, recall) = match events {
        Some(ev) => {
            let pred: Vec<FrameInterval> = ev.iter().map(|e| event_frames(e, &gt.timestamps_ms)).collect();
            (
                Some(event_accuracy(&pred, &gt_iv)),
                Some(inactivity_recall(ev, &gt_iv, &gt.timestamps_ms)),
            )
        }
        None => (None, None),
    };
    Ok(ScoreReport {
        frames: states.len(),
        scores,
        events: acc,
        inactivity_recall: recall,
        motion_events: motion_events(states, gt, 0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::LabeledRange;
    use proptest::prelude::*;

    fn gt_from(person: &[bool], motion: &[bool]) -> GroundTruth {
        let range = |r: FrameInterval| LabeledRange {
            start: r.start,
            end: r.end,
            part: None,
        };
        GroundTruth {
            frame_count: person.len() as u64,
            timestamps_ms: (0..person.len() as u64).map(|i| i * 250).collect(),
            person_present: runs(person).into_iter().map(range).collect(),
            motion_active: runs(motion).into_iter().map(range).collect(),
            ..Default::default()
        }
    }

    fn states(human: &[bool], motion: &[bool]) -> Vec<FrameState> {
        (0..human.len())
            .map(|i| FrameState {
                frame: i as u64,
                t_ms: i as u64 * 250,
                human: human[i],
                motion: motion[i],
            })
            .collect()
    }

    fn bits(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn exact_prediction_scores_zero() {
        let h = bits("0011111111110000");
        let m = bits("0001110000111000");
        let gt = gt_from(&h, &m);
        let s = score_frames(&states(&h, &m), &gt, 0).unwrap();
        assert_eq!((s.hufp, s.hufn, s.mofp, s.mofn), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn off_by_one_onset_forgiven_at_k1() {
        let h = bits("1111111111");
        let gm = bits("0001111000");
        let late = bits("0000111100");
        let gt = gt_from(&h, &gm);
        let s0 = score_frames(&states(&h, &late), &gt, 0).unwrap();
        assert_eq!((s0.mofp, s0.mofn), (0.1, 0.1));
        let s1 = score_frames(&states(&h, &late), &gt, 1).unwrap();
        assert_eq!((s1.mofp, s1.mofn), (0.0, 0.0));
    }

    #[test]
    fn range_mismatch_rejected() {
        let gt = gt_from(&bits("111"), &bits("000"));
        assert!(score_frames(&states(&bits("11"), &bits("00")), &gt, 0).is_err());
    }

    #[test]
    fn pooling_weights_by_frames() {
        let s = |frames, mofn| FrameScores {
            tolerance: 0,
            frames,
            hufp: 0.0,
            hufn: 0.0,
            mofp: 0.0,
            mofn,
        };
        let p = pool_scores(&[s(100, 0.1), s(300, 0.0)]).unwrap();
        assert_eq!((p.frames, p.mofn), (400, 0.025));
        assert!(pool_scores(&[]).is_err());
    }

    #[test]
    fn event_offsets() {
        let gt = vec![FrameInterval { start: 10, end: 50 }, FrameInterval { start: 80, end: 120 }];
        assert_eq!(event_accuracy(&gt, &gt).mean_abs_offset_frames, 0.0);
        let shifted: Vec<_> = gt
            .iter()
            .map(|g| FrameInterval {
                start: g.start + 2,
                end: g.end + 2,
            })
            .collect();
        let a = event_accuracy(&shifted, &gt);
        assert_eq!((a.matched, a.mean_abs_offset_frames), (2, 2.0));
        let a = event_accuracy(&shifted[..1], &gt);
        assert_eq!((a.misses, a.ghosts), (1, 0));
        let ghost = [FrameInterval { start: 200, end: 210 }];
        assert_eq!(event_accuracy(&ghost, &gt).ghosts, 1);
    }

    #[test]
    fn recall_by_time() {
        let ts: Vec<u64> = (0..100).map(|i| i * 250).collect();
        let gt = [FrameInterval { start: 0, end: 40 }];
        let ev = |s, e| InactivityEvent {
            pid: "p".into(),
            start_ms: s,
            end_ms: e,
            dur_s: (e - s) as f64 / 1000.0,
            reason: crate::tracker::EndReason::Motion,
        };
        assert_eq!(inactivity_recall(&[ev(0, 10_000)], &gt, &ts), 1.0);
        assert_eq!(inactivity_recall(&[ev(0, 2500), ev(5000, 7500)], &gt, &ts), 0.5);
    }

    #[test]
    fn motion_event_counts() {
        let h = bits("11111111111111111111");
        let gm = bits("00111000000011100000");
        let pm = bits("00011000100001100000");
        let gt = gt_from(&h, &gm);
        let m = motion_events(&states(&h, &pm), &gt, 0).unwrap();
        assert_eq!((m.gt_events, m.detected, m.pred_events, m.false_events), (2, 2, 3, 1));
    }

    #[test]
    fn flicker_fp_counts_only_unlabeled_motion() {
        let h = bits("1111111111");
        let mut gt = gt_from(&h, &bits("0000000000"));
        gt.flickers = vec![(2, 1), (7, 2)];
        let pm = bits("0001000000");
        assert_eq!(flicker_false_positives(&states(&h, &pm), &gt, 1).unwrap(), 1);
    }

    proptest! {
        #[test]
        fn rates_bounded_and_monotone(
            frames in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()), 1..200)
        ) {
            let gh: Vec<bool> = frames.iter().map(|f| f.0).collect();
            let gm: Vec<bool> = frames.iter().map(|f| f.1).collect();
            let ph: Vec<bool> = frames.iter().map(|f| f.2).collect();
            let pm: Vec<bool> = frames.iter().map(|f| f.3).collect();
            let gt = gt_from(&gh, &gm);
            let st = states(&ph, &pm);
            let mut prev: Option<FrameScores> = None;
            for k in [0, 1, 3, 5] {
                let s = score_frames(&st, &gt, k).unwrap();
                for r in [s.hufp, s.hufn, s.mofp, s.mofn] {
                    prop_assert!((0.0..=1.0).contains(&r));
                }
                if let Some(p) = prev {
                    prop_assert!(s.hufp <= p.hufp && s.hufn <= p.hufn && s.mofp <= p.mofp && s.mofn <= p.mofn);
                }
                prev = Some(s);
            }
        }
    }
}
