//! Misdetection suppression: depth-band region growing, the human/non-human
//! vote and pet-region exclusion.

use std::collections::VecDeque;

use crate::background::ForegroundMask;
use crate::config::PipelineConfig;
use crate::image::{BBox, Mask};

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthParams {
    /// Enlargement of each blob box on every side, as a fraction of width.
    pub box_margin: f64,
    pub band_k: f64,
    pub sigma_f_floor_mm: f64,
    /// A blob is "close in size" to a recent one when the area ratio is
    /// within `[1/max_area_ratio, max_area_ratio]`.
    pub max_area_ratio: f64,
    /// ... and "close in depth" within this many millimeters.
    pub max_depth_diff_mm: f64,
}

impl Default for GrowthParams {
    fn default() -> Self {
        GrowthParams {
            box_margin: 0.10,
            band_k: 2.8,
            sigma_f_floor_mm: 5.0,
            max_area_ratio: 2.0,
            max_depth_diff_mm: 300.0,
        }
    }
}

impl GrowthParams {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        GrowthParams {
            box_margin: cfg.box_margin,
            band_k: cfg.band_k,
            sigma_f_floor_mm: cfg.sigma_f_floor_mm,
            ..Default::default()
        }
    }
}

fn is_close(a_area: usize, a_depth: f64, b_area: usize, b_depth: f64, p: &GrowthParams) -> bool {
    let ratio = a_area as f64 / b_area.max(1) as f64;
    ratio <= p.max_area_ratio && ratio >= 1.0 / p.max_area_ratio && (a_depth - b_depth).abs() <= p.max_depth_diff_mm
}

/// Grow each eligible blob into nearby pixels of similar depth.
///
/// Within the blob's box enlarged by `box_margin * width` on all sides, any
/// valid pixel with `|d - m| < band_k * max(sigma_f, floor)` joins the
/// foreground. With several blobs, only those close in size and depth to a
/// blob of one of the `recent` masks are grown. Never removes a pixel.
pub fn grow_foreground(
    fg: &ForegroundMask,
    depth: &[u16],
    params: &GrowthParams,
    recent: &[&ForegroundMask],
) -> ForegroundMask {
    if fg.is_empty() {
        return fg.clone();
    }
    let (w, h) = (fg.mask.width(), fg.mask.height());
    assert_eq!(depth.len(), w * h, "depth size");
    let margin = (params.box_margin * w as f64).round() as u32;
    let multi = fg.blobs.len() > 1;

    let mut mask = fg.mask.clone();
    for blob in &fg.blobs {
        if multi {
            let close = recent.iter().flat_map(|r| r.blobs.iter()).any(|r| {
                is_close(blob.area, blob.mean_depth, r.area, r.mean_depth, params)
            });
            if !close {
                continue;
            }
        }
        let band = params.band_k * blob.depth_std.max(params.sigma_f_floor_mm);
        let region = blob.bbox.expand(margin, w as u32, h as u32);
        let bits = mask.bits_mut();
        for y in region.y as usize..region.bottom() as usize {
            for x in region.x as usize..region.right() as usize {
                let i = y * w + x;
                let d = depth[i];
                if d != 0 && (d as f64 - blob.mean_depth).abs() < band {
                    bits[i] = 1;
                }
            }
        }
    }
    relabel(fg, mask, depth)
}

/// Recompute blob metadata, carrying over the track id of the original blob
/// that overlaps each new component the most.
fn relabel(orig: &ForegroundMask, mask: Mask, depth: &[u16]) -> ForegroundMask {
    let mut out = ForegroundMask::from_mask(mask, depth);
    for b in out.blobs.iter_mut() {
        b.track_id = orig
            .blobs
            .iter()
            .map(|o| (o.bbox.intersection(&b.bbox).area(), o.track_id))
            .filter(|&(a, _)| a > 0)
            .max_by_key(|&(a, id)| (a, std::cmp::Reverse(id)))
            .map(|(_, id)| id)
            .unwrap_or(0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteSample {
    Human,
    NotHuman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Human,
    NotHuman,
    Undecided,
}

/// Rolling window of detector verdicts about the current foreground.
#[derive(Debug, Clone)]
pub struct VoteState {
    capacity: usize,
    threshold: f64,
    window_ms: u64,
    period_ms: u64,
    samples: VecDeque<(u64, VoteSample)>,
}

impl VoteState {
    pub fn new(window_s: f64, period_s: f64, threshold: f64) -> Self {
        VoteState {
            capacity: (window_s / period_s).round().max(1.0) as usize,
            threshold,
            window_ms: (window_s * 1000.0).round() as u64,
            period_ms: (period_s * 1000.0).round() as u64,
            samples: VecDeque::new(),
        }
    }

    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self::new(cfg.vote_window_s, cfg.detector_period_s, cfg.vote_threshold)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn reset(&mut self) {
        self.samples.clear();
    }

    /// Time covered by the window; each sample stands for one detector period.
    pub fn span_ms(&self) -> u64 {
        match (self.samples.front(), self.samples.back()) {
            (Some(&(first, _)), Some(&(last, _))) => last - first + self.period_ms,
            _ => 0,
        }
    }

    /// Record a sample taken at `now_ms` and return the current verdict.
    /// A decision needs a full window spanning at least the vote window;
    /// ties at the threshold vote not-human.
    pub fn vote_step(&mut self, sample: VoteSample, now_ms: u64) -> Verdict {
        if let Some(&(last, _)) = self.samples.back() {
            if now_ms < last {
                self.samples.clear();
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((now_ms, sample));
        self.verdict()
    }

    pub fn verdict(&self) -> Verdict {
        if self.samples.len() < self.capacity || self.span_ms() < self.window_ms {
            return Verdict::Undecided;
        }
        let not_human = self
            .samples
            .iter()
            .filter(|s| s.1 == VoteSample::NotHuman)
            .count();
        // Integer comparison avoids 4/5 landing a hair under 0.8.
        let need = (self.threshold * self.samples.len() as f64 - 1e-9).ceil() as usize;
        if not_human >= need {
            Verdict::NotHuman
        } else {
            Verdict::Human
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PetExclusion {
    pub fg: ForegroundMask,
    pub removed_pixels: usize,
    /// Foreground existed but lay entirely inside pet boxes.
    pub occluded: bool,
}

/// Remove every pixel inside a pet box from the foreground.
pub fn exclude_pets(fg: &ForegroundMask, pet_boxes: &[BBox], depth: &[u16]) -> PetExclusion {
    if pet_boxes.is_empty() || fg.is_empty() {
        return PetExclusion {
            fg: fg.clone(),
            removed_pixels: 0,
            occluded: false,
        };
    }
    let mut mask = fg.mask.clone();
    let before = mask.count();
    for b in pet_boxes {
        mask.fill_rect(b, false);
    }
    let removed_pixels = before - mask.count();
    let out = relabel(fg, mask, depth);
    let occluded = out.is_empty();
    PetExclusion {
        fg: out,
        removed_pixels,
        occluded,
    }
}
