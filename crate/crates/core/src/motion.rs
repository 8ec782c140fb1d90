//! Color-difference motion inside the foreground.
//!
//! A pixel moves when all three channels change by at least `theta` between
//! consecutive frames. Raw motion is cleaned with a spatial binary median and
//! then a per-pixel temporal median; the temporal median is centered, so the
//! filtered mask for frame `t` is produced after frame `t + window/2` arrives.

use std::collections::VecDeque;

use crate::config::PipelineConfig;
use crate::frame::RgbdFrame;
use crate::image::{self, Mask};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotionParams {
    pub theta: u8,
    pub spatial_kernel: usize,
    pub temporal_window: usize,
    pub min_motion_pixels: usize,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams {
            theta: 20,
            spatial_kernel: 5,
            temporal_window: 5,
            min_motion_pixels: 4,
        }
    }
}

impl MotionParams {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        MotionParams {
            theta: cfg.theta,
            min_motion_pixels: cfg.min_motion_pixels,
            ..Default::default()
        }
    }

    /// Frames of delay between input and filtered output.
    pub fn lag(&self) -> usize {
        self.temporal_window / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionMask {
    pub frame: u64,
    pub bits: Mask,
    pub pixel_count: usize,
}

/// Pixels inside `fg` whose R, G and B all changed by at least `theta`.
pub fn raw_motion(cur: &RgbdFrame, prev: &RgbdFrame, fg: &Mask, theta: u8) -> Mask {
    assert_eq!(cur.pixels(), prev.pixels(), "frame size mismatch");
    raw_motion_color(cur.color(), prev.color(), fg, theta)
}

/// [`raw_motion`] over planar RGB buffers sized to `fg`.
pub fn raw_motion_color(cur: &[u8], prev: &[u8], fg: &Mask, theta: u8) -> Mask {
    let n = fg.bits().len();
    assert_eq!(cur.len(), 3 * n, "color size mismatch");
    assert_eq!(prev.len(), 3 * n, "color size mismatch");
    let mut bits = fg.bits().to_vec();
    for c in 0..3 {
        let plane = c * n..(c + 1) * n;
        for ((b, &a), &p) in bits.iter_mut().zip(&cur[plane.clone()]).zip(&prev[plane]) {
            *b &= (a.abs_diff(p) >= theta) as u8;
        }
    }
    Mask::from_bits(fg.width(), fg.height(), bits)
}

pub fn has_motion(mask: &MotionMask, min_motion_pixels: usize) -> bool {
    mask.pixel_count > 0 && mask.pixel_count >= min_motion_pixels
}

const MOTION_BIT: u8 = 1;
const FG_BIT: u8 = 2;

/// Spatial + temporal median over a short ring of masks. Each ring slot packs
/// the spatially filtered motion bit and that frame's foreground bit, so the
/// ring holds exactly `temporal_window` masks.
#[derive(Debug, Clone)]
pub struct MotionFilter {
    params: MotionParams,
    width: usize,
    height: usize,
    ring: VecDeque<(u64, Vec<u8>)>,
    /// Frames still owed an output (pushed but not yet emitted).
    pending: VecDeque<u64>,
}

impl MotionFilter {
    pub fn new(params: MotionParams, width: usize, height: usize) -> Self {
        assert!(params.spatial_kernel % 2 == 1 && params.spatial_kernel >= 3);
        assert!(params.temporal_window % 2 == 1 && params.temporal_window >= 3);
        MotionFilter {
            params,
            width,
            height,
            ring: VecDeque::new(),
            pending: VecDeque::new(),
        }
    }

    pub fn params(&self) -> &MotionParams {
        &self.params
    }

    pub fn retained_masks(&self) -> usize {
        self.ring.len()
    }

    /// Add frame `index`'s raw motion and (grown, pet-free) foreground.
    /// Returns the filtered mask of frame `index - lag` once available.
    pub fn push(&mut self, index: u64, raw: &Mask, fg: &Mask) -> Option<MotionMask> {
        let spatial = image::majority_filter(raw, self.params.spatial_kernel);
        let packed = spatial
            .bits()
            .iter()
            .zip(fg.bits())
            .map(|(&m, &f)| ((m & f) * MOTION_BIT) | (f * FG_BIT))
            .collect();
        if self.ring.len() == self.params.temporal_window {
            self.ring.pop_front();
        }
        self.ring.push_back((index, packed));
        self.pending.push_back(index);
        if self.pending.len() > self.params.lag() {
            let center = self.pending.pop_front().expect("non-empty");
            Some(self.emit(center))
        } else {
            None
        }
    }

    /// Emit the outputs still owed at end of stream; missing future frames
    /// count as no motion.
    pub fn flush(&mut self) -> Vec<MotionMask> {
        let owed: Vec<u64> = self.pending.drain(..).collect();
        owed.into_iter().map(|c| self.emit(c)).collect()
    }

    fn emit(&self, center: u64) -> MotionMask {
        let half = self.params.lag() as u64;
        let need = (self.params.temporal_window / 2 + 1) as u8;
        let n = self.width * self.height;
        let mut count = vec![0u8; n];
        let mut center_fg: Option<&[u8]> = None;
        for (idx, packed) in &self.ring {
            if *idx + half < center || *idx > center + half {
                continue;
            }
            if *idx == center {
                center_fg = Some(packed);
            }
            for (c, &p) in count.iter_mut().zip(packed.iter()) {
                *c += p & MOTION_BIT;
            }
        }
        let center_fg = center_fg.expect("center frame is in the ring");
        let bits: Vec<u8> = count
            .iter()
            .zip(center_fg)
            .map(|(&c, &p)| (c >= need && p & FG_BIT != 0) as u8)
            .collect();
        let pixel_count = bits.iter().map(|&b| b as usize).sum();
        MotionMask {
            frame: center,
            bits: Mask::from_bits(self.width, self.height, bits),
            pixel_count,
        }
    }
}
