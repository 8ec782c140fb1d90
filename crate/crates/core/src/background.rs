//! Non-parametric depth background model.
//!
//! Each pixel keeps the last `n` background depth values. A new smoothed
//! depth sample `d` is scored with the quadratic log-likelihood
//!
//! ```text
//! f(d) = -ln sqrt(2 pi sigma^2) - 1/(2 n sigma^2) * sum_i (d - d_i)^2
//! ```
//!
//! and is foreground when `f(d) < rho`. The newest background frame is
//! blended towards the current depth everywhere except under the foreground,
//! where it is copied unchanged from the previous background frame.

use std::collections::VecDeque;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::image::{self, BBox, Mask};

/// `sigma = M / (0.68 * sqrt(2))`.
pub const SIGMA_FROM_MAD: f64 = 0.68 * std::f64::consts::SQRT_2;

/// Greedy IoU threshold for carrying a blob's track id across frames.
pub const TRACK_IOU: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundParams {
    pub n_history: usize,
    pub rho: f64,
    pub alpha: f64,
    pub sigma_floor_mm: f64,
    /// Size filter threshold in pixels for this frame size.
    pub min_blob_area: usize,
    pub median_kernel: usize,
}

impl BackgroundParams {
    pub fn from_config(cfg: &PipelineConfig, width: usize, height: usize) -> Self {
        BackgroundParams {
            n_history: cfg.n_history,
            rho: cfg.rho,
            alpha: cfg.alpha,
            sigma_floor_mm: cfg.sigma_floor_mm,
            min_blob_area: cfg.min_blob_area_for(width, height),
            median_kernel: cfg.median_kernel,
        }
    }
}

/// One connected foreground region.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub track_id: u32,
    pub area: usize,
    pub bbox: BBox,
    /// Mean valid depth `m`, mm.
    pub mean_depth: f64,
    /// Depth standard deviation `sigma_f`, mm.
    pub depth_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundMask {
    pub mask: Mask,
    pub blobs: Vec<Blob>,
}

impl ForegroundMask {
    pub fn empty(width: usize, height: usize) -> Self {
        ForegroundMask {
            mask: Mask::new(width, height),
            blobs: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    /// Rebuild blob metadata from the mask, keeping every component.
    pub fn from_mask(mask: Mask, depth: &[u16]) -> Self {
        let lab = image::label_components(&mask, Some(depth));
        let blobs = lab
            .components
            .into_iter()
            .map(|c| Blob {
                track_id: c.label,
                area: c.area,
                bbox: c.bbox,
                mean_depth: c.mean_depth,
                depth_std: c.depth_std,
            })
            .collect();
        ForegroundMask { mask, blobs }
    }
}

/// Log-likelihood of depth `d` against background samples, using only the
/// samples given. `history` must be non-empty and `sigma > 0`.
pub fn score_pixel(d: f64, history: &[f64], sigma: f64) -> f64 {
    let n = history.len() as f64;
    let ss: f64 = history.iter().map(|&di| (d - di) * (d - di)).sum();
    -(2.0 * std::f64::consts::PI * sigma * sigma).sqrt().ln() - ss / (2.0 * n * sigma * sigma)
}

/// Bandwidth from the mean absolute successive difference.
pub fn sigma_from_mad(mad: f64, floor: f64) -> f64 {
    (mad / SIGMA_FROM_MAD).max(floor)
}

#[derive(Debug, Clone)]
pub struct BackgroundModel {
    width: usize,
    height: usize,
    params: BackgroundParams,
    /// Oldest first; the back is the current background `BG_t`.
    history: VecDeque<Vec<f32>>,
    mean_abs_diff: f64,
    sigma: f64,
    /// Smoothed depth of the frame being processed.
    current: Vec<u16>,
    /// The two most recent accepted foreground masks, newest last.
    recent: VecDeque<ForegroundMask>,
    next_track: u32,
}

impl BackgroundModel {
    /// Build the model from person-free depth frames. Needs at least
    /// `n_history` frames; the history keeps the last `n_history` after
    /// median smoothing.
    pub fn init(frames: &[&[u16]], width: usize, height: usize, params: BackgroundParams) -> Result<Self> {
        let n = params.n_history;
        if n == 0 {
            return Err(Error::Background("n_history must be positive".into()));
        }
        if frames.len() < n {
            return Err(Error::Background(format!(
                "{} initialisation frames given, {n} required",
                frames.len()
            )));
        }
        let mut smoothed = Vec::with_capacity(frames.len());
        for (i, f) in frames.iter().enumerate() {
            if f.len() != width * height {
                return Err(Error::Dimensions(format!(
                    "initialisation frame {i} has {} samples, expected {}",
                    f.len(),
                    width * height
                )));
            }
            let mut out = Vec::new();
            image::median_filter_depth(f, width, height, params.median_kernel, &mut out);
            smoothed.push(out);
        }

        let (mut sum, mut count) = (0.0f64, 0u64);
        for pair in smoothed.windows(2) {
            for (&a, &b) in pair[0].iter().zip(&pair[1]) {
                if a != 0 && b != 0 {
                    sum += (a as f64 - b as f64).abs();
                    count += 1;
                }
            }
        }
        if count == 0 && smoothed.iter().all(|f| f.iter().all(|&d| d == 0)) {
            return Err(Error::Background("initialisation depth is entirely invalid".into()));
        }
        let mean_abs_diff = if count == 0 { 0.0 } else { sum / count as f64 };
        let sigma = sigma_from_mad(mean_abs_diff, params.sigma_floor_mm);

        let history = smoothed[smoothed.len() - n..]
            .iter()
            .map(|f| f.iter().map(|&d| d as f32).collect())
            .collect();
        Ok(BackgroundModel {
            width,
            height,
            params,
            history,
            mean_abs_diff,
            sigma,
            current: vec![0; width * height],
            recent: VecDeque::with_capacity(2),
            next_track: 1,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean_abs_diff(&self) -> f64 {
        self.mean_abs_diff
    }

    pub fn params(&self) -> &BackgroundParams {
        &self.params
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> impl Iterator<Item = &[f32]> {
        self.history.iter().map(|v| v.as_slice())
    }

    /// Current background frame `BG_t`.
    pub fn latest(&self) -> &[f32] {
        self.history.back().expect("history is never empty")
    }

    /// Smoothed depth of the most recently detected frame.
    pub fn current_depth(&self) -> &[u16] {
        &self.current
    }

    pub fn recent(&self) -> impl Iterator<Item = &ForegroundMask> {
        self.recent.iter()
    }

    /// Raw per-pixel classification of an already smoothed depth frame.
    pub fn classify(&self, smoothed: &[u16], rho: f64) -> Mask {
        let n = self.width * self.height;
        let s2 = self.sigma * self.sigma;
        // f < rho  <=>  ss / n_valid > 2 sigma^2 (-ln sqrt(2 pi sigma^2) - rho)
        let per_sample = (2.0 * s2 * (-(2.0 * std::f64::consts::PI * s2).sqrt().ln() - rho)) as f32;
        let mut ss = vec![0f32; n];
        let mut cnt = vec![0f32; n];
        let cur: Vec<f32> = smoothed.iter().map(|&d| d as f32).collect();
        for h in &self.history {
            for ((s, c), (&d, &b)) in ss.iter_mut().zip(cnt.iter_mut()).zip(cur.iter().zip(h.iter())) {
                let valid = (b > 0.0) as u8 as f32;
                let r = d - b;
                *s += valid * r * r;
                *c += valid;
            }
        }
        let mut bits = vec![0u8; n];
        for i in 0..n {
            bits[i] = (smoothed[i] != 0 && cnt[i] > 0.0 && ss[i] > per_sample * cnt[i]) as u8;
        }
        Mask::from_bits(self.width, self.height, bits)
    }

    /// Score a raw depth frame and post-process the foreground: 3x3
    /// opening, size filter and IoU tracking against the last accepted mask.
    /// Call [`accept`](Self::accept) once suppression is done with the
    /// previous masks.
    pub fn detect_foreground(&mut self, depth: &[u16]) -> ForegroundMask {
        assert_eq!(depth.len(), self.width * self.height, "depth frame size");
        image::median_filter_depth(depth, self.width, self.height, self.params.median_kernel, &mut self.current);
        let raw = self.classify(&self.current, self.params.rho);
        let opened = image::open3(&raw);
        let lab = image::label_components(&opened, Some(&self.current));

        let mut keep = vec![false; lab.components.len() + 1];
        let mut blobs = Vec::new();
        for c in &lab.components {
            if c.area >= self.params.min_blob_area {
                keep[c.label as usize] = true;
                blobs.push(Blob {
                    track_id: 0,
                    area: c.area,
                    bbox: c.bbox,
                    mean_depth: c.mean_depth,
                    depth_std: c.depth_std,
                });
            }
        }
        let bits = lab.labels.iter().map(|&l| keep[l as usize] as u8).collect();
        let mask = Mask::from_bits(self.width, self.height, bits);
        self.assign_tracks(&mut blobs);

        ForegroundMask { mask, blobs }
    }

    /// Save `fg` in the two-deep ring of recent foregrounds.
    pub fn accept(&mut self, fg: ForegroundMask) {
        if self.recent.len() == 2 {
            self.recent.pop_front();
        }
        self.recent.push_back(fg);
    }

    fn assign_tracks(&mut self, blobs: &mut [Blob]) {
        let prev: Vec<(u32, BBox)> = self
            .recent
            .back()
            .map(|f| f.blobs.iter().map(|b| (b.track_id, b.bbox)).collect())
            .unwrap_or_default();
        let mut pairs = Vec::new();
        for (i, b) in blobs.iter().enumerate() {
            for (j, (_, pb)) in prev.iter().enumerate() {
                let iou = b.bbox.iou(pb);
                if iou >= TRACK_IOU {
                    pairs.push((iou, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_prev = vec![false; prev.len()];
        for (_, i, j) in pairs {
            if blobs[i].track_id == 0 && !used_prev[j] {
                blobs[i].track_id = prev[j].0;
                used_prev[j] = true;
            }
        }
        for b in blobs.iter_mut().filter(|b| b.track_id == 0) {
            b.track_id = self.next_track;
            self.next_track += 1;
        }
    }

    /// Selective update: `BG_t = BG_{t-1}` under `fg`, otherwise
    /// `(1 - alpha) BG_{t-1} + alpha D_t`. Invalid current depth keeps
    /// `BG_{t-1}`. The new frame is pushed and the oldest evicted.
    pub fn update_background(&mut self, fg: &Mask) {
        let alpha = self.params.alpha as f32;
        let keep = 1.0 - alpha;
        let prev = self.latest();
        let mut next = Vec::with_capacity(prev.len());
        for ((&b, &d), &f) in prev.iter().zip(&self.current).zip(fg.bits()) {
            next.push(if f != 0 || d == 0 { b } else { keep * b + alpha * d as f32 });
        }
        self.history.push_back(next);
        while self.history.len() > self.params.n_history {
            self.history.pop_front();
        }
    }

    /// Absorb `region` into the background: every history frame takes the
    /// current depth there (used when a region is voted non-human).
    pub fn merge_into_background(&mut self, region: &Mask) {
        for h in self.history.iter_mut() {
            for ((b, &d), &r) in h.iter_mut().zip(&self.current).zip(region.bits()) {
                if r != 0 && d != 0 {
                    *b = d as f32;
                }
            }
        }
        self.recent.clear();
    }

    /// Depth frames currently retained (history plus the working frame).
    pub fn retained_depth_frames(&self) -> usize {
        self.history.len() + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(n: usize) -> BackgroundParams {
        BackgroundParams {
            n_history: n,
            rho: -6.907,
            alpha: 0.05,
            sigma_floor_mm: 1.0,
            min_blob_area: 100,
            median_kernel: 5,
        }
    }

    fn flat(w: usize, h: usize, d: u16) -> Vec<u16> {
        vec![d; w * h]
    }

    #[test]
    fn identical_frames_give_sigma_floor() {
        let f = flat(64, 48, 2000);
        let frames: Vec<&[u16]> = (0..10).map(|_| f.as_slice()).collect();
        let m = BackgroundModel::init(&frames, 64, 48, params(10)).unwrap();
        assert_eq!(m.mean_abs_diff(), 0.0);
        assert_eq!(m.sigma(), 1.0);
        assert_eq!(m.history_len(), 10);
    }

    #[test]
    fn alternating_unit_steps_give_known_sigma() {
        let a = flat(64, 48, 2000);
        let b = flat(64, 48, 2001);
        let frames: Vec<&[u16]> = (0..12).map(|i| if i % 2 == 0 { a.as_slice() } else { b.as_slice() }).collect();
        let mut p = params(10);
        p.sigma_floor_mm = 0.5;
        let m = BackgroundModel::init(&frames, 64, 48, p).unwrap();
        assert_eq!(m.mean_abs_diff(), 1.0);
        // 1 / (0.68 * sqrt 2)
        assert!((m.sigma() - 1.039_862_9).abs() < 1e-6, "{}", m.sigma());
    }

    #[test]
    fn too_few_or_invalid_frames_error() {
        let f = flat(64, 48, 2000);
        let frames: Vec<&[u16]> = (0..9).map(|_| f.as_slice()).collect();
        assert!(BackgroundModel::init(&frames, 64, 48, params(10)).is_err());
        let z = flat(64, 48, 0);
        let frames: Vec<&[u16]> = (0..10).map(|_| z.as_slice()).collect();
        assert!(BackgroundModel::init(&frames, 64, 48, params(10)).is_err());
    }

    #[test]
    fn score_zero_residual() {
        let f = score_pixel(1500.0, &[1500.0; 10], 1.0);
        assert!((f + 0.918_938_533_2).abs() < 1e-9, "{f}");
    }

    #[test]
    fn score_matches_log_kde_when_residuals_equal() {
        // Brute-force kernel average; exact agreement when all residuals match.
        for &(r, sigma) in &[(0.0, 3.0), (2.5, 3.0), (10.0, 7.0), (1.0, 1.0)] {
            let d = 1000.0;
            let hist = vec![d - r; 10];
            let kde: f64 = hist
                .iter()
                .map(|&di: &f64| {
                    let z = (d - di) / sigma;
                    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI * sigma * sigma).sqrt()
                })
                .sum::<f64>()
                / hist.len() as f64;
            assert!((score_pixel(d, &hist, sigma) - kde.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn threshold_boundary() {
        // With sigma = 1 the zero-residual score is ~-0.919; a residual of
        // sqrt(2 * (6.907 - 0.919)) sits right on rho.
        let edge = (2.0 * (6.907 - 0.918_938_533_204_672_7f64)).sqrt();
        assert!(score_pixel(edge - 1e-6, &[0.0], 1.0) >= -6.907);
        assert!(score_pixel(edge + 1e-6, &[0.0], 1.0) < -6.907);
    }

    fn model_with_bg(w: usize, h: usize, d: u16) -> BackgroundModel {
        let f = flat(w, h, d);
        let frames: Vec<&[u16]> = (0..10).map(|_| f.as_slice()).collect();
        BackgroundModel::init(&frames, w, h, params(10)).unwrap()
    }

    #[test]
    fn identical_frame_is_empty() {
        let mut m = model_with_bg(80, 60, 2500);
        let fg = m.detect_foreground(&flat(80, 60, 2500));
        assert!(fg.is_empty() && fg.mask.is_empty());
    }

    #[test]
    fn spike_is_filtered() {
        let mut m = model_with_bg(80, 60, 2500);
        let mut d = flat(80, 60, 2500);
        d[30 * 80 + 40] = 500;
        assert!(m.detect_foreground(&d).is_empty());
    }

    #[test]
    fn person_blob_detected_with_bbox() {
        let (w, h) = (320, 240);
        let mut m = model_with_bg(w, h, 2700);
        let mut d = flat(w, h, 2700);
        for y in 40..200 {
            for x in 100..180 {
                d[y * w + x] = 2200;
            }
        }
        let fg = m.detect_foreground(&d);
        assert_eq!(fg.blobs.len(), 1);
        assert_eq!(fg.blobs[0].bbox, BBox::new(100, 40, 80, 160));
        // The 5x5 median clips three pixels off each corner.
        assert_eq!(fg.blobs[0].area, 80 * 160 - 12);
    }

    #[test]
    fn invalid_depth_never_foreground() {
        let (w, h) = (64, 48);
        let mut m = model_with_bg(w, h, 2700);
        let mut d = flat(w, h, 1200);
        for y in 10..30 {
            for x in 10..30 {
                d[y * w + x] = 0;
            }
        }
        let fg = m.detect_foreground(&d);
        // The median keeps pixels deep inside the hole invalid.
        for y in 14..26 {
            for x in 14..26 {
                assert!(!fg.mask.get(x, y));
            }
        }
    }

    #[test]
    fn update_alpha_extremes() {
        let (w, h) = (40, 40);
        let mut d = flat(w, h, 1000);
        d[0] = 1500;
        let mut p = params(10);
        p.alpha = 0.0;
        let bgf = flat(w, h, 2000);
        let frames: Vec<&[u16]> = (0..10).map(|_| bgf.as_slice()).collect();
        let mut m = BackgroundModel::init(&frames, w, h, p.clone()).unwrap();
        let before = m.latest().to_vec();
        m.detect_foreground(&d);
        m.update_background(&Mask::new(w, h));
        assert_eq!(m.latest(), before.as_slice());

        p.alpha = 1.0;
        let mut m = BackgroundModel::init(&frames, w, h, p).unwrap();
        m.detect_foreground(&d);
        m.update_background(&Mask::new(w, h));
        let cur: Vec<f32> = m.current_depth().iter().map(|&v| v as f32).collect();
        assert_eq!(m.latest(), cur.as_slice());
        assert_eq!(m.history_len(), 10);
    }

    #[test]
    fn full_foreground_freezes_background() {
        let (w, h) = (40, 40);
        let mut m = model_with_bg(w, h, 2000);
        let before = m.latest().to_vec();
        m.detect_foreground(&flat(w, h, 1000));
        let mut all = Mask::new(w, h);
        all.fill_rect(&BBox::new(0, 0, w as u32, h as u32), true);
        m.update_background(&all);
        assert_eq!(m.latest(), before.as_slice());
    }

    #[test]
    fn tracks_persist_across_frames() {
        let (w, h) = (160, 120);
        let mut m = model_with_bg(w, h, 2700);
        let mut ids = Vec::new();
        for shift in [0usize, 4, 8] {
            let mut d = flat(w, h, 2700);
            for y in 30..90 {
                for x in 40 + shift..80 + shift {
                    d[y * w + x] = 2000;
                }
            }
            let fg = m.detect_foreground(&d);
            ids.push(fg.blobs[0].track_id);
            m.accept(fg);
        }
        assert!(ids.iter().all(|&i| i == ids[0]));
        assert_eq!(m.recent().count(), 2);
    }

    #[test]
    fn merge_absorbs_region() {
        let (w, h) = (64, 48);
        let mut m = model_with_bg(w, h, 2700);
        let mut d = flat(w, h, 2700);
        for y in 10..40 {
            for x in 10..40 {
                d[y * w + x] = 2000;
            }
        }
        let fg = m.detect_foreground(&d);
        assert!(!fg.is_empty());
        m.merge_into_background(&fg.mask);
        assert!(m.detect_foreground(&d).is_empty());
    }

    fn model_from(frames: &[Vec<u16>], w: usize, h: usize) -> BackgroundModel {
        let refs: Vec<&[u16]> = frames.iter().map(|f| f.as_slice()).collect();
        BackgroundModel::init(&refs, w, h, params(frames.len())).unwrap()
    }

    fn depth_frames(w: usize, h: usize, n: usize) -> impl Strategy<Value = Vec<Vec<u16>>> {
        prop::collection::vec(prop::collection::vec(1500u16..3500, w * h), n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn foreground_pixels_freeze_exactly(
            frames in depth_frames(16, 12, 4),
            next in prop::collection::vec(0u16..4000, 16 * 12),
            fg_bits in prop::collection::vec(0u8..2, 16 * 12),
        ) {
            let mut m = model_from(&frames, 16, 12);
            let before = m.latest().to_vec();
            m.detect_foreground(&next);
            let fg = Mask::from_bits(16, 12, fg_bits);
            m.update_background(&fg);
            prop_assert_eq!(m.history_len(), 4);
            for (i, (&a, &b)) in before.iter().zip(m.latest()).enumerate() {
                if fg.bits()[i] != 0 {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }

        #[test]
        fn lower_rho_never_adds_foreground(
            frames in depth_frames(16, 12, 5),
            probe in prop::collection::vec(1000u16..4000, 16 * 12),
            rho in -20.0f64..0.0,
            drop in 0.0f64..10.0,
        ) {
            let m = model_from(&frames, 16, 12);
            let strict = m.classify(&probe, rho - drop);
            let loose = m.classify(&probe, rho);
            prop_assert!(strict.is_subset_of(&loose));
        }

        #[test]
        fn static_scene_converges_geometrically(start in 1500u16..2500, target in 2600u16..3500, alpha in 0.02f64..0.5) {
            let (w, h) = (8, 8);
            let mut p = params(3);
            p.alpha = alpha;
            let init = flat(w, h, start);
            let refs: Vec<&[u16]> = (0..3).map(|_| init.as_slice()).collect();
            let mut m = BackgroundModel::init(&refs, w, h, p).unwrap();
            let d = flat(w, h, target);
            let empty = Mask::new(w, h);
            let err = |m: &BackgroundModel| m.latest().iter().map(|&b| (b - target as f32).abs()).fold(0.0f32, f32::max);
            let half = ((0.5f64).ln() / (1.0 - alpha).ln()).ceil() as usize;
            for _ in 0..3 {
                let e0 = err(&m);
                for _ in 0..half {
                    m.detect_foreground(&d);
                    m.update_background(&empty);
                }
                prop_assert!(err(&m) <= 0.5 * e0 + 0.01, "{} -> {}", e0, err(&m));
            }
        }
    }
}
