//! Deterministic synthetic RGB-D scenes with ground truth.
//!
//! A scene is a wall with optional furniture, an optional person made of a
//! clothing-colored body with darker part patches, an optional pet, TV
//! flicker and sensor noise. The person's timeline is a list of segments
//! (`absent`, `still`, `move`). In a `move` frame the moving part jumps
//! between its two positions, so every move frame differs from the one
//! before it and still frames repeat the last pose exactly. Motion labels
//! are therefore exactly the move frames.
//!
//! Colors are scaled per frame so the noise-free frame hits the scripted
//! luma, then flicker and noise are added. Noise for frame `i` comes from a
//! ChaCha stream keyed by `(seed, i)`, so frames can be rendered in any
//! order with identical results.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{RgbdFrame, SequenceManifest, SequenceWriter};
use crate::image::{luma_planar, BBox};
use crate::labels::{GroundTruth, LabeledRange, TransitionKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Body,
    Head,
    Wrist,
    Finger,
    Foot,
}

impl Part {
    pub const ALL: [Part; 5] = [Part::Body, Part::Head, Part::Wrist, Part::Finger, Part::Foot];

    pub fn name(self) -> &'static str {
        match self {
            Part::Body => "body",
            Part::Head => "head",
            Part::Wrist => "wrist",
            Part::Finger => "finger",
            Part::Foot => "foot",
        }
    }

    /// Patch rectangle relative to the body's top-left corner, and the
    /// `(dx, dy)` jump while moving. The body itself is 80x160.
    fn geometry(self) -> ([u32; 4], [u32; 2]) {
        match self {
            Part::Body => ([0, 0, 80, 160], [8, 0]),
            Part::Head => ([25, 6, 30, 30], [10, 0]),
            Part::Wrist => ([6, 80, 12, 12], [8, 0]),
            Part::Finger => ([62, 100, 4, 6], [0, 6]),
            Part::Foot => ([10, 140, 20, 12], [8, 0]),
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Absent,
    Still,
    Move,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub kind: SegmentKind,
    pub duration_s: f64,
    /// Moving part for `move` segments; defaults to the whole body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<Part>,
}

impl Segment {
    pub fn new(kind: SegmentKind, duration_s: f64) -> Self {
        Segment {
            kind,
            duration_s,
            part: None,
        }
    }

    pub fn moving(part: Part, duration_s: f64) -> Self {
        Segment {
            kind: SegmentKind::Move,
            duration_s,
            part: Some(part),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Furniture {
    pub bbox: BBox,
    pub depth_mm: u16,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Background {
    pub wall_depth_mm: u16,
    pub wall_color: [u8; 3],
    /// Target mean Rec. 601 luma of the rendered frames.
    pub luma: f64,
    pub furniture: Vec<Furniture>,
}

impl Default for Background {
    fn default() -> Self {
        Background {
            wall_depth_mm: 3000,
            wall_color: [100, 100, 100],
            luma: 97.0,
            furniture: vec![Furniture {
                bbox: BBox::new(380, 300, 220, 120),
                depth_mm: 2400,
                color: [80, 60, 50],
            }],
        }
    }
}

fn default_person_depth() -> u16 {
    2200
}
fn default_scale() -> f64 {
    1.0
}
fn default_clothing() -> [u8; 3] {
    [230, 220, 210]
}
fn default_skin() -> [u8; 3] {
    [30, 25, 20]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Person {
    /// Top-left of the body at rest.
    pub x: u32,
    pub y: u32,
    #[serde(default = "default_person_depth")]
    pub depth_mm: u16,
    /// Size factor for a farther or nearer person.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_clothing")]
    pub clothing: [u8; 3],
    /// Color of the part patches.
    #[serde(default = "default_skin")]
    pub skin: [u8; 3],
    pub segments: Vec<Segment>,
}

impl Person {
    /// A person at `(x, y)` with default appearance.
    pub fn at(x: u32, y: u32, segments: Vec<Segment>) -> Self {
        Person {
            x,
            y,
            depth_mm: default_person_depth(),
            scale: default_scale(),
            clothing: default_clothing(),
            skin: default_skin(),
            segments,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlickerEvent {
    pub frame: u64,
    /// 1 or 2.
    pub frames: u64,
    /// Subset of "RGB", e.g. "RG".
    pub channels: String,
    /// Added to each affected channel; may be negative.
    pub magnitude: i16,
}

impl FlickerEvent {
    fn channel_mask(&self) -> Result<[bool; 3]> {
        let mut m = [false; 3];
        for ch in self.channels.chars() {
            let i = match ch {
                'R' => 0,
                'G' => 1,
                'B' => 2,
                _ => return Err(Error::Script(format!("flicker channel `{ch}` is not R, G or B"))),
            };
            if m[i] {
                return Err(Error::Script(format!("flicker channel `{ch}` repeated")));
            }
            m[i] = true;
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::Script("flicker needs at least one channel".into()));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Tv {
    /// Lit region; the whole frame when absent.
    pub region: Option<BBox>,
    pub events: Vec<FlickerEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t_s: f64,
    pub x: u32,
    pub y: u32,
}

fn default_pet_size() -> [u32; 2] {
    [48, 32]
}
fn default_pet_depth() -> u16 {
    1800
}
fn default_pet_color() -> [u8; 3] {
    [200, 160, 20]
}
fn default_stripe_color() -> [u8; 3] {
    [40, 30, 120]
}
fn default_stripe_px() -> u32 {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pet {
    #[serde(default = "default_pet_size")]
    pub size: [u32; 2],
    #[serde(default = "default_pet_depth")]
    pub depth_mm: u16,
    #[serde(default = "default_pet_color")]
    pub color: [u8; 3],
    /// The coat is vertical stripes of `color` and `stripe_color`. While
    /// the pet walks the stripes swap every frame (gait), so its interior
    /// changes and not only its edges.
    #[serde(default = "default_stripe_color")]
    pub stripe_color: [u8; 3],
    #[serde(default = "default_stripe_px")]
    pub stripe_px: u32,
    /// Visible from the first waypoint's time to the last, moving linearly
    /// between them. Ordered by time.
    pub waypoints: Vec<Waypoint>,
}

impl Default for Pet {
    fn default() -> Self {
        Pet {
            size: default_pet_size(),
            depth_mm: default_pet_depth(),
            color: default_pet_color(),
            stripe_color: default_stripe_color(),
            stripe_px: default_stripe_px(),
            waypoints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Noise {
    /// Depth noise standard deviation as a percentage of depth.
    pub depth_pct: f64,
    pub color_sigma: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Noise {
            depth_pct: 1.0,
            color_sigma: 2.0,
        }
    }
}

fn default_width() -> usize {
    640
}
fn default_height() -> usize {
    480
}
fn default_pid() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneScript {
    pub duration_s: f64,
    pub fps: f64,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pid")]
    pub participant_id: String,
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub person: Option<Person>,
    #[serde(default)]
    pub tv: Option<Tv>,
    #[serde(default)]
    pub pet: Option<Pet>,
    #[serde(default)]
    pub noise: Noise,
}

impl SceneScript {
    /// Background only.
    pub fn empty(duration_s: f64, fps: f64, seed: u64) -> Self {
        SceneScript {
            duration_s,
            fps,
            width: default_width(),
            height: default_height(),
            seed,
            participant_id: default_pid(),
            background: Background::default(),
            person: None,
            tv: None,
            pet: None,
            noise: Noise::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: SceneScript = serde_json::from_str(text).map_err(|e| Error::Script(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    pub fn timestamp_ms(&self, frame: u64) -> u64 {
        (frame as f64 * 1000.0 / self.fps).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Script(m));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be > 0".into());
        }
        if !(3.0..=5.0).contains(&self.fps) {
            return bad(format!("fps {} outside [3, 5]", self.fps));
        }
        if self.width < 32 || self.height < 32 || self.width > 4096 || self.height > 4096 {
            return bad(format!("frame size {}x{} outside 32..=4096", self.width, self.height));
        }
        if self.frame_count() < 1 {
            return bad("scene has no frames".into());
        }
        let bg = &self.background;
        if !(bg.luma > 0.0 && bg.luma <= 255.0) {
            return bad("background luma must be in (0, 255]".into());
        }
        if bg.wall_depth_mm == 0 || bg.furniture.iter().any(|f| f.depth_mm == 0) {
            return bad("depths must be > 0".into());
        }
        if !(self.noise.depth_pct >= 0.0 && self.noise.depth_pct <= 50.0)
            || !(self.noise.color_sigma >= 0.0 && self.noise.color_sigma <= 64.0)
        {
            return bad("noise levels out of range".into());
        }
        if let Some(p) = &self.person {
            if !(p.scale >= 0.25 && p.scale <= 4.0) {
                return bad("person scale outside [0.25, 4]".into());
            }
            if p.depth_mm == 0 {
                return bad("person depth must be > 0".into());
            }
            if p.segments.is_empty() {
                return bad("person needs at least one segment".into());
            }
            let mut total = 0.0;
            for s in &p.segments {
                if !(s.duration_s > 0.0 && s.duration_s.is_finite()) {
                    return bad("segment durations must be > 0".into());
                }
                if s.kind != SegmentKind::Move && s.part.is_some() {
                    return bad("only move segments name a part".into());
                }
                total += s.duration_s;
            }
            if (total - self.duration_s).abs() > 1e-6 {
                return bad(format!("segments cover {total} s, scene is {} s", self.duration_s));
            }
            let reach = Geometry::new(p).reach();
            if reach.right() as usize > self.width || reach.bottom() as usize > self.height {
                return bad("person does not fit in the frame".into());
            }
        }
        if let Some(tv) = &self.tv {
            for e in &tv.events {
                e.channel_mask()?;
                if !(1..=2).contains(&e.frames) {
                    return bad(format!("flicker at frame {} lasts {} frames, not 1-2", e.frame, e.frames));
                }
            }
        }
        if let Some(pet) = &self.pet {
            if pet.waypoints.is_empty() {
                return bad("pet needs waypoints".into());
            }
            if pet.size[0] == 0 || pet.size[1] == 0 || pet.depth_mm == 0 || pet.stripe_px == 0 {
                return bad("pet size, stripe width and depth must be > 0".into());
            }
            if pet.waypoints.windows(2).any(|w| w[1].t_s.is_nan() || w[1].t_s < w[0].t_s) {
                return bad("pet waypoints must be time-ordered".into());
            }
        }
        Ok(())
    }
}

/// Scaled person geometry.
struct Geometry {
    x: u32,
    y: u32,
    scale: f64,
}

impl Geometry {
    fn new(p: &Person) -> Self {
        Geometry {
            x: p.x,
            y: p.y,
            scale: p.scale,
        }
    }

    fn s(&self, v: u32) -> u32 {
        ((v as f64 * self.scale).round() as u32).max(1)
    }

    fn shift(&self, part: Part) -> (u32, u32) {
        let [dx, dy] = part.geometry().1;
        (if dx == 0 { 0 } else { self.s(dx) }, if dy == 0 { 0 } else { self.s(dy) })
    }

    fn body(&self, body_moved: bool) -> BBox {
        let (dx, _) = self.shift(Part::Body);
        let x = self.x + if body_moved { dx } else { 0 };
        BBox::new(x, self.y, self.s(80), self.s(160))
    }

    fn patch(&self, part: Part, body: &BBox, moved: bool) -> BBox {
        let [px, py, w, h] = part.geometry().0;
        let (dx, dy) = if moved { self.shift(part) } else { (0, 0) };
        BBox::new(
            body.x + (px as f64 * self.scale).round() as u32 + dx,
            body.y + (py as f64 * self.scale).round() as u32 + dy,
            self.s(w),
            self.s(h),
        )
    }

    /// Everything the person can ever cover.
    fn reach(&self) -> BBox {
        let (dx, _) = self.shift(Part::Body);
        let b = self.body(false);
        BBox::new(b.x, b.y, b.w + dx, b.h)
    }
}

/// Per-frame person pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Pose {
    present: bool,
    /// Parity of each part's offset.
    moved: [bool; 5],
    moving: Option<Part>,
}

fn noise_table() -> &'static [f32] {
    static TABLE: OnceLock<Vec<f32>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_7ab1e);
        (0..65536).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
    })
}

/// Renders frames and labels for one script.
pub struct Scene {
    script: SceneScript,
    poses: Vec<Pose>,
    pet_gait: Vec<bool>,
}

impl Scene {
    pub fn new(script: SceneScript) -> Result<Self> {
        script.validate()?;
        let n = script.frame_count();
        let mut poses = vec![Pose::default(); n];
        if let Some(p) = &script.person {
            let mut t0 = 0.0;
            let mut parity = [false; 5];
            for seg in &p.segments {
                let t1 = t0 + seg.duration_s;
                let a = ((t0 * script.fps).round() as usize).min(n);
                let b = ((t1 * script.fps).round() as usize).min(n);
                for pose in &mut poses[a..b] {
                    pose.present = seg.kind != SegmentKind::Absent;
                    if seg.kind == SegmentKind::Move {
                        let part = seg.part.unwrap_or(Part::Body);
                        parity[part.slot()] = !parity[part.slot()];
                        pose.moving = Some(part);
                    }
                    pose.moved = parity;
                }
                t0 = t1;
            }
        }
        let mut scene = Scene {
            script,
            poses,
            pet_gait: Vec::new(),
        };
        let mut gait = false;
        let mut prev = None;
        for i in 0..n {
            let b = scene.pet_box(i);
            if b.is_some() && prev.is_some() && b != prev {
                gait = !gait;
            }
            scene.pet_gait.push(gait);
            prev = b;
        }
        Ok(scene)
    }

    pub fn script(&self) -> &SceneScript {
        &self.script
    }

    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    pub fn person_box(&self, frame: usize) -> Option<BBox> {
        let p = self.script.person.as_ref()?;
        let pose = self.poses[frame];
        pose.present
            .then(|| Geometry::new(p).body(pose.moved[Part::Body.slot()]))
    }

    pub fn pet_box(&self, frame: usize) -> Option<BBox> {
        let pet = self.script.pet.as_ref()?;
        let t = frame as f64 / self.script.fps;
        let wp = &pet.waypoints;
        let (first, last) = (wp[0], wp[wp.len() - 1]);
        if t < first.t_s || t > last.t_s {
            return None;
        }
        let k = wp.windows(2).position(|w| t <= w[1].t_s);
        let (x, y) = match k {
            None => (first.x as f64, first.y as f64),
            Some(k) => {
                let (a, b) = (wp[k], wp[k + 1]);
                let f = if b.t_s > a.t_s { (t - a.t_s) / (b.t_s - a.t_s) } else { 1.0 };
                (
                    a.x as f64 + (b.x as f64 - a.x as f64) * f,
                    a.y as f64 + (b.y as f64 - a.y as f64) * f,
                )
            }
        };
        let b = BBox::new(x.round() as u32, y.round() as u32, pet.size[0], pet.size[1])
            .clip(self.script.width as u32, self.script.height as u32);
        (!b.is_empty()).then_some(b)
    }

    /// Render frame `index`.
    pub fn render(&self, index: usize) -> RgbdFrame {
        let s = &self.script;
        let (w, h) = (s.width, s.height);
        let n = w * h;
        let bg = &s.background;

        let mut base = vec![0u8; 3 * n];
        for c in 0..3 {
            base[c * n..(c + 1) * n].fill(bg.wall_color[c]);
        }
        let mut depth = vec![bg.wall_depth_mm; n];
        let paint = |r: BBox, color: [u8; 3], d: Option<u16>, base: &mut [u8], depth: &mut [u16]| {
            let r = r.clip(w as u32, h as u32);
            for y in r.y as usize..r.bottom() as usize {
                let row = y * w + r.x as usize..y * w + r.right() as usize;
                for c in 0..3 {
                    base[c * n + row.start..c * n + row.end].fill(color[c]);
                }
                if let Some(d) = d {
                    depth[row].fill(d);
                }
            }
        };
        for f in &bg.furniture {
            paint(f.bbox, f.color, Some(f.depth_mm), &mut base, &mut depth);
        }
        if let (Some(p), Some(body)) = (&s.person, self.person_box(index)) {
            let g = Geometry::new(p);
            let pose = self.poses[index];
            paint(body, p.clothing, Some(p.depth_mm), &mut base, &mut depth);
            for part in &Part::ALL[1..] {
                let patch = g.patch(*part, &body, pose.moved[part.slot()]);
                paint(patch, p.skin, None, &mut base, &mut depth);
            }
        }
        if let (Some(pet), Some(b)) = (&s.pet, self.pet_box(index)) {
            paint(b, pet.color, Some(pet.depth_mm), &mut base, &mut depth);
            let phase = self.pet_gait[index] as u32;
            let mut x = 0;
            while x < b.w {
                if (x / pet.stripe_px + phase) % 2 == 1 {
                    let stripe = BBox::new(b.x + x, b.y, pet.stripe_px.min(b.w - x), b.h);
                    paint(stripe, pet.stripe_color, None, &mut base, &mut depth);
                }
                x += pet.stripe_px;
            }
        }

        let scale = bg.luma / luma_planar(&base, n).max(1e-6);

        let mut flicker: Option<(BBox, [f32; 3])> = None;
        if let Some(tv) = &s.tv {
            let mut add = [0f32; 3];
            for e in &tv.events {
                if (e.frame..e.frame + e.frames).contains(&(index as u64)) {
                    let mask = e.channel_mask().expect("validated");
                    for c in 0..3 {
                        if mask[c] {
                            add[c] += e.magnitude as f32;
                        }
                    }
                }
            }
            if add != [0.0; 3] {
                let region = tv.region.unwrap_or(BBox::new(0, 0, w as u32, h as u32));
                flicker = Some((region.clip(w as u32, h as u32), add));
            }
        }

        let table = noise_table();
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(index as u64);
        let csig = s.noise.color_sigma as f32;
        let dfrac = (s.noise.depth_pct / 100.0) as f32;
        let mut color = vec![0u8; 3 * n];
        for i in 0..n {
            let r = rng.next_u64();
            let add = match flicker {
                Some((fr, add)) if fr.contains((i % w) as u32, (i / w) as u32) => add,
                _ => [0.0; 3],
            };
            for c in 0..3 {
                let z = table[((r >> (16 * c)) & 0xffff) as usize];
                let v = base[c * n + i] as f32 * scale as f32 + add[c] + csig * z;
                color[c * n + i] = v.round().clamp(0.0, 255.0) as u8;
            }
            let d = depth[i] as f32;
            let z = table[(r >> 48) as usize];
            let sigma = (dfrac * d).max(if dfrac > 0.0 { 1.0 } else { 0.0 });
            depth[i] = (d + sigma * z).round().clamp(1.0, 65535.0) as u16;
        }
        RgbdFrame::new(index as u64, s.timestamp_ms(index as u64), w, h, color, depth)
            .expect("synthetic frame is well formed")
    }

    pub fn frames(&self) -> impl Iterator<Item = RgbdFrame> + '_ {
        (0..self.frame_count()).map(|i| self.render(i))
    }

    pub fn labels(&self) -> GroundTruth {
        let s = &self.script;
        let n = self.frame_count();
        let mut gt = GroundTruth {
            frame_count: n as u64,
            timestamps_ms: (0..n as u64).map(|i| s.timestamp_ms(i)).collect(),
            ..Default::default()
        };
        let runs = |f: &dyn Fn(&Pose) -> Option<Option<Part>>| {
            let mut out: Vec<LabeledRange> = Vec::new();
            let mut i = 0;
            while i < n {
                match f(&self.poses[i]) {
                    Some(tag) => {
                        let start = i;
                        while i < n && f(&self.poses[i]) == Some(tag) {
                            i += 1;
                        }
                        out.push(LabeledRange {
                            start: start as u64,
                            end: i as u64,
                            part: tag.map(|p| p.name().to_string()),
                        });
                    }
                    None => i += 1,
                }
            }
            out
        };
        gt.person_present = runs(&|p| p.present.then_some(None));
        gt.motion_active = runs(&|p| p.moving.map(Some));
        for r in &gt.person_present {
            gt.transitions.push((r.start, TransitionKind::HumanAppear));
            if (r.end as usize) < n {
                gt.transitions.push((r.end, TransitionKind::HumanDisappear));
            }
        }
        for r in &gt.motion_active {
            gt.transitions.push((r.start, TransitionKind::MotionStart));
            if (r.end as usize) < n {
                gt.transitions.push((r.end, TransitionKind::MotionEnd));
            }
        }
        gt.transitions.sort();
        for i in 0..n {
            if let Some(b) = self.person_box(i) {
                gt.person_boxes.insert(i as u64, vec![b]);
            }
            if let Some(b) = self.pet_box(i) {
                gt.pet_boxes.insert(i as u64, vec![b]);
            }
        }
        if let Some(tv) = &s.tv {
            let mut fl: Vec<(u64, u64)> = tv
                .events
                .iter()
                .filter(|e| e.frame < n as u64)
                .map(|e| (e.frame, e.frames))
                .collect();
            fl.sort();
            gt.flickers = fl;
        }
        gt
    }

    pub fn manifest(&self) -> SequenceManifest {
        let s = &self.script;
        SequenceManifest {
            width: s.width,
            height: s.height,
            frame_count: self.frame_count(),
            nominal_fps: s.fps,
            participant_id: s.participant_id.clone(),
            timestamps_ms: (0..self.frame_count() as u64).map(|i| s.timestamp_ms(i)).collect(),
        }
    }

    /// Write the sequence container and `labels.jsonl` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<GroundTruth> {
        let dir = dir.as_ref();
        let s = &self.script;
        let mut w = SequenceWriter::create(dir, s.width, s.height, s.fps, s.participant_id.clone())?;
        for f in self.frames() {
            w.write_frame(&f)?;
        }
        w.finish()?;
        let gt = self.labels();
        gt.write(dir.join("labels.jsonl"))?;
        Ok(gt)
    }
}

/// Mean Rec. 601 luma of a frame's color image.
pub fn luma(frame: &RgbdFrame) -> f64 {
    luma_planar(frame.color(), frame.pixels())
}
