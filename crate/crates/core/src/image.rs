//! Pixel-level building blocks shared by the pipeline stages: binary masks,
//! bounding boxes, the depth median filter, binary morphology and connected
//! component labeling.
//!
//! Everything here works on row-major buffers of `width * height` elements.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

/// Axis-aligned pixel rectangle. Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl From<[u32; 4]> for BBox {
    fn from(v: [u32; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u32 {
        self.x.saturating_add(self.w)
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u32 {
        self.y.saturating_add(self.h)
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    /// Clip to a `width x height` frame. May return an empty box.
    pub fn clip(&self, width: u32, height: u32) -> BBox {
        let x0 = self.x.min(width);
        let y0 = self.y.min(height);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Grow by `margin` pixels on every side, clipped to the frame.
    pub fn expand(&self, margin: u32, width: u32, height: u32) -> BBox {
        let x0 = self.x.saturating_sub(margin);
        let y0 = self.y.saturating_sub(margin);
        let x1 = self.right().saturating_add(margin).min(width);
        let y1 = self.bottom().saturating_add(margin).min(height);
        BBox::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }

    pub fn intersection(&self, other: &BBox) -> BBox {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            BBox::default()
        } else {
            BBox::new(x0, y0, x1 - x0, y1 - y0)
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other).area();
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Binary per-pixel mask stored one byte per pixel (0 or 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    /// Build from a 0/1 buffer. Any nonzero byte counts as set.
    pub fn from_bits(width: usize, height: usize, bits: Vec<u8>) -> Self {
        assert_eq!(bits.len(), width * height, "mask buffer size");
        let bits = bits.into_iter().map(|b| (b != 0) as u8).collect();
        Mask {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [u8] {
        &mut self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn clear(&mut self) {
        self.bits.fill(0);
    }

    pub fn fill_rect(&mut self, r: &BBox, v: bool) {
        let r = r.clip(self.width as u32, self.height as u32);
        for y in r.y as usize..r.bottom() as usize {
            let row = &mut self.bits[y * self.width..(y + 1) * self.width];
            row[r.x as usize..r.right() as usize].fill(v as u8);
        }
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits
            .iter()
            .zip(&other.bits)
            .all(|(&a, &b)| a == 0 || b != 0)
    }

    pub fn and_assign(&mut self, other: &Mask) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= b;
        }
    }

    pub fn bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            let row = &self.bits[y * self.width..(y + 1) * self.width];
            for (x, &b) in row.iter().enumerate() {
                if b != 0 {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != usize::MAX)
            .then(|| BBox::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32))
    }
}

// ---------------------------------------------------------------------------
// Depth median filter
// ---------------------------------------------------------------------------

/// Compare-exchange program selecting one rank out of `k*k` values.
struct SelectNetwork {
    padded: usize,
    lo_pads: usize,
    target: usize,
    ops: Vec<(usize, usize, CeKind)>,
}

#[derive(Clone, Copy)]
enum CeKind {
    Both,
    MinOnly,
    MaxOnly,
}

/// Batcher odd-even merge sort on `n` (power of two) wires.
fn batcher_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut p = 1;
    while p < n {
        let mut k = p;
        while k >= 1 {
            let mut j = k % p;
            while j + k < n {
                for i in 0..k.min(n - j - k) {
                    if (i + j) / (2 * p) == (i + j + k) / (2 * p) {
                        pairs.push((i + j, i + j + k));
                    }
                }
                j += 2 * k;
            }
            k /= 2;
        }
        p *= 2;
    }
    pairs
}

impl SelectNetwork {
    fn median(taps: usize) -> Self {
        let padded = taps.next_power_of_two();
        let lo_pads = (padded - taps) / 2;
        let target = lo_pads + taps / 2;
        let pairs = batcher_pairs(padded);

        // Walk backwards keeping only exchanges that feed the target wire.
        let mut needed = vec![false; padded];
        needed[target] = true;
        let mut ops = Vec::new();
        for &(a, b) in pairs.iter().rev() {
            let (na, nb) = (needed[a], needed[b]);
            if !(na || nb) {
                continue;
            }
            let kind = match (na, nb) {
                (true, true) => CeKind::Both,
                (true, false) => CeKind::MinOnly,
                _ => CeKind::MaxOnly,
            };
            ops.push((a, b, kind));
            needed[a] = true;
            needed[b] = true;
        }
        ops.reverse();
        SelectNetwork {
            padded,
            lo_pads,
            target,
            ops,
        }
    }
}

fn median_network(kernel: usize) -> &'static SelectNetwork {
    static K3: OnceLock<SelectNetwork> = OnceLock::new();
    static K5: OnceLock<SelectNetwork> = OnceLock::new();
    static K7: OnceLock<SelectNetwork> = OnceLock::new();
    match kernel {
        3 => K3.get_or_init(|| SelectNetwork::median(9)),
        5 => K5.get_or_init(|| SelectNetwork::median(25)),
        7 => K7.get_or_init(|| SelectNetwork::median(49)),
        _ => panic!("unsupported median kernel {kernel}"),
    }
}

pub const SUPPORTED_MEDIAN_KERNELS: [usize; 3] = [3, 5, 7];

/// `k x k` median of a depth image with replicated borders.
///
/// Zero is the invalid-depth sentinel: it never takes part in a median. A
/// window with no valid sample yields 0, and an even number of valid samples
/// yields the lower middle value.
pub fn median_filter_depth(src: &[u16], width: usize, height: usize, kernel: usize, out: &mut Vec<u16>) {
    assert_eq!(src.len(), width * height);
    assert!(kernel % 2 == 1 && kernel >= 3, "median kernel must be odd and >= 3");
    out.clear();
    out.resize(width * height, 0);
    if width == 0 || height == 0 {
        return;
    }
    let net = median_network(kernel);
    let r = kernel as isize / 2;
    let mut lanes = vec![0u16; net.padded * width];
    for (i, lane) in lanes.chunks_exact_mut(width).enumerate() {
        if i >= net.lo_pads + kernel * kernel {
            lane.fill(u16::MAX);
        }
    }

    for y in 0..height {
        let mut wire = net.lo_pads;
        for dy in -r..=r {
            let sy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
            let row = &src[sy * width..(sy + 1) * width];
            for dx in -r..=r {
                let lane = &mut lanes[wire * width..(wire + 1) * width];
                shifted_copy(row, dx, lane);
                wire += 1;
            }
        }
        for &(a, b, kind) in &net.ops {
            let (lo, hi) = lanes.split_at_mut(b * width);
            let la = &mut lo[a * width..(a + 1) * width];
            let lb = &mut hi[..width];
            match kind {
                CeKind::Both => {
                    for (p, q) in la.iter_mut().zip(lb.iter_mut()) {
                        let (mn, mx) = ((*p).min(*q), (*p).max(*q));
                        *p = mn;
                        *q = mx;
                    }
                }
                CeKind::MinOnly => {
                    for (p, q) in la.iter_mut().zip(lb.iter()) {
                        *p = (*p).min(*q);
                    }
                }
                CeKind::MaxOnly => {
                    for (p, q) in la.iter().zip(lb.iter_mut()) {
                        *q = (*p).max(*q);
                    }
                }
            }
        }
        out[y * width..(y + 1) * width]
            .copy_from_slice(&lanes[net.target * width..(net.target + 1) * width]);
    }

    if src.contains(&0) {
        fix_invalid_windows(src, width, height, kernel, out);
    }
}

/// `dst[x] = row[clamp(x + dx)]`.
fn shifted_copy(row: &[u16], dx: isize, dst: &mut [u16]) {
    let w = row.len();
    if dx == 0 {
        dst.copy_from_slice(row);
    } else if dx > 0 {
        let d = (dx as usize).min(w);
        dst[..w - d].copy_from_slice(&row[d..]);
        dst[w - d..].fill(row[w - 1]);
    } else {
        let d = ((-dx) as usize).min(w);
        dst[d..].copy_from_slice(&row[..w - d]);
        dst[..d].fill(row[0]);
    }
}

/// Recompute, excluding zeros, every output whose window touches an invalid pixel.
fn fix_invalid_windows(src: &[u16], width: usize, height: usize, kernel: usize, out: &mut [u16]) {
    let r = kernel / 2;
    let invalid: Vec<u8> = src.iter().map(|&d| (d == 0) as u8).collect();
    let near = dilate_rect(&invalid, width, height, r);
    let mut buf = Vec::with_capacity(kernel * kernel);
    for y in 0..height {
        for x in 0..width {
            if near[y * width + x] == 0 {
                continue;
            }
            buf.clear();
            for dy in -(r as isize)..=r as isize {
                let sy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
                for dx in -(r as isize)..=r as isize {
                    let sx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
                    let d = src[sy * width + sx];
                    if d != 0 {
                        buf.push(d);
                    }
                }
            }
            out[y * width + x] = if buf.is_empty() {
                0
            } else {
                let mid = (buf.len() - 1) / 2;
                *buf.select_nth_unstable(mid).1
            };
        }
    }
}

/// Reference median used by tests: direct gather and sort per pixel.
#[doc(hidden)]
pub fn median_filter_depth_naive(src: &[u16], width: usize, height: usize, kernel: usize) -> Vec<u16> {
    let r = (kernel / 2) as isize;
    let mut out = vec![0; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut v = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let sy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
                    let sx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
                    let d = src[sy * width + sx];
                    if d != 0 {
                        v.push(d);
                    }
                }
            }
            v.sort_unstable();
            out[y * width + x] = if v.is_empty() { 0 } else { v[(v.len() - 1) / 2] };
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Binary morphology
// ---------------------------------------------------------------------------

/// Dilation by a `(2r+1)^2` square; out-of-frame pixels are ignored.
fn dilate_rect(src: &[u8], width: usize, height: usize, r: usize) -> Vec<u8> {
    let mut tmp = vec![0u8; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        let dst = &mut tmp[y * width..(y + 1) * width];
        for (x, d) in dst.iter_mut().enumerate() {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(width);
            *d = row[lo..hi].iter().any(|&b| b != 0) as u8;
        }
    }
    let mut out = vec![0u8; src.len()];
    for y in 0..height {
        let lo = y.saturating_sub(r);
        let hi = (y + r + 1).min(height);
        for yy in lo..hi {
            let srow = &tmp[yy * width..(yy + 1) * width];
            let drow = &mut out[y * width..(y + 1) * width];
            for (d, &s) in drow.iter_mut().zip(srow) {
                *d |= s;
            }
        }
    }
    out
}

/// Erosion by a `(2r+1)^2` square; out-of-frame pixels are ignored.
fn erode_rect(src: &[u8], width: usize, height: usize, r: usize) -> Vec<u8> {
    let mut tmp = vec![0u8; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        let dst = &mut tmp[y * width..(y + 1) * width];
        for x in 0..width {
            if row[x] == 0 {
                continue;
            }
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(width);
            dst[x] = row[lo..hi].iter().all(|&b| b != 0) as u8;
        }
    }
    let mut out = vec![1u8; src.len()];
    for y in 0..height {
        let lo = y.saturating_sub(r);
        let hi = (y + r + 1).min(height);
        for yy in lo..hi {
            let srow = &tmp[yy * width..(yy + 1) * width];
            let drow = &mut out[y * width..(y + 1) * width];
            for (d, &s) in drow.iter_mut().zip(srow) {
                *d &= s;
            }
        }
    }
    out
}

/// 3x3 morphological opening (erosion followed by dilation).
pub fn open3(mask: &Mask) -> Mask {
    let (w, h) = (mask.width, mask.height);
    let eroded = erode_rect(&mask.bits, w, h, 1);
    Mask {
        width: w,
        height: h,
        bits: dilate_rect(&eroded, w, h, 1),
    }
}

/// Binary `k x k` median with zero padding outside the frame: a pixel is set
/// when more than half of the `k*k` window is set.
pub fn majority_filter(mask: &Mask, kernel: usize) -> Mask {
    let (w, h) = (mask.width, mask.height);
    let r = kernel / 2;
    let need = (kernel * kernel / 2 + 1) as u16;
    let mut hsum = vec![0u16; w * h];
    for y in 0..h {
        let row = &mask.bits[y * w..(y + 1) * w];
        let dst = &mut hsum[y * w..(y + 1) * w];
        let mut acc: u16 = row[..r.min(w)].iter().map(|&b| b as u16).sum();
        for x in 0..w {
            if x + r < w {
                acc += row[x + r] as u16;
            }
            if x > r {
                acc -= row[x - r - 1] as u16;
            }
            dst[x] = acc;
        }
    }
    let mut out = Mask::new(w, h);
    let mut acc = vec![0u16; w];
    for row in hsum.chunks_exact(w).take(r.min(h)) {
        for (a, &s) in acc.iter_mut().zip(row) {
            *a += s;
        }
    }
    for y in 0..h {
        if y + r < h {
            for (a, &s) in acc.iter_mut().zip(&hsum[(y + r) * w..(y + r + 1) * w]) {
                *a += s;
            }
        }
        if y > r {
            for (a, &s) in acc.iter_mut().zip(&hsum[(y - r - 1) * w..(y - r) * w]) {
                *a -= s;
            }
        }
        for (o, &a) in out.bits[y * w..(y + 1) * w].iter_mut().zip(&acc) {
            *o = (a >= need) as u8;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Connected components
// ---------------------------------------------------------------------------

/// Statistics of one 8-connected component.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub label: u32,
    pub area: usize,
    pub bbox: BBox,
    /// Mean of valid (nonzero) depth samples, mm. 0 when none are valid.
    pub mean_depth: f64,
    /// Population standard deviation of valid depth samples, mm.
    pub depth_std: f64,
}

/// Per-pixel component labels (0 = background) plus component statistics,
/// ordered by label.
#[derive(Debug, Clone)]
pub struct Labeling {
    pub labels: Vec<u32>,
    pub components: Vec<Component>,
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let (ra, rb) = (find(parent, a), find(parent, b));
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

/// Two-pass 8-connected labeling. Depth statistics use `depth` when given.
pub fn label_components(mask: &Mask, depth: Option<&[u16]>) -> Labeling {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mask.bits[i] == 0 {
                continue;
            }
            let mut neigh = [0u32; 4];
            let mut n = 0;
            if x > 0 && labels[i - 1] != 0 {
                neigh[n] = labels[i - 1];
                n += 1;
            }
            if y > 0 {
                let up = i - w;
                if x > 0 && labels[up - 1] != 0 {
                    neigh[n] = labels[up - 1];
                    n += 1;
                }
                if labels[up] != 0 {
                    neigh[n] = labels[up];
                    n += 1;
                }
                if x + 1 < w && labels[up + 1] != 0 {
                    neigh[n] = labels[up + 1];
                    n += 1;
                }
            }
            if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                labels[i] = l;
            } else {
                let mut l = neigh[0];
                for &m in &neigh[1..n] {
                    if m != l {
                        l = union(&mut parent, l, m);
                    }
                }
                labels[i] = find(&mut parent, l);
            }
        }
    }

    // Compact roots into consecutive labels 1..=k.
    let mut remap = vec![0u32; parent.len()];
    let mut next = 0u32;
    for l in 1..parent.len() as u32 {
        let r = find(&mut parent, l);
        if r == l {
            next += 1;
            remap[l as usize] = next;
        }
    }
    for l in 1..parent.len() {
        let r = find(&mut parent, l as u32);
        remap[l] = remap[r as usize];
    }

    struct Acc {
        area: usize,
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
        n: u64,
        sum: f64,
        sumsq: f64,
    }
    let mut acc: Vec<Acc> = (0..next)
        .map(|_| Acc {
            area: 0,
            x0: u32::MAX,
            y0: u32::MAX,
            x1: 0,
            y1: 0,
            n: 0,
            sum: 0.0,
            sumsq: 0.0,
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if labels[i] == 0 {
                continue;
            }
            let l = remap[labels[i] as usize];
            labels[i] = l;
            let a = &mut acc[l as usize - 1];
            a.area += 1;
            a.x0 = a.x0.min(x as u32);
            a.y0 = a.y0.min(y as u32);
            a.x1 = a.x1.max(x as u32 + 1);
            a.y1 = a.y1.max(y as u32 + 1);
            if let Some(d) = depth {
                let v = d[i];
                if v != 0 {
                    a.n += 1;
                    a.sum += v as f64;
                    a.sumsq += v as f64 * v as f64;
                }
            }
        }
    }
    let components = acc
        .into_iter()
        .enumerate()
        .map(|(k, a)| {
            let (mean, std) = if a.n > 0 {
                let m = a.sum / a.n as f64;
                let var = (a.sumsq / a.n as f64 - m * m).max(0.0);
                (m, var.sqrt())
            } else {
                (0.0, 0.0)
            };
            Component {
                label: k as u32 + 1,
                area: a.area,
                bbox: BBox::new(a.x0, a.y0, a.x1 - a.x0, a.y1 - a.y0),
                mean_depth: mean,
                depth_std: std,
            }
        })
        .collect();
    Labeling { labels, components }
}

/// Mean luma (Rec. 601) of a planar RGB buffer.
pub fn luma_planar(color: &[u8], pixels: usize) -> f64 {
    if pixels == 0 {
        return 0.0;
    }
    let (r, rest) = color.split_at(pixels);
    let (g, b) = rest.split_at(pixels);
    let (mut sr, mut sg, mut sb) = (0u64, 0u64, 0u64);
    for i in 0..pixels {
        sr += r[i] as u64;
        sg += g[i] as u64;
        sb += b[i] as u64;
    }
    (0.299 * sr as f64 + 0.587 * sg as f64 + 0.114 * sb as f64) / pixels as f64
}
