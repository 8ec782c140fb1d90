//! RGB-D frames and the on-disk sequence container.
//!
//! A container is a directory holding `manifest.txt` and one
//! `frame_%06d.bin` per frame. Each frame record is the R, G and B planes
//! (`W*H` bytes each) followed by `W*H` little-endian `u16` depth samples in
//! millimeters, all row-major. Depth 0 marks an invalid sample.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const MIN_DIMENSION: usize = 32;
pub const DEFAULT_WIDTH: usize = 640;
pub const DEFAULT_HEIGHT: usize = 480;

/// One registered color + depth pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbdFrame {
    pub index: u64,
    pub timestamp_ms: u64,
    width: usize,
    height: usize,
    /// Planar RGB: all R, then all G, then all B.
    color: Vec<u8>,
    depth: Vec<u16>,
}

impl RgbdFrame {
    pub fn new(
        index: u64,
        timestamp_ms: u64,
        width: usize,
        height: usize,
        color: Vec<u8>,
        depth: Vec<u16>,
    ) -> Result<Self> {
        if width < MIN_DIMENSION || height < MIN_DIMENSION {
            return Err(Error::Dimensions(format!(
                "frame {index}: {width}x{height} is below the {MIN_DIMENSION}px minimum"
            )));
        }
        let n = width * height;
        if color.len() != 3 * n {
            return Err(Error::Dimensions(format!(
                "frame {index}: color has {} bytes, expected {}",
                color.len(),
                3 * n
            )));
        }
        if depth.len() != n {
            return Err(Error::Dimensions(format!(
                "frame {index}: depth has {} samples, expected {n}",
                depth.len()
            )));
        }
        Ok(RgbdFrame {
            index,
            timestamp_ms,
            width,
            height,
            color,
            depth,
        })
    }

    /// All-zero frame (black, invalid depth).
    pub fn zeros(index: u64, timestamp_ms: u64, width: usize, height: usize) -> Result<Self> {
        let n = width * height;
        Self::new(index, timestamp_ms, width, height, vec![0; 3 * n], vec![0; n])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Channel plane: 0 = R, 1 = G, 2 = B.
    pub fn plane(&self, c: usize) -> &[u8] {
        let n = self.pixels();
        &self.color[c * n..(c + 1) * n]
    }

    pub fn color(&self) -> &[u8] {
        &self.color
    }

    pub fn color_mut(&mut self) -> &mut [u8] {
        &mut self.color
    }

    pub fn depth(&self) -> &[u16] {
        &self.depth
    }

    pub fn depth_mut(&mut self) -> &mut [u16] {
        &mut self.depth
    }

    pub fn rgb_at(&self, x: usize, y: usize) -> [u8; 3] {
        let n = self.pixels();
        let i = y * self.width + x;
        [self.color[i], self.color[n + i], self.color[2 * n + i]]
    }

    /// Serialized frame record size in bytes.
    pub fn record_len(width: usize, height: usize) -> usize {
        5 * width * height
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::record_len(self.width, self.height));
        out.extend_from_slice(&self.color);
        for d in &self.depth {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out
    }

    /// Decode one frame record. The record must be exactly `5*W*H` bytes.
    pub fn decode(bytes: &[u8], index: u64, timestamp_ms: u64, width: usize, height: usize) -> Result<Self> {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::Frame {
                index,
                msg: "frame dimensions overflow".into(),
            })?;
        let expected = n.checked_mul(5).ok_or_else(|| Error::Frame {
            index,
            msg: "frame dimensions overflow".into(),
        })?;
        if bytes.len() != expected {
            let what = if bytes.len() < expected { "truncated" } else { "oversized" };
            return Err(Error::Frame {
                index,
                msg: format!("{what} record: {} bytes, expected {expected}", bytes.len()),
            });
        }
        let color = bytes[..3 * n].to_vec();
        let depth = bytes[3 * n..]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Self::new(index, timestamp_ms, width, height, color, depth).map_err(|e| Error::Frame {
            index,
            msg: e.to_string(),
        })
    }

    /// Binary PPM (P6) of the color image, used to hand frames to an
    /// external detector.
    pub fn to_ppm(&self) -> Vec<u8> {
        let n = self.pixels();
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(3 * n);
        for i in 0..n {
            out.push(self.color[i]);
            out.push(self.color[n + i]);
            out.push(self.color[2 * n + i]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceManifest {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub nominal_fps: f64,
    pub participant_id: String,
    /// One per frame, milliseconds since sequence start.
    pub timestamps_ms: Vec<u64>,
}

impl SequenceManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |line: usize, msg: String| Err(Error::Manifest { line, msg });
        if self.width < MIN_DIMENSION || self.height < MIN_DIMENSION {
            return bad(0, format!("dimensions {}x{} below minimum", self.width, self.height));
        }
        if !(self.nominal_fps > 0.0 && self.nominal_fps.is_finite()) {
            return bad(0, format!("nominal_fps must be > 0, got {}", self.nominal_fps));
        }
        if self.participant_id.contains('\n') {
            return bad(0, "participant_id contains a newline".into());
        }
        if self.timestamps_ms.len() != self.frame_count {
            return bad(
                0,
                format!(
                    "frame_count is {} but {} timestamps are listed",
                    self.frame_count,
                    self.timestamps_ms.len()
                ),
            );
        }
        for (i, w) in self.timestamps_ms.windows(2).enumerate() {
            if w[1] <= w[0] {
                return bad(0, format!("timestamps not strictly increasing at frame {}", i + 1));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "frame_count={}", self.frame_count);
        let _ = writeln!(s, "nominal_fps={}", self.nominal_fps);
        let _ = writeln!(s, "participant_id={}", self.participant_id);
        for t in &self.timestamps_ms {
            let _ = writeln!(s, "timestamp_ms={t}");
        }
        s
    }

    /// Parse `manifest.txt`: five `key=value` header lines in fixed order,
    /// then one `timestamp_ms=` line per frame.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
            .filter(|(_, l)| !l.is_empty());
        let mut header = |key: &str| -> Result<(usize, String)> {
            let (no, line) = lines.next().ok_or(Error::Manifest {
                line: 0,
                msg: format!("missing `{key}`"),
            })?;
            match line.split_once('=') {
                Some((k, v)) if k == key => Ok((no, v.to_string())),
                _ => Err(Error::Manifest {
                    line: no,
                    msg: format!("expected `{key}=...`, found `{}`", truncate(line)),
                }),
            }
        };
        fn num<T: std::str::FromStr>(no: usize, key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Manifest {
                line: no,
                msg: format!("`{key}` is not a valid number: `{}`", truncate(v)),
            })
        }
        let (no, v) = header("width")?;
        let width = num(no, "width", &v)?;
        let (no, v) = header("height")?;
        let height = num(no, "height", &v)?;
        let (no, v) = header("frame_count")?;
        let frame_count: usize = num(no, "frame_count", &v)?;
        let (no, v) = header("nominal_fps")?;
        let nominal_fps = num(no, "nominal_fps", &v)?;
        let (_, participant_id) = header("participant_id")?;

        let mut timestamps_ms = Vec::new();
        for (no, line) in lines {
            match line.split_once('=') {
                Some(("timestamp_ms", v)) => timestamps_ms.push(num(no, "timestamp_ms", v)?),
                _ => {
                    return Err(Error::Manifest {
                        line: no,
                        msg: format!("expected `timestamp_ms=...`, found `{}`", truncate(line)),
                    })
                }
            }
        }
        let m = SequenceManifest {
            width,
            height,
            frame_count,
            nominal_fps,
            participant_id,
            timestamps_ms,
        };
        m.validate()?;
        Ok(m)
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(40) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub fn frame_file_name(index: u64) -> String {
    format!("frame_{index:06}.bin")
}

/// Streaming container writer; the manifest is written by [`finish`](Self::finish).
pub struct SequenceWriter {
    dir: PathBuf,
    manifest: SequenceManifest,
}

impl SequenceWriter {
    pub fn create(
        dir: impl AsRef<Path>,
        width: usize,
        height: usize,
        nominal_fps: f64,
        participant_id: impl Into<String>,
    ) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(SequenceWriter {
            dir,
            manifest: SequenceManifest {
                width,
                height,
                frame_count: 0,
                nominal_fps,
                participant_id: participant_id.into(),
                timestamps_ms: Vec::new(),
            },
        })
    }

    pub fn write_frame(&mut self, frame: &RgbdFrame) -> Result<()> {
        let m = &mut self.manifest;
        if frame.width() != m.width || frame.height() != m.height {
            return Err(Error::Dimensions(format!(
                "frame {} is {}x{}, sequence is {}x{}",
                frame.index,
                frame.width(),
                frame.height(),
                m.width,
                m.height
            )));
        }
        if frame.index != m.frame_count as u64 {
            return Err(Error::Frame {
                index: frame.index,
                msg: format!("expected frame index {}", m.frame_count),
            });
        }
        if let Some(&last) = m.timestamps_ms.last() {
            if frame.timestamp_ms <= last {
                return Err(Error::NonMonotoneTimestamp {
                    index: frame.index,
                    prev_ms: last,
                    ts_ms: frame.timestamp_ms,
                });
            }
        }
        let path = self.dir.join(frame_file_name(frame.index));
        fs::write(&path, frame.encode()).map_err(|e| Error::io(&path, e))?;
        m.timestamps_ms.push(frame.timestamp_ms);
        m.frame_count += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<SequenceManifest> {
        self.manifest.validate()?;
        let path = self.dir.join(MANIFEST_FILE);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(self.manifest.to_text().as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

/// Write a complete sequence. `manifest.frame_count` and timestamps must
/// agree with `frames`.
pub fn write_sequence<'a>(
    frames: impl IntoIterator<Item = &'a RgbdFrame>,
    manifest: &SequenceManifest,
    dir: impl AsRef<Path>,
) -> Result<SequenceManifest> {
    let mut w = SequenceWriter::create(
        dir,
        manifest.width,
        manifest.height,
        manifest.nominal_fps,
        manifest.participant_id.clone(),
    )?;
    for f in frames {
        if manifest.timestamps_ms.get(f.index as usize) != Some(&f.timestamp_ms) {
            return Err(Error::Frame {
                index: f.index,
                msg: "timestamp disagrees with manifest".into(),
            });
        }
        w.write_frame(f)?;
    }
    if w.manifest.frame_count != manifest.frame_count {
        return Err(Error::Manifest {
            line: 0,
            msg: format!(
                "manifest lists {} frames but {} were written",
                manifest.frame_count, w.manifest.frame_count
            ),
        });
    }
    w.finish()
}

/// Sequential reader over a container directory.
pub struct SequenceReader {
    dir: PathBuf,
    manifest: SequenceManifest,
    next: usize,
}

impl SequenceReader {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingManifest(path))
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        let manifest = SequenceManifest::parse(&text)?;
        Ok(SequenceReader {
            dir,
            manifest,
            next: 0,
        })
    }

    pub fn manifest(&self) -> &SequenceManifest {
        &self.manifest
    }
}

impl Iterator for SequenceReader {
    type Item = Result<RgbdFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.manifest.frame_count {
            return None;
        }
        let index = self.next as u64;
        self.next += 1;
        let path = self.dir.join(frame_file_name(index));
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                self.next = self.manifest.frame_count;
                return Some(Err(Error::Frame {
                    index,
                    msg: format!(
                        "record missing: manifest lists {} frames",
                        self.manifest.frame_count
                    ),
                }));
            }
            Err(e) => return Some(Err(Error::io(&path, e))),
        };
        Some(RgbdFrame::decode(
            &bytes,
            index,
            self.manifest.timestamps_ms[index as usize],
            self.manifest.width,
            self.manifest.height,
        ))
    }
}

/// Read every frame of a container.
pub fn read_sequence(dir: impl AsRef<Path>) -> Result<(SequenceManifest, Vec<RgbdFrame>)> {
    let reader = SequenceReader::open(dir)?;
    let manifest = reader.manifest().clone();
    let frames = reader.collect::<Result<Vec<_>>>()?;
    Ok((manifest, frames))
}
