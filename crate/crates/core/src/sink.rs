//! Output sinks: where a finished display frame goes.

use std::fs::{self, File};
use std::hash::Hasher;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use fnv::FnvHasher;

use crate::error::SinkError;
use crate::pixel::{Channel, PixelFormat, Surface, BYTES_PER_PIXEL};

pub trait OutputSink: Send {
    fn present(&mut self, frame: &Surface<'_>) -> Result<(), SinkError>;
    /// Frames accepted so far.
    fn frames(&self) -> u64;
}

impl<S: OutputSink + ?Sized> OutputSink for Box<S> {
    fn present(&mut self, frame: &Surface<'_>) -> Result<(), SinkError> {
        (**self).present(frame)
    }

    fn frames(&self) -> u64 {
        (**self).frames()
    }
}

/// 64-bit FNV-1a over the visible bytes of every row (pitch padding excluded).
pub fn frame_checksum(frame: &Surface<'_>) -> u64 {
    let mut h = FnvHasher::default();
    let visible = frame.geometry().width() as usize * BYTES_PER_PIXEL;
    for y in 0..frame.geometry().height() {
        h.write(&frame.row(y)[..visible]);
    }
    h.finish()
}

pub fn bytes_checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

#[derive(Debug, Default)]
pub struct NullSink {
    frames: u64,
}

impl NullSink {
    pub fn new() -> Self {
        Self::default()
    }
}

impl OutputSink for NullSink {
    fn present(&mut self, _frame: &Surface<'_>) -> Result<(), SinkError> {
        self.frames += 1;
        Ok(())
    }

    fn frames(&self) -> u64 {
        self.frames
    }
}

/// Hashes every frame and keeps the digests in presentation order.
#[derive(Debug, Default)]
pub struct ChecksumSink {
    checksums: Vec<u64>,
}

impl ChecksumSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn checksums(&self) -> &[u64] {
        &self.checksums
    }

    pub fn last(&self) -> Option<u64> {
        self.checksums.last().copied()
    }

    /// Order-sensitive digest of the whole run.
    pub fn digest(&self) -> u64 {
        let mut h = FnvHasher::default();
        for c in &self.checksums {
            h.write(&c.to_le_bytes());
        }
        h.finish()
    }
}

impl OutputSink for ChecksumSink {
    fn present(&mut self, frame: &Surface<'_>) -> Result<(), SinkError> {
        self.checksums.push(frame_checksum(frame));
        Ok(())
    }

    fn frames(&self) -> u64 {
        self.checksums.len() as u64
    }
}

/// Keeps a tightly packed copy of every frame. For tests.
#[derive(Debug, Default)]
pub struct MemorySink {
    frames: Vec<Vec<u8>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frames_data(&self) -> &[Vec<u8>] {
        &self.frames
    }
}

impl OutputSink for MemorySink {
    fn present(&mut self, frame: &Surface<'_>) -> Result<(), SinkError> {
        let visible = frame.geometry().width() as usize * BYTES_PER_PIXEL;
        let mut copy = Vec::with_capacity(visible * frame.geometry().height() as usize);
        for y in 0..frame.geometry().height() {
            copy.extend_from_slice(&frame.row(y)[..visible]);
        }
        self.frames.push(copy);
        Ok(())
    }

    fn frames(&self) -> u64 {
        self.frames.len() as u64
    }
}

/// A sink that stays inspectable after being handed to its owner.
pub struct SharedSink<S>(pub Arc<Mutex<S>>);

impl<S> SharedSink<S> {
    pub fn new(inner: S) -> (Self, Arc<Mutex<S>>) {
        let shared = Arc::new(Mutex::new(inner));
        (SharedSink(shared.clone()), shared)
    }
}

impl<S: OutputSink> OutputSink for SharedSink<S> {
    fn present(&mut self, frame: &Surface<'_>) -> Result<(), SinkError> {
        self.0.lock().expect("sink lock").present(frame)
    }

    fn frames(&self) -> u64 {
        self.0.lock().expect("sink lock").frames()
    }
}

/// Binary PPM (P6) of a frame. Alpha is dropped.
pub fn encode_ppm(frame: &Surface<'_>) -> Vec<u8> {
    let g = frame.geometry();
    let format = frame.format();
    let (r, gr, b) = (
        format.byte_of(Channel::Red),
        format.byte_of(Channel::Green),
        format.byte_of(Channel::Blue),
    );
    let mut out = format!("P6\n{} {}\n255\n", g.width(), g.height()).into_bytes();
    out.reserve(3 * g.width() as usize * g.height() as usize);
    for y in 0..g.height() {
        for px in frame.row(y)[..g.width() as usize * BYTES_PER_PIXEL].chunks_exact(BYTES_PER_PIXEL) {
            out.extend_from_slice(&[px[r], px[gr], px[b]]);
        }
    }
    out
}

/// Parses a P6 file into `(width, height, rgb)`.
pub fn decode_ppm(bytes: &[u8]) -> Option<(u32, u32, Vec<u8>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return None;
    }
    let width: u32 = fields[1].parse().ok()?;
    let height: u32 = fields[2].parse().ok()?;
    let data = bytes.get(pos..)?;
    (data.len() == 3 * width as usize * height as usize).then(|| (width, height, data.to_vec()))
}

pub const INDEX_FILE: &str = "index.txt";

/// Writes `frame_%06d.ppm` files plus an index of per-file checksums.
pub struct ImageSequenceSink {
    dir: PathBuf,
    index: BufWriter<File>,
    frames: u64,
}

impl ImageSequenceSink {
    /// Fails immediately if `dir` cannot be created or written.
    pub fn new(dir: &Path) -> Result<Self, SinkError> {
        fs::create_dir_all(dir)?;
        let index = BufWriter::new(File::create(dir.join(INDEX_FILE))?);
        Ok(Self {
            dir: dir.to_path_buf(),
            index,
            frames: 0,
        })
    }

    pub fn index_path(&self) -> PathBuf {
        self.dir.join(INDEX_FILE)
    }
}

impl OutputSink for ImageSequenceSink {
    fn present(&mut self, frame: &Surface<'_>) -> Result<(), SinkError> {
        let name = format!("frame_{:06}.ppm", self.frames);
        let bytes = encode_ppm(frame);
        fs::write(self.dir.join(&name), &bytes)?;
        writeln!(self.index, "{name} {:016x}", bytes_checksum(&bytes))?;
        self.index.flush()?;
        self.frames += 1;
        Ok(())
    }

    fn frames(&self) -> u64 {
        self.frames
    }
}

/// Result of re-checking an image sequence against its index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayReport {
    pub frames: usize,
    pub problems: Vec<String>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Verifies every file listed in an index written by [`ImageSequenceSink`].
pub fn replay_index(index: &Path) -> io::Result<ReplayReport> {
    let dir = index.parent().unwrap_or(Path::new("."));
    let mut report = ReplayReport::default();
    for (n, line) in BufReader::new(File::open(index)?).lines().enumerate() {
        let line = line?;
        let Some((name, sum)) = line.split_once(' ') else {
            report.problems.push(format!("line {}: malformed", n + 1));
            continue;
        };
        report.frames += 1;
        let Ok(expected) = u64::from_str_radix(sum.trim(), 16) else {
            report.problems.push(format!("{name}: bad checksum field"));
            continue;
        };
        match fs::read(dir.join(name)) {
            Ok(bytes) if decode_ppm(&bytes).is_none() => {
                report.problems.push(format!("{name}: not a P6 image"))
            }
            Ok(bytes) if bytes_checksum(&bytes) != expected => report.problems.push(format!(
                "{name}: checksum {:016x} != {expected:016x}",
                bytes_checksum(&bytes)
            )),
            Ok(_) => {}
            Err(e) => report.problems.push(format!("{name}: {e}")),
        }
    }
    Ok(report)
}

/// RGB triple of a packed pixel value.
pub fn rgb_of(format: PixelFormat, value: u32) -> [u8; 3] {
    let [r, g, b, _] = format.unpack(value);
    [r, g, b]
}
