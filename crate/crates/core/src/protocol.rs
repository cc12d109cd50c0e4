//! Shared-memory layout between one client and the compositor.
//!
//! ```text
//! offset  size  field
//!      0     4  ready            0 until the server has written everything else
//!      4     4  magic            0x4A46_4243
//!      8     4  width
//!     12     4  height
//!     16     4  pitch            bytes per row
//!     20     4  framerate        minimal acceptable fps
//!     24     8  timeout          watchdog budget, microseconds
//!     32     4  formatCount
//!     36     4  formatOffset     -> formatCount x u32 format tags
//!     40     4  frameCount       queue depth
//!     44     4  frameOffset      -> frameCount x {status u32, pad u32, sequence u64}
//!     48     4  framePadding     alignment of every frame pixel block
//!     52     4  frameDataOffset  -> frame 0 pixels; frame i at + i * stride
//!     56     4  privateOffset    -> 256-byte implementation area
//!     60     4  reserved
//! ```
//!
//! All fields are little-endian and every reference is an offset from the
//! region start, so each side may map the region at its own address.
//! `stride = round_up(pitch * height, framePadding)`.
//!
//! The private area holds, at these offsets:
//!
//! ```text
//!      0  u32  negotiated format tag + 1 (0 = not negotiated)   client
//!      4  u32  connection state (0 active, 1 disconnected)      server
//!      8  u64  heartbeat counter                                client
//!     16  u64  time of last heartbeat, microseconds             client
//!     24  u64  frames submitted                                 client
//!     32  u64  last heartbeat seen                              server
//! ```

use std::fmt;
use std::path::Path;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use crate::clock::Clock;
use crate::error::{PixelError, ProtocolError};
use crate::pixel::{FramebufferContext, PixelFormat, SurfaceGeometry, MAX_QUEUE_DEPTH};
use crate::queue::{FrameState, Producer, RegionStatusWords, STATUS_RECORD_SIZE};
use crate::region::Region;

pub const MAGIC: u32 = 0x4A46_4243;
pub const HEADER_SIZE: usize = 64;
pub const PRIVATE_AREA_SIZE: usize = 256;
pub const DEFAULT_FRAME_PADDING: u32 = 4096;
/// Largest format table accepted from a peer.
pub const MAX_FORMATS: u32 = 64;

const OFF_READY: usize = 0;
const OFF_MAGIC: usize = 4;
const OFF_WIDTH: usize = 8;
const OFF_HEIGHT: usize = 12;
const OFF_PITCH: usize = 16;
const OFF_FRAMERATE: usize = 20;
const OFF_TIMEOUT: usize = 24;
const OFF_FORMAT_COUNT: usize = 32;
const OFF_FORMAT_OFFSET: usize = 36;
const OFF_FRAME_COUNT: usize = 40;
const OFF_FRAME_OFFSET: usize = 44;
const OFF_FRAME_PADDING: usize = 48;
const OFF_FRAME_DATA_OFFSET: usize = 52;
const OFF_PRIVATE_OFFSET: usize = 56;

const PRIV_FORMAT: usize = 0;
const PRIV_STATE: usize = 4;
const PRIV_HEARTBEAT: usize = 8;
const PRIV_HEARTBEAT_TIME: usize = 16;
const PRIV_FRAMES: usize = 24;
const PRIV_ACK: usize = 32;

fn round_up(value: u64, align: u64) -> u64 {
    value.div_ceil(align) * align
}

/// The `parameters` block of the header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramebufferParams {
    pub width: u32,
    pub height: u32,
    pub pitch: u32,
    pub framerate: u32,
    pub timeout_us: u64,
}

/// Decoded header fields, exactly as stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositorHeader {
    pub ready: u32,
    pub magic: u32,
    pub params: FramebufferParams,
    pub format_count: u32,
    pub format_offset: u32,
    pub frame_count: u32,
    pub frame_offset: u32,
    pub frame_padding: u32,
    pub frame_data_offset: u32,
    pub private_offset: u32,
}

impl CompositorHeader {
    pub fn encode(&self) -> [u8; HEADER_SIZE] {
        let mut out = [0u8; HEADER_SIZE];
        let mut put32 = |off: usize, v: u32| out[off..off + 4].copy_from_slice(&v.to_le_bytes());
        put32(OFF_READY, self.ready);
        put32(OFF_MAGIC, self.magic);
        put32(OFF_WIDTH, self.params.width);
        put32(OFF_HEIGHT, self.params.height);
        put32(OFF_PITCH, self.params.pitch);
        put32(OFF_FRAMERATE, self.params.framerate);
        put32(OFF_FORMAT_COUNT, self.format_count);
        put32(OFF_FORMAT_OFFSET, self.format_offset);
        put32(OFF_FRAME_COUNT, self.frame_count);
        put32(OFF_FRAME_OFFSET, self.frame_offset);
        put32(OFF_FRAME_PADDING, self.frame_padding);
        put32(OFF_FRAME_DATA_OFFSET, self.frame_data_offset);
        put32(OFF_PRIVATE_OFFSET, self.private_offset);
        out[OFF_TIMEOUT..OFF_TIMEOUT + 8].copy_from_slice(&self.params.timeout_us.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8; HEADER_SIZE]) -> Self {
        let get32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        CompositorHeader {
            ready: get32(OFF_READY),
            magic: get32(OFF_MAGIC),
            params: FramebufferParams {
                width: get32(OFF_WIDTH),
                height: get32(OFF_HEIGHT),
                pitch: get32(OFF_PITCH),
                framerate: get32(OFF_FRAMERATE),
                timeout_us: u64::from_le_bytes(
                    bytes[OFF_TIMEOUT..OFF_TIMEOUT + 8].try_into().unwrap(),
                ),
            },
            format_count: get32(OFF_FORMAT_COUNT),
            format_offset: get32(OFF_FORMAT_OFFSET),
            frame_count: get32(OFF_FRAME_COUNT),
            frame_offset: get32(OFF_FRAME_OFFSET),
            frame_padding: get32(OFF_FRAME_PADDING),
            frame_data_offset: get32(OFF_FRAME_DATA_OFFSET),
            private_offset: get32(OFF_PRIVATE_OFFSET),
        }
    }

    /// `round_up(pitch * height, framePadding)`, if the padding is usable.
    pub fn frame_stride(&self) -> Option<u64> {
        if self.frame_padding == 0 {
            return None;
        }
        let frame = u64::from(self.params.pitch) * u64::from(self.params.height);
        Some(round_up(frame, u64::from(self.frame_padding)))
    }

    pub fn required_size(&self) -> Option<u64> {
        u64::from(self.frame_count)
            .checked_mul(self.frame_stride()?)?
            .checked_add(u64::from(self.frame_data_offset))
    }
}

/// What the server wants to expose to one client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionConfig {
    pub geometry: SurfaceGeometry,
    pub formats: Vec<PixelFormat>,
    pub framerate: u32,
    pub timeout_us: u64,
    pub queue_depth: u32,
    pub frame_padding: u32,
}

impl RegionConfig {
    pub fn new(
        geometry: SurfaceGeometry,
        formats: Vec<PixelFormat>,
        framerate: u32,
        timeout_us: u64,
        queue_depth: u32,
    ) -> Self {
        Self {
            geometry,
            formats,
            framerate,
            timeout_us,
            queue_depth,
            frame_padding: DEFAULT_FRAME_PADDING,
        }
    }

    pub fn with_frame_padding(mut self, padding: u32) -> Self {
        self.frame_padding = padding;
        self
    }

    fn check(&self) -> Result<(), ProtocolError> {
        if self.formats.is_empty() || self.formats.len() > MAX_FORMATS as usize {
            return Err(ProtocolError::InvalidConfig(format!(
                "format table must hold 1..={MAX_FORMATS} entries"
            )));
        }
        if self.frame_padding < 4 || !self.frame_padding.is_power_of_two() {
            return Err(ProtocolError::InvalidConfig(format!(
                "frame padding {} is not a power of two >= 4",
                self.frame_padding
            )));
        }
        FramebufferContext::new(
            self.geometry,
            self.formats[0],
            self.framerate,
            self.timeout_us,
            self.queue_depth,
        )?;
        Ok(())
    }
}

/// Offsets of every table in a region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLayout {
    pub header: CompositorHeader,
    pub formats: Vec<PixelFormat>,
    pub frame_stride: usize,
}

impl RegionLayout {
    pub fn for_config(config: &RegionConfig) -> Result<RegionLayout, ProtocolError> {
        config.check()?;
        let format_offset = HEADER_SIZE as u64;
        let frame_offset = round_up(format_offset + 4 * config.formats.len() as u64, 16);
        let private_offset = round_up(
            frame_offset + STATUS_RECORD_SIZE as u64 * u64::from(config.queue_depth),
            16,
        );
        let padding = u64::from(config.frame_padding);
        let frame_data_offset = round_up(private_offset + PRIVATE_AREA_SIZE as u64, padding);
        let to_u32 = |v: u64| {
            u32::try_from(v).map_err(|_| ProtocolError::InvalidConfig("offset overflow".into()))
        };
        let header = CompositorHeader {
            ready: 0,
            magic: MAGIC,
            params: FramebufferParams {
                width: config.geometry.width(),
                height: config.geometry.height(),
                pitch: config.geometry.pitch(),
                framerate: config.framerate,
                timeout_us: config.timeout_us,
            },
            format_count: config.formats.len() as u32,
            format_offset: to_u32(format_offset)?,
            frame_count: config.queue_depth,
            frame_offset: to_u32(frame_offset)?,
            frame_padding: config.frame_padding,
            frame_data_offset: to_u32(frame_data_offset)?,
            private_offset: to_u32(private_offset)?,
        };
        let stride = header.frame_stride().expect("padding checked");
        Ok(RegionLayout {
            header,
            formats: config.formats.clone(),
            frame_stride: usize::try_from(stride)
                .map_err(|_| ProtocolError::InvalidConfig("frame too large".into()))?,
        })
    }

    pub fn required_size(&self) -> usize {
        self.header.frame_data_offset as usize
            + self.header.frame_count as usize * self.frame_stride
    }

    pub fn params(&self) -> FramebufferParams {
        self.header.params
    }

    pub fn frame_count(&self) -> usize {
        self.header.frame_count as usize
    }

    pub fn geometry(&self) -> SurfaceGeometry {
        let p = self.header.params;
        SurfaceGeometry::new(p.width, p.height, p.pitch, 4).expect("validated geometry")
    }

    pub fn frame_offset(&self, slot: usize) -> usize {
        self.header.frame_data_offset as usize + slot * self.frame_stride
    }

    /// Bytes of one frame's pixels (without the padding tail).
    pub fn frame_len(&self) -> usize {
        self.header.params.pitch as usize * self.header.params.height as usize
    }

    pub fn status_offset(&self) -> usize {
        self.header.frame_offset as usize
    }

    pub fn private_offset(&self) -> usize {
        self.header.private_offset as usize
    }

    /// Byte range covering the header and format table, which never change
    /// after publication.
    pub fn immutable_len(&self) -> usize {
        self.header.format_offset as usize + 4 * self.header.format_count as usize
    }
}

/// Lays out a region image in `buf` with `ready = 0`.
///
/// Writes the header, format table, zeroed status records and the zeroed
/// private area. Pixel storage is left as is. Publishing (`ready = 1`) is a
/// separate step, see [`publish`].
pub fn encode_header(config: &RegionConfig, buf: &mut [u8]) -> Result<RegionLayout, ProtocolError> {
    let layout = RegionLayout::for_config(config)?;
    let required = layout.required_size();
    if buf.len() < required {
        return Err(ProtocolError::Capacity {
            required,
            available: buf.len(),
        });
    }
    buf[..layout.header.frame_data_offset as usize].fill(0);
    buf[..HEADER_SIZE].copy_from_slice(&layout.header.encode());
    let table = layout.header.format_offset as usize;
    for (i, format) in layout.formats.iter().enumerate() {
        buf[table + 4 * i..table + 4 * i + 4].copy_from_slice(&format.tag().to_le_bytes());
    }
    Ok(layout)
}

/// Sets `ready = 1` with release ordering. Everything written to the region
/// before this call is visible to a client that observes the flag.
pub fn publish(region: &Region) {
    region.atomic_u32(OFF_READY).store(1u32.to_le(), Ordering::Release);
}

/// Bounds-checked random access to region bytes.
pub trait ByteSource {
    fn byte_len(&self) -> usize;
    /// Fills `out` from `offset`; returns false, reading nothing, if out of range.
    fn read_at(&self, offset: usize, out: &mut [u8]) -> bool;
}

impl ByteSource for [u8] {
    fn byte_len(&self) -> usize {
        self.len()
    }

    fn read_at(&self, offset: usize, out: &mut [u8]) -> bool {
        match offset.checked_add(out.len()).and_then(|end| self.get(offset..end)) {
            Some(src) => {
                out.copy_from_slice(src);
                true
            }
            None => false,
        }
    }
}

impl ByteSource for Vec<u8> {
    fn byte_len(&self) -> usize {
        self.len()
    }

    fn read_at(&self, offset: usize, out: &mut [u8]) -> bool {
        self.as_slice().read_at(offset, out)
    }
}

impl ByteSource for Region {
    fn byte_len(&self) -> usize {
        self.len()
    }

    fn read_at(&self, offset: usize, out: &mut [u8]) -> bool {
        self.read_into(offset, out)
    }
}

fn read_u32<S: ByteSource + ?Sized>(src: &S, offset: usize) -> Option<u32> {
    let mut b = [0u8; 4];
    src.read_at(offset, &mut b).then(|| u32::from_le_bytes(b))
}

/// Tables referenced from the header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Header,
    FormatTable,
    FrameStatus,
    PrivateArea,
    FrameData,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::Header => "header",
            Field::FormatTable => "formatOffset",
            Field::FrameStatus => "frameOffset",
            Field::PrivateArea => "privateOffset",
            Field::FrameData => "frameDataOffset",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One broken invariant found by [`validate_region`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    RegionTooSmall { len: usize },
    NotReady { value: u32 },
    BadMagic { found: u32 },
    BadGeometry { width: u32, height: u32, pitch: u32 },
    BadTiming { framerate: u32, timeout_us: u64 },
    BadFormatCount { count: u32 },
    BadFrameCount { count: u32 },
    BadPadding { padding: u32 },
    OutOfBounds { field: Field, offset: u64, len: u64, region_len: usize },
    Misaligned { field: Field, offset: u64, align: u64 },
    Overlap { first: Field, second: Field },
    BadFormatTag { index: u32, value: u32 },
    BadStatus { slot: u32, value: u32 },
    BadNegotiation { value: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RegionTooSmall { len } => write!(f, "region of {len} bytes cannot hold a header"),
            Violation::NotReady { value } => write!(f, "ready flag is {value}, not 1"),
            Violation::BadMagic { found } => write!(f, "magic {found:#010x} != {MAGIC:#010x}"),
            Violation::BadGeometry { width, height, pitch } => {
                write!(f, "invalid geometry {width}x{height} pitch {pitch}")
            }
            Violation::BadTiming { framerate, timeout_us } => {
                write!(f, "invalid timing: {framerate} fps with {timeout_us}us timeout")
            }
            Violation::BadFormatCount { count } => write!(f, "formatCount {count} out of range"),
            Violation::BadFrameCount { count } => write!(f, "frameCount {count} out of range"),
            Violation::BadPadding { padding } => write!(f, "framePadding {padding} is not a power of two >= 4"),
            Violation::OutOfBounds { field, offset, len, region_len } => write!(
                f,
                "{field} table [{offset}, {}) exceeds region of {region_len} bytes",
                offset + len
            ),
            Violation::Misaligned { field, offset, align } => {
                write!(f, "{field} {offset} not aligned to {align}")
            }
            Violation::Overlap { first, second } => write!(f, "{first} table overlaps {second} table"),
            Violation::BadFormatTag { index, value } => {
                write!(f, "format table entry {index} has unknown tag {value}")
            }
            Violation::BadStatus { slot, value } => write!(f, "slot {slot} status word {value:#x} invalid"),
            Violation::BadNegotiation { value } => write!(f, "negotiated format field {value} invalid"),
        }
    }
}

/// Checks every layout invariant of a published region.
///
/// Reads the header, format table, status records and private area, never
/// pixel data. An empty result means the region is safe to attach to.
pub fn validate_region<S: ByteSource + ?Sized>(src: &S) -> Vec<Violation> {
    let mut out = Vec::new();
    let region_len = src.byte_len();
    let mut raw = [0u8; HEADER_SIZE];
    if !src.read_at(0, &mut raw) {
        out.push(Violation::RegionTooSmall { len: region_len });
        return out;
    }
    let h = CompositorHeader::decode(&raw);
    if h.ready != 1 {
        out.push(Violation::NotReady { value: h.ready });
    }
    if h.magic != MAGIC {
        out.push(Violation::BadMagic { found: h.magic });
    }
    let p = h.params;
    let geometry_ok = p.width > 0
        && p.height > 0
        && u64::from(p.pitch) >= 4 * u64::from(p.width)
        && p.pitch % 4 == 0;
    if !geometry_ok {
        out.push(Violation::BadGeometry {
            width: p.width,
            height: p.height,
            pitch: p.pitch,
        });
    }
    if p.framerate == 0
        || p.timeout_us == 0
        || u128::from(p.timeout_us) * u128::from(p.framerate) < 2_000_000
    {
        out.push(Violation::BadTiming {
            framerate: p.framerate,
            timeout_us: p.timeout_us,
        });
    }
    let formats_ok = (1..=MAX_FORMATS).contains(&h.format_count);
    if !formats_ok {
        out.push(Violation::BadFormatCount { count: h.format_count });
    }
    let frames_ok = (1..=MAX_QUEUE_DEPTH).contains(&h.frame_count);
    if !frames_ok {
        out.push(Violation::BadFrameCount { count: h.frame_count });
    }
    let padding_ok = h.frame_padding >= 4 && h.frame_padding.is_power_of_two();
    if !padding_ok {
        out.push(Violation::BadPadding { padding: h.frame_padding });
    }

    let mut extents: Vec<(Field, u64, u64)> = vec![(Field::Header, 0, HEADER_SIZE as u64)];
    let mut in_bounds = |field: Field, offset: u32, len: u64, align: u64, out: &mut Vec<Violation>| {
        let offset = u64::from(offset);
        let mut ok = true;
        if offset % align != 0 {
            out.push(Violation::Misaligned { field, offset, align });
            ok = false;
        }
        if offset.checked_add(len).map_or(true, |end| end > region_len as u64) {
            out.push(Violation::OutOfBounds { field, offset, len, region_len });
            ok = false;
        }
        if ok {
            extents.push((field, offset, len));
        }
        ok
    };

    let table_ok = formats_ok
        && in_bounds(Field::FormatTable, h.format_offset, 4 * u64::from(h.format_count), 4, &mut out);
    let status_ok = frames_ok
        && in_bounds(
            Field::FrameStatus,
            h.frame_offset,
            STATUS_RECORD_SIZE as u64 * u64::from(h.frame_count),
            STATUS_RECORD_SIZE as u64,
            &mut out,
        );
    let private_ok = in_bounds(Field::PrivateArea, h.private_offset, PRIVATE_AREA_SIZE as u64, 8, &mut out);
    if geometry_ok && frames_ok && padding_ok {
        let stride = h.frame_stride().unwrap();
        in_bounds(
            Field::FrameData,
            h.frame_data_offset,
            stride.saturating_mul(u64::from(h.frame_count)),
            u64::from(h.frame_padding),
            &mut out,
        );
    }

    for (i, a) in extents.iter().enumerate() {
        for b in &extents[i + 1..] {
            if a.1 < b.1 + b.2 && b.1 < a.1 + a.2 {
                out.push(Violation::Overlap { first: a.0, second: b.0 });
            }
        }
    }

    if table_ok {
        for index in 0..h.format_count {
            let value = read_u32(src, h.format_offset as usize + 4 * index as usize).unwrap_or(u32::MAX);
            if PixelFormat::from_tag(value).is_none() {
                out.push(Violation::BadFormatTag { index, value });
            }
        }
    }
    if status_ok {
        for slot in 0..h.frame_count {
            let off = h.frame_offset as usize + STATUS_RECORD_SIZE * slot as usize;
            let value = read_u32(src, off).unwrap_or(u32::MAX);
            if FrameState::from_word(value).is_none() {
                out.push(Violation::BadStatus { slot, value });
            }
        }
    }
    if private_ok {
        let value = read_u32(src, h.private_offset as usize + PRIV_FORMAT).unwrap_or(u32::MAX);
        if value > PixelFormat::ALL.len() as u32 {
            out.push(Violation::BadNegotiation { value });
        }
    }
    out
}

/// Layout of a region that passed validation.
fn layout_from_valid<S: ByteSource + ?Sized>(src: &S) -> RegionLayout {
    let mut raw = [0u8; HEADER_SIZE];
    assert!(src.read_at(0, &mut raw));
    let header = CompositorHeader::decode(&raw);
    let formats = (0..header.format_count as usize)
        .map(|i| {
            let tag = read_u32(src, header.format_offset as usize + 4 * i).expect("validated table");
            PixelFormat::from_tag(tag).expect("validated tag")
        })
        .collect();
    RegionLayout {
        header,
        formats,
        frame_stride: header.frame_stride().expect("validated padding") as usize,
    }
}

/// Connection state as written by the server into the private area.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionState {
    Active,
    Disconnected,
}

/// Snapshot of the client's liveness counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Heartbeat {
    pub count: u64,
    pub time_us: u64,
    pub frames: u64,
}

/// Accessors for the 256-byte private area.
#[derive(Clone)]
pub struct PrivateArea {
    region: Arc<Region>,
    offset: usize,
}

impl PrivateArea {
    pub fn new(region: Arc<Region>, offset: usize) -> Self {
        assert!(region.contains(offset, PRIVATE_AREA_SIZE) && offset % 8 == 0);
        Self { region, offset }
    }

    fn load64(&self, field: usize, order: Ordering) -> u64 {
        u64::from_le(self.region.atomic_u64(self.offset + field).load(order))
    }

    fn store64(&self, field: usize, value: u64, order: Ordering) {
        self.region.atomic_u64(self.offset + field).store(value.to_le(), order)
    }

    /// `None` if not negotiated yet, `Some(Err(raw))` for an invalid value.
    pub fn negotiated_format(&self) -> Option<Result<PixelFormat, u32>> {
        let raw = u32::from_le(self.region.atomic_u32(self.offset + PRIV_FORMAT).load(Ordering::Acquire));
        match raw {
            0 => None,
            v => Some(PixelFormat::from_tag(v - 1).ok_or(v)),
        }
    }

    pub fn set_negotiated_format(&self, format: PixelFormat) {
        self.region
            .atomic_u32(self.offset + PRIV_FORMAT)
            .store((format.tag() + 1).to_le(), Ordering::Release);
    }

    pub fn connection_state(&self) -> ConnectionState {
        match u32::from_le(self.region.atomic_u32(self.offset + PRIV_STATE).load(Ordering::Acquire)) {
            0 => ConnectionState::Active,
            _ => ConnectionState::Disconnected,
        }
    }

    pub fn set_connection_state(&self, state: ConnectionState) {
        let v: u32 = match state {
            ConnectionState::Active => 0,
            ConnectionState::Disconnected => 1,
        };
        self.region
            .atomic_u32(self.offset + PRIV_STATE)
            .store(v.to_le(), Ordering::Release);
    }

    /// Client side: records a liveness notification at `now_us`.
    /// Single writer, so plain load/store keeps the little-endian encoding.
    pub fn record_heartbeat(&self, now_us: u64, frame_submitted: bool) {
        self.store64(PRIV_HEARTBEAT_TIME, now_us, Ordering::Relaxed);
        if frame_submitted {
            let frames = self.load64(PRIV_FRAMES, Ordering::Relaxed);
            self.store64(PRIV_FRAMES, frames + 1, Ordering::Relaxed);
        }
        let count = self.load64(PRIV_HEARTBEAT, Ordering::Relaxed);
        self.store64(PRIV_HEARTBEAT, count + 1, Ordering::Release);
    }

    pub fn heartbeat(&self) -> Heartbeat {
        let count = self.load64(PRIV_HEARTBEAT, Ordering::Acquire);
        Heartbeat {
            count,
            time_us: self.load64(PRIV_HEARTBEAT_TIME, Ordering::Relaxed),
            frames: self.load64(PRIV_FRAMES, Ordering::Relaxed),
        }
    }

    pub fn acknowledge(&self, count: u64) {
        self.store64(PRIV_ACK, count, Ordering::Release);
    }

    pub fn acknowledged(&self) -> u64 {
        self.load64(PRIV_ACK, Ordering::Acquire)
    }
}

/// Server-side view of a published region.
pub struct ServerRegion {
    region: Arc<Region>,
    layout: RegionLayout,
    immutable: Vec<u8>,
}

impl ServerRegion {
    /// Encodes and publishes a region in fresh heap memory.
    pub fn create_heap(config: &RegionConfig) -> Result<ServerRegion, ProtocolError> {
        let layout = RegionLayout::for_config(config)?;
        let region = Region::heap(layout.required_size());
        Self::encode_and_publish(config, region)
    }

    /// Encodes and publishes a region backed by a shared file. Pixel pages of
    /// this mapping become read-only.
    pub fn create_file(config: &RegionConfig, path: &Path) -> Result<ServerRegion, ProtocolError> {
        let layout = RegionLayout::for_config(config)?;
        let region = Region::create_file(path, layout.required_size())?;
        let server = Self::encode_and_publish(config, region)?;
        let data = server.layout.header.frame_data_offset as usize;
        server
            .region
            .protect_read_only(data, server.region.len() - data)?;
        Ok(server)
    }

    fn encode_and_publish(config: &RegionConfig, region: Region) -> Result<ServerRegion, ProtocolError> {
        // SAFETY: the region was just created; no client has mapped it yet.
        encode_header(config, unsafe { region.bytes_mut(0, region.len()) })?;
        publish(&region);
        Self::from_published(Arc::new(region)).map_err(ProtocolError::CorruptRegion)
    }

    /// Wraps an already published region after validating it.
    pub fn from_published(region: Arc<Region>) -> Result<ServerRegion, Vec<Violation>> {
        let violations = validate_region(&*region);
        if !violations.is_empty() {
            return Err(violations);
        }
        let layout = layout_from_valid(&*region);
        let mut immutable = vec![0u8; layout.immutable_len()];
        region.read_into(0, &mut immutable);
        Ok(ServerRegion {
            region,
            layout,
            immutable,
        })
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    pub fn layout(&self) -> &RegionLayout {
        &self.layout
    }

    pub fn status_words(&self) -> RegionStatusWords {
        RegionStatusWords::new(self.region.clone(), self.layout.status_offset(), self.layout.frame_count())
    }

    pub fn private_area(&self) -> PrivateArea {
        PrivateArea::new(self.region.clone(), self.layout.private_offset())
    }

    /// True while the header and format table still hold what was published.
    pub fn header_intact(&self) -> bool {
        let mut now = vec![0u8; self.immutable.len()];
        self.region.read_into(0, &mut now) && now == self.immutable
    }

    /// Pixels of a slot this side currently holds DRAWING.
    ///
    /// # Safety
    /// The slot must be DRAWING and owned by the caller's consumer.
    pub unsafe fn frame_pixels(&self, slot: usize) -> &[u8] {
        assert!(slot < self.layout.frame_count());
        self.region.bytes(self.layout.frame_offset(slot), self.layout.frame_len())
    }
}

/// Options for [`client_attach`].
#[derive(Debug, Clone)]
pub struct AttachOptions {
    pub timeout_us: u64,
    pub poll_interval_us: u64,
    /// Formats the client can render, most preferred first. Empty accepts
    /// whatever the server lists first.
    pub preferred_formats: Vec<PixelFormat>,
}

impl Default for AttachOptions {
    fn default() -> Self {
        Self {
            timeout_us: 2_000_000,
            poll_interval_us: 1_000,
            preferred_formats: Vec::new(),
        }
    }
}

/// Client-side view of an attached region.
pub struct ClientRegion {
    region: Arc<Region>,
    layout: RegionLayout,
    context: FramebufferContext,
}

impl ClientRegion {
    pub fn context(&self) -> &FramebufferContext {
        &self.context
    }

    pub fn layout(&self) -> &RegionLayout {
        &self.layout
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    pub fn status_words(&self) -> RegionStatusWords {
        RegionStatusWords::new(self.region.clone(), self.layout.status_offset(), self.layout.frame_count())
    }

    pub fn producer(&self) -> Producer<RegionStatusWords> {
        Producer::new(self.status_words())
    }

    pub fn private_area(&self) -> PrivateArea {
        PrivateArea::new(self.region.clone(), self.layout.private_offset())
    }

    /// # Safety
    /// The slot must be UPDATING and owned by the caller's producer.
    #[allow(clippy::mut_from_ref)]
    pub unsafe fn frame_pixels_mut(&self, slot: usize) -> &mut [u8] {
        assert!(slot < self.layout.frame_count());
        self.region.bytes_mut(self.layout.frame_offset(slot), self.layout.frame_len())
    }

    /// # Safety
    /// The caller must own the slot (UPDATING for the producer, DRAWING for a
    /// consumer in direct mode).
    pub unsafe fn frame_pixels(&self, slot: usize) -> &[u8] {
        assert!(slot < self.layout.frame_count());
        self.region.bytes(self.layout.frame_offset(slot), self.layout.frame_len())
    }
}

/// Waits for the server to publish `region`, validates it and negotiates a
/// pixel format.
pub fn client_attach(
    region: Arc<Region>,
    options: &AttachOptions,
    clock: &dyn Clock,
) -> Result<ClientRegion, ProtocolError> {
    if region.len() < HEADER_SIZE {
        return Err(ProtocolError::CorruptRegion(vec![Violation::RegionTooSmall {
            len: region.len(),
        }]));
    }
    let start = clock.now_us();
    loop {
        match u32::from_le(region.atomic_u32(OFF_READY).load(Ordering::Acquire)) {
            1 => break,
            0 => {}
            value => return Err(ProtocolError::CorruptRegion(vec![Violation::NotReady { value }])),
        }
        let waited = clock.now_us().saturating_sub(start);
        if waited >= options.timeout_us {
            return Err(ProtocolError::ServerUnavailable { waited_us: waited });
        }
        clock.sleep_us(options.poll_interval_us.max(1));
    }

    let magic = read_u32(&*region, OFF_MAGIC).expect("header in bounds");
    if magic != MAGIC {
        return Err(ProtocolError::IncompatibleProtocol { found: magic });
    }
    let violations = validate_region(&*region);
    if !violations.is_empty() {
        return Err(ProtocolError::CorruptRegion(violations));
    }
    let layout = layout_from_valid(&*region);

    let format = if options.preferred_formats.is_empty() {
        layout.formats[0]
    } else {
        *options
            .preferred_formats
            .iter()
            .find(|f| layout.formats.contains(f))
            .ok_or(ProtocolError::NoCommonFormat)?
    };
    let p = layout.params();
    let geometry = SurfaceGeometry::new(p.width, p.height, p.pitch, 4)
        .map_err(|e: PixelError| ProtocolError::InvalidConfig(e.to_string()))?;
    let context = FramebufferContext::new(geometry, format, p.framerate, p.timeout_us, layout.header.frame_count)?
        .with_private(layout.private_offset() as u64);
    let private = PrivateArea::new(region.clone(), layout.private_offset());
    private.set_negotiated_format(format);
    Ok(ClientRegion {
        region,
        layout,
        context,
    })
}
