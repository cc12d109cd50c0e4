//! Pixel formats, surface geometry and the blit primitive.
//!
//! Every supported format is 32 bits per pixel. Format names describe the
//! byte order in memory: `R8G8B8A8` means byte 0 is red, byte 3 is alpha.
//! A "pixel value" is the little-endian `u32` read from those four bytes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::PixelError;

pub const BYTES_PER_PIXEL: usize = 4;

/// Default row alignment in bytes.
pub const DEFAULT_ROW_ALIGNMENT: u32 = 64;

/// Largest supported frame queue.
pub const MAX_QUEUE_DEPTH: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
#[repr(u32)]
pub enum PixelFormat {
    R8G8B8A8 = 0,
    B8G8R8A8 = 1,
    A8R8G8B8 = 2,
    A8B8G8R8 = 3,
}

/// Channel index used by [`PixelFormat::byte_of`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Red = 0,
    Green = 1,
    Blue = 2,
    Alpha = 3,
}

impl PixelFormat {
    pub const ALL: [PixelFormat; 4] = [
        PixelFormat::R8G8B8A8,
        PixelFormat::B8G8R8A8,
        PixelFormat::A8R8G8B8,
        PixelFormat::A8B8G8R8,
    ];

    /// Wire tag used in the shared-memory format table.
    pub fn tag(self) -> u32 {
        self as u32
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn bytes_per_pixel(self) -> usize {
        BYTES_PER_PIXEL
    }

    /// Byte positions of red, green, blue and alpha within a pixel.
    pub fn channel_offsets(self) -> [usize; 4] {
        match self {
            PixelFormat::R8G8B8A8 => [0, 1, 2, 3],
            PixelFormat::B8G8R8A8 => [2, 1, 0, 3],
            PixelFormat::A8R8G8B8 => [1, 2, 3, 0],
            PixelFormat::A8B8G8R8 => [3, 2, 1, 0],
        }
    }

    pub fn byte_of(self, channel: Channel) -> usize {
        self.channel_offsets()[channel as usize]
    }

    /// Splits a pixel value into `[r, g, b, a]`.
    pub fn unpack(self, value: u32) -> [u8; 4] {
        let bytes = value.to_le_bytes();
        let [r, g, b, a] = self.channel_offsets();
        [bytes[r], bytes[g], bytes[b], bytes[a]]
    }

    /// Builds a pixel value from `[r, g, b, a]`.
    pub fn pack(self, rgba: [u8; 4]) -> u32 {
        let mut bytes = [0u8; 4];
        for (channel, offset) in self.channel_offsets().into_iter().enumerate() {
            bytes[offset] = rgba[channel];
        }
        u32::from_le_bytes(bytes)
    }

    /// For each destination byte, the source byte that feeds it.
    fn shuffle_from(self, src: PixelFormat) -> [usize; 4] {
        let src_offsets = src.channel_offsets();
        let mut shuffle = [0usize; 4];
        for (channel, dst_offset) in self.channel_offsets().into_iter().enumerate() {
            shuffle[dst_offset] = src_offsets[channel];
        }
        shuffle
    }

    pub fn name(self) -> &'static str {
        match self {
            PixelFormat::R8G8B8A8 => "R8G8B8A8",
            PixelFormat::B8G8R8A8 => "B8G8R8A8",
            PixelFormat::A8R8G8B8 => "A8R8G8B8",
            PixelFormat::A8B8G8R8 => "A8B8G8R8",
        }
    }
}

impl fmt::Display for PixelFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PixelFormat {
    type Err = PixelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| PixelError::InvalidArgument(format!("unknown pixel format {s:?}")))
    }
}

/// Reorders the channels of `value` from `from` into `to`.
pub fn convert_pixel(value: u32, from: PixelFormat, to: PixelFormat) -> u32 {
    if from == to {
        return value;
    }
    to.pack(from.unpack(value))
}

/// Row stride for `width` pixels of `format`, rounded up to `alignment` bytes.
pub fn compute_pitch(width: u32, format: PixelFormat, alignment: u32) -> Result<u32, PixelError> {
    if width == 0 {
        return Err(PixelError::InvalidArgument("width must be positive".into()));
    }
    if !alignment.is_power_of_two() {
        return Err(PixelError::InvalidArgument(format!(
            "row alignment {alignment} is not a power of two"
        )));
    }
    let row = u64::from(width) * format.bytes_per_pixel() as u64;
    let align = u64::from(alignment);
    let pitch = row.div_ceil(align) * align;
    u32::try_from(pitch)
        .map_err(|_| PixelError::InvalidArgument(format!("pitch for width {width} overflows")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SurfaceGeometry {
    width: u32,
    height: u32,
    pitch: u32,
}

impl SurfaceGeometry {
    /// Checks `pitch >= width * 4` and that `pitch` is a multiple of `alignment`.
    pub fn new(width: u32, height: u32, pitch: u32, alignment: u32) -> Result<Self, PixelError> {
        if width == 0 || height == 0 {
            return Err(PixelError::InvalidArgument(format!(
                "surface must be non-empty, got {width}x{height}"
            )));
        }
        if u64::from(pitch) < u64::from(width) * BYTES_PER_PIXEL as u64 {
            return Err(PixelError::InvalidArgument(format!(
                "pitch {pitch} shorter than a {width}-pixel row"
            )));
        }
        if alignment == 0 || pitch % alignment != 0 {
            return Err(PixelError::InvalidArgument(format!(
                "pitch {pitch} not a multiple of row alignment {alignment}"
            )));
        }
        Ok(Self { width, height, pitch })
    }

    /// Geometry with the tightest pitch for the default alignment.
    pub fn with_default_pitch(width: u32, height: u32) -> Result<Self, PixelError> {
        let pitch = compute_pitch(width, PixelFormat::R8G8B8A8, DEFAULT_ROW_ALIGNMENT)?;
        Self::new(width, height, pitch, DEFAULT_ROW_ALIGNMENT)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pitch(&self) -> u32 {
        self.pitch
    }

    /// Bytes needed to hold the whole surface, including trailing row padding.
    pub fn byte_len(&self) -> usize {
        self.pitch as usize * self.height as usize
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    pub fn right(&self) -> u64 {
        u64::from(self.x) + u64::from(self.width)
    }

    pub fn bottom(&self) -> u64 {
        u64::from(self.y) + u64::from(self.height)
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn fits_within(&self, geometry: &SurfaceGeometry) -> bool {
        !self.is_empty()
            && self.right() <= u64::from(geometry.width)
            && self.bottom() <= u64::from(geometry.height)
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        !self.is_empty()
            && !other.is_empty()
            && u64::from(self.x) < other.right()
            && u64::from(other.x) < self.right()
            && u64::from(self.y) < other.bottom()
            && u64::from(other.y) < self.bottom()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && u64::from(x) < self.right() && y >= self.y && u64::from(y) < self.bottom()
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}+{}+{}", self.width, self.height, self.x, self.y)
    }
}

/// Read-only description of an output surface.
///
/// Built once by the framebuffer implementation; callers only observe it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramebufferContext {
    geometry: SurfaceGeometry,
    format: PixelFormat,
    framerate: u32,
    timeout_us: u64,
    queue_depth: u32,
    private: u64,
}

impl FramebufferContext {
    pub fn new(
        geometry: SurfaceGeometry,
        format: PixelFormat,
        framerate: u32,
        timeout_us: u64,
        queue_depth: u32,
    ) -> Result<Self, PixelError> {
        if framerate == 0 {
            return Err(PixelError::InvalidArgument("framerate must be positive".into()));
        }
        if timeout_us == 0 {
            return Err(PixelError::InvalidArgument("timeout must be positive".into()));
        }
        if !(1..=MAX_QUEUE_DEPTH).contains(&queue_depth) {
            return Err(PixelError::InvalidArgument(format!(
                "queue depth {queue_depth} outside 1..={MAX_QUEUE_DEPTH}"
            )));
        }
        // One missed frame must never trip the watchdog.
        if u128::from(timeout_us) * u128::from(framerate) < 2_000_000 {
            return Err(PixelError::InvalidArgument(format!(
                "timeout {timeout_us}us is shorter than two frame periods at {framerate} fps"
            )));
        }
        Ok(Self {
            geometry,
            format,
            framerate,
            timeout_us,
            queue_depth,
            private: 0,
        })
    }

    pub(crate) fn with_private(mut self, private: u64) -> Self {
        self.private = private;
        self
    }

    pub fn geometry(&self) -> SurfaceGeometry {
        self.geometry
    }

    pub fn width(&self) -> u32 {
        self.geometry.width
    }

    pub fn height(&self) -> u32 {
        self.geometry.height
    }

    pub fn pitch(&self) -> u32 {
        self.geometry.pitch
    }

    pub fn format(&self) -> PixelFormat {
        self.format
    }

    /// Minimal acceptable frame rate.
    pub fn framerate(&self) -> u32 {
        self.framerate
    }

    pub fn timeout_us(&self) -> u64 {
        self.timeout_us
    }

    pub fn queue_depth(&self) -> u32 {
        self.queue_depth
    }

    /// Frame period in microseconds at the minimal frame rate.
    pub fn frame_period_us(&self) -> u64 {
        1_000_000 / u64::from(self.framerate)
    }

    /// Opaque datum owned by the framebuffer implementation.
    pub fn private_handle(&self) -> u64 {
        self.private
    }
}

/// Borrowed read-only pixels with their layout.
#[derive(Clone, Copy)]
pub struct Surface<'a> {
    pixels: &'a [u8],
    geometry: SurfaceGeometry,
    format: PixelFormat,
}

impl<'a> Surface<'a> {
    pub fn new(
        pixels: &'a [u8],
        geometry: SurfaceGeometry,
        format: PixelFormat,
    ) -> Result<Self, PixelError> {
        check_len(pixels.len(), &geometry)?;
        Ok(Self { pixels, geometry, format })
    }

    pub fn geometry(&self) -> SurfaceGeometry {
        self.geometry
    }

    pub fn format(&self) -> PixelFormat {
        self.format
    }

    pub fn bytes(&self) -> &'a [u8] {
        self.pixels
    }

    /// Visible bytes of row `y`, without pitch padding.
    pub fn row(&self, y: u32) -> &'a [u8] {
        let start = y as usize * self.geometry.pitch as usize;
        &self.pixels[start..start + self.geometry.width as usize * BYTES_PER_PIXEL]
    }

    pub fn pixel(&self, x: u32, y: u32) -> u32 {
        let off = y as usize * self.geometry.pitch as usize + x as usize * BYTES_PER_PIXEL;
        u32::from_le_bytes(self.pixels[off..off + 4].try_into().unwrap())
    }
}

impl fmt::Debug for Surface<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Surface")
            .field("geometry", &self.geometry)
            .field("format", &self.format)
            .finish_non_exhaustive()
    }
}

/// Borrowed writable pixels with their layout.
pub struct SurfaceMut<'a> {
    pixels: &'a mut [u8],
    geometry: SurfaceGeometry,
    format: PixelFormat,
}

impl<'a> SurfaceMut<'a> {
    pub fn new(
        pixels: &'a mut [u8],
        geometry: SurfaceGeometry,
        format: PixelFormat,
    ) -> Result<Self, PixelError> {
        check_len(pixels.len(), &geometry)?;
        Ok(Self { pixels, geometry, format })
    }

    pub fn geometry(&self) -> SurfaceGeometry {
        self.geometry
    }

    pub fn format(&self) -> PixelFormat {
        self.format
    }

    pub fn as_surface(&self) -> Surface<'_> {
        Surface {
            pixels: self.pixels,
            geometry: self.geometry,
            format: self.format,
        }
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        self.pixels
    }

    pub fn row_mut(&mut self, y: u32) -> &mut [u8] {
        let start = y as usize * self.geometry.pitch as usize;
        &mut self.pixels[start..start + self.geometry.width as usize * BYTES_PER_PIXEL]
    }

    pub fn pixel(&self, x: u32, y: u32) -> u32 {
        self.as_surface().pixel(x, y)
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, value: u32) {
        let off = y as usize * self.geometry.pitch as usize + x as usize * BYTES_PER_PIXEL;
        self.pixels[off..off + 4].copy_from_slice(&value.to_le_bytes());
    }

    /// Fills `rect` (clipped to the surface) with a pixel value in this surface's format.
    pub fn fill_rect(&mut self, rect: Rect, value: u32) {
        let x0 = rect.x.min(self.geometry.width);
        let y0 = rect.y.min(self.geometry.height);
        let x1 = rect.right().min(u64::from(self.geometry.width)) as u32;
        let y1 = rect.bottom().min(u64::from(self.geometry.height)) as u32;
        if x0 >= x1 || y0 >= y1 {
            return;
        }
        let bytes = value.to_le_bytes();
        let pitch = self.geometry.pitch as usize;
        for y in y0..y1 {
            let start = y as usize * pitch + x0 as usize * BYTES_PER_PIXEL;
            let end = y as usize * pitch + x1 as usize * BYTES_PER_PIXEL;
            for px in self.pixels[start..end].chunks_exact_mut(BYTES_PER_PIXEL) {
                px.copy_from_slice(&bytes);
            }
        }
    }

    pub fn fill(&mut self, value: u32) {
        self.fill_rect(self.geometry.bounds(), value);
    }

    /// Writable view of a sub-rectangle. The view keeps the parent's pitch.
    pub fn sub_surface(&mut self, rect: Rect) -> Result<SurfaceMut<'_>, PixelError> {
        if !rect.fits_within(&self.geometry) {
            return Err(PixelError::InvalidArgument(format!(
                "sub-surface {rect} outside {}x{}",
                self.geometry.width, self.geometry.height
            )));
        }
        let pitch = self.geometry.pitch as usize;
        let start = rect.y as usize * pitch + rect.x as usize * BYTES_PER_PIXEL;
        let len = (rect.height as usize - 1) * pitch + rect.width as usize * BYTES_PER_PIXEL;
        Ok(SurfaceMut {
            pixels: &mut self.pixels[start..start + len],
            geometry: SurfaceGeometry {
                width: rect.width,
                height: rect.height,
                pitch: self.geometry.pitch,
            },
            format: self.format,
        })
    }
}

impl fmt::Debug for SurfaceMut<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SurfaceMut")
            .field("geometry", &self.geometry)
            .field("format", &self.format)
            .finish_non_exhaustive()
    }
}

// The last row does not need its pitch padding.
fn check_len(len: usize, geometry: &SurfaceGeometry) -> Result<(), PixelError> {
    let needed = (geometry.height as usize - 1) * geometry.pitch as usize
        + geometry.width as usize * BYTES_PER_PIXEL;
    if len < needed {
        return Err(PixelError::InvalidArgument(format!(
            "pixel buffer of {len} bytes too small for {}x{} with pitch {}",
            geometry.width, geometry.height, geometry.pitch
        )));
    }
    Ok(())
}

/// Copies `src` into `dst` at `at`, converting pixels to the destination format.
///
/// Validation happens before any write, so an error leaves `dst` untouched.
pub fn blit(src: &Surface<'_>, dst: &mut SurfaceMut<'_>, at: Rect) -> Result<(), PixelError> {
    let src_geom = src.geometry();
    if at.width != src_geom.width || at.height != src_geom.height {
        return Err(PixelError::InvalidArgument(format!(
            "blit rectangle {at} does not match source {}x{}",
            src_geom.width, src_geom.height
        )));
    }
    if !at.fits_within(&dst.geometry) {
        return Err(PixelError::InvalidArgument(format!(
            "blit rectangle {at} outside destination {}x{}",
            dst.geometry.width, dst.geometry.height
        )));
    }

    let row_bytes = at.width as usize * BYTES_PER_PIXEL;
    let dst_pitch = dst.geometry.pitch as usize;
    let x_off = at.x as usize * BYTES_PER_PIXEL;
    let same_format = src.format() == dst.format;
    let shuffle = dst.format.shuffle_from(src.format());

    for row in 0..at.height {
        let src_row = src.row(row);
        let start = (at.y + row) as usize * dst_pitch + x_off;
        let dst_row = &mut dst.pixels[start..start + row_bytes];
        if same_format {
            dst_row.copy_from_slice(src_row);
        } else {
            for (d, s) in dst_row
                .chunks_exact_mut(BYTES_PER_PIXEL)
                .zip(src_row.chunks_exact(BYTES_PER_PIXEL))
            {
                d[0] = s[shuffle[0]];
                d[1] = s[shuffle[1]];
                d[2] = s[shuffle[2]];
                d[3] = s[shuffle[3]];
            }
        }
    }
    Ok(())
}
