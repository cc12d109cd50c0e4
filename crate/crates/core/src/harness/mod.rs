//! Scenario plumbing shared by the CLI, the benchmarks and the tests:
//! configuration, the counters widget, sinks by name, the simulated-clock
//! runner and benchmark measurement.

pub mod bench;
pub mod config;
pub mod counters;
pub mod report;
pub mod sim;

use std::io;
use std::path::Path;

use thiserror::Error;

use crate::error::{ClientError, CompositorError, PixelError, ProtocolError, SinkError};
use crate::pixel::{PixelFormat, SurfaceGeometry, SurfaceMut};
use crate::protocol::{RegionConfig, DEFAULT_FRAME_PADDING};
use crate::sink::{ChecksumSink, ImageSequenceSink, NullSink, OutputSink};

pub use config::{BenchSuite, ClientSpec, FaultAction, FaultScript, ScenarioConfig, SinkKind, SinkSpec, TargetSpec, Widget};
pub use counters::render_counters;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Compositor(#[from] CompositorError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error(transparent)]
    Pixel(#[from] PixelError),
}

/// Builds the sink a scenario asks for. Image sinks write to `dir`.
pub fn make_sink(kind: SinkKind, dir: Option<&Path>) -> Result<Box<dyn OutputSink>, HarnessError> {
    Ok(match kind {
        SinkKind::Checksum => Box::new(ChecksumSink::new()),
        SinkKind::Null => Box::new(NullSink::new()),
        SinkKind::Images => {
            let dir = dir.ok_or_else(|| HarnessError::Config("images sink needs a directory".into()))?;
            Box::new(ImageSequenceSink::new(dir)?)
        }
    })
}

/// Region layout the server creates for one client.
pub fn client_region_config(spec: &ClientSpec) -> Result<RegionConfig, HarnessError> {
    let geometry = SurfaceGeometry::with_default_pitch(spec.width, spec.height)?;
    let mut formats = vec![spec.format];
    formats.extend(PixelFormat::ALL.iter().copied().filter(|f| *f != spec.format));
    Ok(RegionConfig::new(
        geometry,
        formats,
        spec.header_framerate(),
        spec.timeout_us(),
        spec.queue_depth,
    )
    .with_frame_padding(DEFAULT_FRAME_PADDING))
}

/// Draws one frame of a client's widget.
pub fn render_widget(
    spec: &ClientSpec,
    surface: &mut SurfaceMut<'_>,
    t_us: u64,
    frame: u64,
) -> Result<(), PixelError> {
    match spec.widget {
        Widget::Counters => render_counters(surface, t_us, spec.complexity),
        Widget::Solid => {
            let v = (frame % 251) as u8;
            let rgba = [v, v.wrapping_mul(3), (spec.id as u8).wrapping_mul(40), 255];
            let value = surface.format().pack(rgba);
            surface.fill(value);
            Ok(())
        }
    }
}

/// Value written over a client's header by the garbage-header fault.
pub const GARBAGE: [u8; 4] = [0xEF, 0xBE, 0xAD, 0xDE];
/// Byte offset the garbage-header fault overwrites (the width field).
pub const GARBAGE_OFFSET: usize = 8;
