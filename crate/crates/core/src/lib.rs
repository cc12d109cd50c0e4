//! Software compositing stack for partitioned systems: pixel primitives, a
//! lock-free frame queue, a shared-memory client/compositor protocol, the
//! client runtime with its watchdog, the compositor, and the simulation
//! harness used by the CLI and benchmarks.

pub mod client;
pub mod clock;
pub mod compositor;
pub mod error;
pub mod harness;
pub mod pixel;
pub mod protocol;
pub mod queue;
pub mod region;
pub mod sink;

pub use clock::{Clock, SimClock, WallClock};
pub use error::{ClientError, CompositorError, PixelError, ProtocolError, QueueError, SinkError};
pub use pixel::{
    blit, compute_pitch, convert_pixel, Channel, FramebufferContext, PixelFormat, Rect, Surface,
    SurfaceGeometry, SurfaceMut,
};
pub use protocol::{
    client_attach, validate_region, AttachOptions, ClientRegion, CompositorHeader, RegionConfig,
    RegionLayout, ServerRegion, Violation,
};
pub use queue::{
    Consumer, FrameState, LocalStatusWords, Presentation, Producer, QueueMode, RegionStatusWords,
    SlotHandle, StatusWords,
};
pub use region::Region;
pub use client::{ClientSession, DirectPresent, SessionMode, WatchdogStatus, WatchdogTimer};
pub use compositor::{
    ClientDescriptor, ClientOutcome, ClientState, CompositionReport, Compositor, CompositorConfig,
    DisconnectEvent, DisconnectReason, IndicatorStyle,
};
pub use harness::{BenchSuite, ClientSpec, FaultAction, FaultScript, HarnessError, ScenarioConfig};
pub use sink::{ChecksumSink, ImageSequenceSink, MemorySink, NullSink, OutputSink, SharedSink};
