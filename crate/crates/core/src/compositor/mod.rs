//! The compositor: one target surface, fixed non-overlapping client
//! placements, FLUSH-mode consumption of every client queue, and visible
//! disconnection of faulty clients.

pub mod health;

use std::collections::BTreeMap;
use std::sync::Arc;

use log::{info, warn};

use crate::clock::Clock;
use crate::error::CompositorError;
use crate::pixel::{blit, PixelFormat, Rect, Surface, SurfaceGeometry, SurfaceMut, BYTES_PER_PIXEL};
use crate::protocol::{ConnectionState, ServerRegion};
use crate::queue::{Consumer, Presentation, QueueMode, RegionStatusWords};
use crate::region::Region;
use crate::sink::OutputSink;

pub use health::{
    ClientHealth, DisconnectEvent, DisconnectReason, FramerateVerdict, HealthTable, FPS_WINDOW_US,
};
use health::{WatchCommand, WatchdogTask};

/// Diagonal crosshatch painted over a disconnected client's placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndicatorStyle {
    /// RGBA of the hatch lines.
    pub line: [u8; 4],
    /// RGBA between the lines.
    pub fill: [u8; 4],
    pub spacing: u32,
    pub thickness: u32,
}

impl Default for IndicatorStyle {
    fn default() -> Self {
        Self {
            line: [255, 176, 0, 255],
            fill: [24, 24, 24, 255],
            spacing: 16,
            thickness: 2,
        }
    }
}

impl IndicatorStyle {
    /// True where a hatch line covers placement-relative `(x, y)`.
    pub fn is_line(&self, x: u32, y: u32) -> bool {
        let s = self.spacing;
        (x % s + y % s) % s < self.thickness || (x % s + s - y % s) % s < self.thickness
    }
}

#[derive(Debug, Clone)]
pub struct CompositorConfig {
    pub geometry: SurfaceGeometry,
    pub format: PixelFormat,
    /// RGBA.
    pub background: [u8; 4],
    pub indicator: IndicatorStyle,
}

impl CompositorConfig {
    pub fn new(geometry: SurfaceGeometry, format: PixelFormat) -> Self {
        Self {
            geometry,
            format,
            background: [0, 0, 0, 255],
            indicator: IndicatorStyle::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientState {
    Active,
    Disconnected,
}

/// Server-side record of one client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientDescriptor {
    pub id: u32,
    pub placement: Rect,
    /// Known once the client has negotiated.
    pub format: Option<PixelFormat>,
    pub last_frame_seq: u64,
    pub min_fps: u32,
    pub timeout_us: u64,
    pub state: ClientState,
}

/// What one compose did with one client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientOutcome {
    Presented(u64),
    HeldOver(u64),
    NoFrame,
    Disconnected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionReport {
    pub frame: u64,
    pub at_us: u64,
    pub clients: Vec<(u32, ClientOutcome)>,
    pub disconnects: Vec<DisconnectEvent>,
}

impl CompositionReport {
    pub fn outcome(&self, client: u32) -> Option<ClientOutcome> {
        self.clients.iter().find(|(id, _)| *id == client).map(|(_, o)| *o)
    }
}

struct ClientEntry {
    descriptor: ClientDescriptor,
    region: ServerRegion,
    consumer: Option<Consumer<RegionStatusWords>>,
}

enum Health {
    Inline(HealthTable),
    Threaded(WatchdogTask),
}

pub struct Compositor<S: OutputSink> {
    config: CompositorConfig,
    target: Vec<u8>,
    background_px: u32,
    line_px: u32,
    fill_px: u32,
    background_spans: Vec<(u32, u32, u32)>,
    clients: BTreeMap<u32, ClientEntry>,
    sink: S,
    clock: Arc<dyn Clock>,
    health: Health,
    events: Vec<DisconnectEvent>,
    frames: u64,
}

impl<S: OutputSink> Compositor<S> {
    pub fn new(config: CompositorConfig, sink: S, clock: Arc<dyn Clock>) -> Result<Self, CompositorError> {
        if config.indicator.spacing == 0 {
            return Err(CompositorError::InvalidArgument("indicator spacing must be positive".into()));
        }
        let format = config.format;
        let mut compositor = Self {
            target: vec![0u8; config.geometry.byte_len()],
            background_px: format.pack(config.background),
            line_px: format.pack(config.indicator.line),
            fill_px: format.pack(config.indicator.fill),
            background_spans: Vec::new(),
            config,
            clients: BTreeMap::new(),
            sink,
            clock,
            health: Health::Inline(HealthTable::new()),
            events: Vec::new(),
            frames: 0,
        };
        compositor.recompute_background();
        Ok(compositor)
    }

    /// Moves health checks to a separate thread ticking every `tick_us`.
    /// Their disconnect decisions are applied at the start of each compose.
    pub fn spawn_watchdog(&mut self, tick_us: u64) {
        if let Health::Inline(table) = &mut self.health {
            let table = std::mem::take(table);
            self.health = Health::Threaded(WatchdogTask::spawn(table, self.clock.clone(), tick_us));
        }
    }

    pub fn config(&self) -> &CompositorConfig {
        &self.config
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn sink_mut(&mut self) -> &mut S {
        &mut self.sink
    }

    pub fn into_sink(self) -> S {
        let Compositor { sink, .. } = self;
        sink
    }

    /// Frames presented so far.
    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Every disconnect so far, in order.
    pub fn events(&self) -> &[DisconnectEvent] {
        &self.events
    }

    pub fn descriptor(&self, id: u32) -> Option<&ClientDescriptor> {
        self.clients.get(&id).map(|c| &c.descriptor)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ClientDescriptor> {
        self.clients.values().map(|c| &c.descriptor)
    }

    /// The target as composed by the last `compose_once`.
    pub fn target(&self) -> Surface<'_> {
        Surface::new(&self.target, self.config.geometry, self.config.format).expect("target size")
    }

    /// Adds a client at a fixed placement. The region must already be
    /// published and must validate.
    pub fn register_client(
        &mut self,
        id: u32,
        region: Arc<Region>,
        placement: Rect,
        min_fps: u32,
    ) -> Result<ClientDescriptor, CompositorError> {
        if let Some(existing) = self.clients.get(&id) {
            return Err(match existing.descriptor.state {
                ClientState::Active => CompositorError::AlreadyConnected(id),
                ClientState::Disconnected => CompositorError::InvalidArgument(format!(
                    "client {id} is registered; reconnect it instead"
                )),
            });
        }
        if placement.is_empty() || !placement.fits_within(&self.config.geometry) {
            return Err(CompositorError::InvalidArgument(format!(
                "placement {placement} outside target {}x{}",
                self.config.geometry.width(),
                self.config.geometry.height()
            )));
        }
        if let Some(other) = self.clients.values().find(|c| c.descriptor.placement.intersects(&placement)) {
            return Err(CompositorError::PlacementConflict {
                placement: placement.to_string(),
                other: other.descriptor.id,
            });
        }
        let entry = self.attach(id, region, placement, min_fps)?;
        let descriptor = entry.descriptor.clone();
        self.clients.insert(id, entry);
        self.recompute_background();
        info!("client {id} registered at {placement}");
        Ok(descriptor)
    }

    /// Replaces a disconnected client's region, keeping its placement.
    pub fn reconnect_client(&mut self, id: u32, region: Arc<Region>) -> Result<ClientDescriptor, CompositorError> {
        let existing = self.clients.get(&id).ok_or(CompositorError::NotFound(id))?;
        if existing.descriptor.state == ClientState::Active {
            return Err(CompositorError::AlreadyConnected(id));
        }
        let (placement, min_fps) = (existing.descriptor.placement, existing.descriptor.min_fps);
        let entry = self.attach(id, region, placement, min_fps)?;
        let descriptor = entry.descriptor.clone();
        self.clients.insert(id, entry);
        info!("client {id} reconnected");
        Ok(descriptor)
    }

    fn attach(
        &mut self,
        id: u32,
        region: Arc<Region>,
        placement: Rect,
        min_fps: u32,
    ) -> Result<ClientEntry, CompositorError> {
        let server = ServerRegion::from_published(region).map_err(CompositorError::Rejected)?;
        let layout = server.layout();
        let params = layout.params();
        if params.width != placement.width || params.height != placement.height {
            return Err(CompositorError::InvalidArgument(format!(
                "placement {placement} does not match client surface {}x{}",
                params.width, params.height
            )));
        }
        if layout.frame_count() < 2 {
            return Err(CompositorError::InvalidArgument(
                "a single-slot queue cannot be composited: the held frame would block the client".into(),
            ));
        }
        let private = server.private_area();
        private.set_connection_state(ConnectionState::Active);
        let now = self.clock.now_us();
        let health = ClientHealth::new(id, private, params.timeout_us, min_fps, now);
        let descriptor = ClientDescriptor {
            id,
            placement,
            format: None,
            last_frame_seq: 0,
            min_fps,
            timeout_us: params.timeout_us,
            state: ClientState::Active,
        };
        match &mut self.health {
            Health::Inline(table) => table.track(health),
            Health::Threaded(task) => task.send(WatchCommand::Track(health)),
        }
        Ok(ClientEntry {
            descriptor,
            consumer: Some(Consumer::new(server.status_words())),
            region: server,
        })
    }

    /// Watchdog pass: every ACTIVE client past its deadline is disconnected.
    pub fn check_watchdogs(&mut self, now_us: u64) -> Vec<DisconnectEvent> {
        let events = match &mut self.health {
            Health::Inline(table) => table.check_watchdogs(now_us),
            Health::Threaded(task) => task.drain(),
        };
        self.apply(&events);
        events
    }

    /// Minimum-framerate check for one client.
    pub fn check_framerate(&mut self, id: u32, now_us: u64) -> FramerateVerdict {
        let Health::Inline(table) = &mut self.health else {
            return FramerateVerdict::Keep;
        };
        let verdict = table.check_framerate(id, now_us);
        if let FramerateVerdict::Disconnect { fps } = verdict {
            let min_fps = self.clients.get(&id).map_or(0, |c| c.descriptor.min_fps);
            self.disconnect(id, now_us, DisconnectReason::LowFramerate { fps, min_fps });
        }
        verdict
    }

    /// Watchdogs and framerates of every client.
    pub fn check_health(&mut self, now_us: u64) -> Vec<DisconnectEvent> {
        let events = match &mut self.health {
            Health::Inline(table) => table.check_all(now_us),
            Health::Threaded(task) => task.drain(),
        };
        self.apply(&events);
        events
    }

    fn apply(&mut self, events: &[DisconnectEvent]) {
        for e in events {
            self.mark_disconnected(e);
        }
    }

    /// Disconnects a client for a reason found outside the health checks.
    pub fn disconnect(&mut self, id: u32, now_us: u64, reason: DisconnectReason) {
        if !self.clients.get(&id).is_some_and(|c| c.descriptor.state == ClientState::Active) {
            return;
        }
        match &mut self.health {
            Health::Inline(table) => table.untrack(id),
            Health::Threaded(task) => task.send(WatchCommand::Untrack(id)),
        }
        self.mark_disconnected(&DisconnectEvent {
            client: id,
            at_us: now_us,
            reason,
        });
    }

    fn mark_disconnected(&mut self, event: &DisconnectEvent) {
        let Some(entry) = self.clients.get_mut(&event.client) else {
            return;
        };
        if entry.descriptor.state != ClientState::Active {
            return;
        }
        warn!("client {} disconnected at {}us: {}", event.client, event.at_us, event.reason);
        entry.descriptor.state = ClientState::Disconnected;
        // The queue is abandoned as is; nothing is read from it again.
        entry.consumer = None;
        entry.region.private_area().set_connection_state(ConnectionState::Disconnected);
        self.events.push(event.clone());
    }

    /// Some connected client has a READY frame waiting.
    pub fn has_new_frames(&self) -> bool {
        self.clients
            .values()
            .filter_map(|e| e.consumer.as_ref())
            .any(|c| c.has_ready().unwrap_or(true))
    }

    /// Builds one output frame from every client and presents it.
    pub fn compose_once(&mut self, now_us: u64) -> Result<CompositionReport, CompositorError> {
        let first_event = self.events.len();
        if let Health::Threaded(task) = &self.health {
            let events = task.drain();
            self.apply(&events);
        }
        self.fill_background();

        let ids: Vec<u32> = self.clients.keys().copied().collect();
        let mut outcomes = Vec::with_capacity(ids.len());
        for id in ids {
            let outcome = match self.compose_client(id) {
                Ok(outcome) => outcome,
                Err(reason) => {
                    self.disconnect(id, now_us, reason);
                    self.paint_indicator(id);
                    ClientOutcome::Disconnected
                }
            };
            outcomes.push((id, outcome));
        }

        let target = Surface::new(&self.target, self.config.geometry, self.config.format)?;
        self.sink.present(&target)?;
        let report = CompositionReport {
            frame: self.frames,
            at_us: now_us,
            clients: outcomes,
            disconnects: self.events[first_event..].to_vec(),
        };
        self.frames += 1;
        Ok(report)
    }

    fn compose_client(&mut self, id: u32) -> Result<ClientOutcome, DisconnectReason> {
        let entry = self.clients.get_mut(&id).expect("listed client");
        let placement = entry.descriptor.placement;
        let Some(consumer) = entry.consumer.as_mut() else {
            self.paint_indicator(id);
            return Ok(ClientOutcome::Disconnected);
        };
        if !entry.region.header_intact() {
            return Err(DisconnectReason::HeaderCorrupted);
        }
        let presentation = consumer.present(QueueMode::Flush).map_err(DisconnectReason::QueueFault)?;
        let (slot, outcome) = match presentation {
            Presentation::New { slot, sequence } => {
                entry.descriptor.last_frame_seq = sequence;
                (slot, ClientOutcome::Presented(sequence))
            }
            Presentation::Held { slot, sequence } => (slot, ClientOutcome::HeldOver(sequence)),
            Presentation::Empty => {
                SurfaceMut::new(&mut self.target, self.config.geometry, self.config.format)
                    .expect("target size")
                    .fill_rect(placement, self.background_px);
                return Ok(ClientOutcome::NoFrame);
            }
        };
        let format = match entry.region.private_area().negotiated_format() {
            Some(Ok(format)) => format,
            Some(Err(raw)) => return Err(DisconnectReason::BadFormat(raw)),
            None => return Err(DisconnectReason::BadFormat(0)),
        };
        entry.descriptor.format = Some(format);
        let layout = entry.region.layout();
        // SAFETY: the slot is DRAWING and held by this compositor's consumer.
        let pixels = unsafe { entry.region.frame_pixels(slot.index()) };
        let src = Surface::new(pixels, layout.geometry(), format).expect("validated layout");
        let mut dst = SurfaceMut::new(&mut self.target, self.config.geometry, self.config.format)
            .expect("target size");
        blit(&src, &mut dst, placement).expect("placement validated at registration");
        Ok(outcome)
    }

    fn paint_indicator(&mut self, id: u32) {
        let placement = self.clients[&id].descriptor.placement;
        let style = self.config.indicator;
        let pitch = self.config.geometry.pitch() as usize;
        let (line, fillv) = (self.line_px.to_le_bytes(), self.fill_px.to_le_bytes());
        for ly in 0..placement.height {
            let row = (placement.y + ly) as usize * pitch + placement.x as usize * BYTES_PER_PIXEL;
            let row = &mut self.target[row..row + placement.width as usize * BYTES_PER_PIXEL];
            for (lx, px) in row.chunks_exact_mut(BYTES_PER_PIXEL).enumerate() {
                px.copy_from_slice(if style.is_line(lx as u32, ly) { &line } else { &fillv });
            }
        }
    }

    fn fill_background(&mut self) {
        let pitch = self.config.geometry.pitch() as usize;
        let value = self.background_px.to_le_bytes();
        for &(y, x0, x1) in &self.background_spans {
            let start = y as usize * pitch;
            let span = &mut self.target
                [start + x0 as usize * BYTES_PER_PIXEL..start + x1 as usize * BYTES_PER_PIXEL];
            for px in span.chunks_exact_mut(BYTES_PER_PIXEL) {
                px.copy_from_slice(&value);
            }
        }
    }

    /// Row spans not covered by any placement.
    fn recompute_background(&mut self) {
        let g = self.config.geometry;
        let mut spans = Vec::new();
        let mut covers: Vec<(u32, u32)> = Vec::new();
        for y in 0..g.height() {
            covers.clear();
            covers.extend(
                self.clients
                    .values()
                    .map(|c| c.descriptor.placement)
                    .filter(|p| y >= p.y && u64::from(y) < p.bottom())
                    .map(|p| (p.x, p.x + p.width)),
            );
            covers.sort_unstable();
            let mut x = 0;
            for &(a, b) in &covers {
                if a > x {
                    spans.push((y, x, a));
                }
                x = x.max(b);
            }
            if x < g.width() {
                spans.push((y, x, g.width()));
            }
        }
        self.background_spans = spans;
    }
}
