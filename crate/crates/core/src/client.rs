//! Application side of the framebuffer API.
//!
//! A [`ClientSession`] runs the request → fill → send → display cycle:
//! `begin_frame` hands out a writable frame, `end_frame` submits it and
//! resets the watchdog, `present_direct` shows the next frame when the
//! session owns its display. The same calls work unchanged when the frames go
//! to a compositor instead.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use log::warn;

use crate::clock::Clock;
use crate::error::{ClientError, PixelError};
use crate::pixel::{FramebufferContext, Surface, SurfaceMut};
use crate::protocol::{ClientRegion, ConnectionState, PrivateArea};
use crate::queue::{Consumer, LocalStatusWords, Presentation, Producer, QueueMode, RegionStatusWords, SlotHandle};
use crate::sink::OutputSink;

/// Countdown reset on every completed frame.
///
/// `reset` and `poll` may run on different threads; they share only the
/// deadline and the episode flag.
#[derive(Debug)]
pub struct WatchdogTimer {
    budget_us: u64,
    deadline_us: AtomicU64,
    running: AtomicBool,
    fired: AtomicBool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WatchdogStatus {
    Ok,
    /// `first` is true only for the poll that opened this expiry episode.
    Expired { first: bool },
}

impl WatchdogTimer {
    pub fn new(budget_us: u64) -> Self {
        Self {
            budget_us,
            deadline_us: AtomicU64::new(0),
            running: AtomicBool::new(false),
            fired: AtomicBool::new(false),
        }
    }

    pub fn budget_us(&self) -> u64 {
        self.budget_us
    }

    pub fn deadline_us(&self) -> u64 {
        self.deadline_us.load(Ordering::Acquire)
    }

    pub fn is_running(&self) -> bool {
        self.running.load(Ordering::Acquire)
    }

    /// Restarts the countdown: deadline = `now_us` + budget.
    pub fn reset(&self, now_us: u64) {
        self.deadline_us.store(now_us + self.budget_us, Ordering::Release);
        self.fired.store(false, Ordering::Release);
        self.running.store(true, Ordering::Release);
    }

    pub fn stop(&self) {
        self.running.store(false, Ordering::Release);
    }

    pub fn poll(&self, now_us: u64) -> WatchdogStatus {
        if !self.is_running() || now_us < self.deadline_us() {
            return WatchdogStatus::Ok;
        }
        let first = !self.fired.swap(true, Ordering::AcqRel);
        WatchdogStatus::Expired { first }
    }
}

/// Passed to the health monitor when the watchdog expires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WatchdogExpiry {
    pub deadline_us: u64,
    pub observed_us: u64,
}

pub type HealthMonitor = Box<dyn FnMut(&WatchdogExpiry) + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionMode {
    Direct,
    Composited,
}

/// What `present_direct` put on the display.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectPresent {
    New(u64),
    Repeated(u64),
    /// Nothing was ever submitted.
    Nothing,
    /// Composited session: the compositor owns presentation.
    Delegated,
}

struct DirectBackend {
    producer: Producer<Arc<LocalStatusWords>>,
    consumer: Consumer<Arc<LocalStatusWords>>,
    frames: Vec<Vec<u8>>,
    sink: Box<dyn OutputSink>,
    // Single-slot queues copy the shown frame out so the slot can be reused.
    retained: Option<(Vec<u8>, u64)>,
}

struct CompositedBackend {
    region: ClientRegion,
    producer: Producer<RegionStatusWords>,
    private: PrivateArea,
}

enum Backend {
    Direct(DirectBackend),
    Composited(CompositedBackend),
}

pub struct ClientSession {
    context: FramebufferContext,
    backend: Backend,
    watchdog: Arc<WatchdogTimer>,
    health_monitor: Option<HealthMonitor>,
    clock: Arc<dyn Clock>,
    open: Option<SlotHandle>,
}

impl ClientSession {
    /// Session that owns its display: frames live in local memory and
    /// `present_direct` pushes them to `sink`.
    pub fn direct(
        context: FramebufferContext,
        sink: Box<dyn OutputSink>,
        clock: Arc<dyn Clock>,
    ) -> ClientSession {
        let depth = context.queue_depth() as usize;
        let words = Arc::new(LocalStatusWords::new(depth));
        let frame_len = context.geometry().byte_len();
        let backend = Backend::Direct(DirectBackend {
            producer: Producer::new(words.clone()),
            consumer: Consumer::new(words),
            frames: vec![vec![0u8; frame_len]; depth],
            sink,
            retained: None,
        });
        Self::with_backend(context, backend, clock)
    }

    /// Session whose frames go to a compositor through an attached region.
    pub fn composited(region: ClientRegion, clock: Arc<dyn Clock>) -> ClientSession {
        let context = region.context().clone();
        let backend = Backend::Composited(CompositedBackend {
            producer: region.producer(),
            private: region.private_area(),
            region,
        });
        Self::with_backend(context, backend, clock)
    }

    fn with_backend(context: FramebufferContext, backend: Backend, clock: Arc<dyn Clock>) -> Self {
        let watchdog = Arc::new(WatchdogTimer::new(context.timeout_us()));
        watchdog.reset(clock.now_us());
        Self {
            context,
            backend,
            watchdog,
            health_monitor: None,
            clock,
            open: None,
        }
    }

    pub fn set_health_monitor(&mut self, monitor: HealthMonitor) {
        self.health_monitor = Some(monitor);
    }

    pub fn context(&self) -> &FramebufferContext {
        &self.context
    }

    pub fn mode(&self) -> SessionMode {
        match self.backend {
            Backend::Direct(_) => SessionMode::Direct,
            Backend::Composited(_) => SessionMode::Composited,
        }
    }

    /// Shared handle for a concurrent poller.
    pub fn watchdog(&self) -> Arc<WatchdogTimer> {
        self.watchdog.clone()
    }

    /// The compositor has dropped this client.
    pub fn is_lost(&self) -> bool {
        match &self.backend {
            Backend::Composited(c) => c.private.connection_state() == ConnectionState::Disconnected,
            Backend::Direct(_) => false,
        }
    }

    /// The attached region, for composited sessions.
    pub fn region(&self) -> Option<&ClientRegion> {
        match &self.backend {
            Backend::Composited(c) => Some(&c.region),
            Backend::Direct(_) => None,
        }
    }

    fn try_acquire(&mut self) -> Option<SlotHandle> {
        match &mut self.backend {
            Backend::Direct(d) => d.producer.acquire_frame(),
            Backend::Composited(c) => c.producer.acquire_frame(),
        }
    }

    /// Requests a free frame. Waits up to one frame period, polling at a
    /// quarter period, and returns `None` if no slot frees up in time.
    pub fn begin_frame(&mut self) -> Result<Option<SurfaceMut<'_>>, ClientError> {
        if self.open.is_some() {
            return Err(ClientError::Usage("begin_frame called with a frame already open"));
        }
        if self.is_lost() {
            return Err(ClientError::SessionLost);
        }
        let period = self.context.frame_period_us();
        let start = self.clock.now_us();
        let slot = loop {
            if let Some(slot) = self.try_acquire() {
                break slot;
            }
            let waited = self.clock.now_us().saturating_sub(start);
            if waited >= period {
                return Ok(None);
            }
            self.clock.sleep_us((period / 4).max(1).min(period - waited));
        };
        self.open = Some(slot);
        Ok(Some(self.frame_mut(slot)?))
    }

    /// Like [`ClientSession::begin_frame`] but never waits.
    pub fn try_begin_frame(&mut self) -> Result<Option<SurfaceMut<'_>>, ClientError> {
        if self.open.is_some() {
            return Err(ClientError::Usage("begin_frame called with a frame already open"));
        }
        if self.is_lost() {
            return Err(ClientError::SessionLost);
        }
        let Some(slot) = self.try_acquire() else {
            return Ok(None);
        };
        self.open = Some(slot);
        Ok(Some(self.frame_mut(slot)?))
    }

    /// The currently open frame again, e.g. after `begin_frame`'s borrow ended.
    pub fn open_frame(&mut self) -> Result<SurfaceMut<'_>, ClientError> {
        let slot = self.open.ok_or(ClientError::Usage("no frame is open"))?;
        Ok(self.frame_mut(slot)?)
    }

    fn frame_mut(&mut self, slot: SlotHandle) -> Result<SurfaceMut<'_>, PixelError> {
        let geometry = self.context.geometry();
        let format = self.context.format();
        let pixels: &mut [u8] = match &mut self.backend {
            Backend::Direct(d) => &mut d.frames[slot.index()],
            // SAFETY: the slot is UPDATING and owned by this session's producer.
            Backend::Composited(c) => unsafe { c.region.frame_pixels_mut(slot.index()) },
        };
        SurfaceMut::new(pixels, geometry, format)
    }

    /// Submits the open frame, resets the watchdog and records a heartbeat.
    /// Returns the frame's sequence number.
    pub fn end_frame(&mut self) -> Result<u64, ClientError> {
        let slot = self.open.ok_or(ClientError::Usage("end_frame called without an open frame"))?;
        let now = self.clock.now_us();
        let sequence = match &mut self.backend {
            Backend::Direct(d) => d.producer.submit_frame(slot)?,
            Backend::Composited(c) => {
                let sequence = c.producer.submit_frame(slot)?;
                c.private.record_heartbeat(now, true);
                sequence
            }
        };
        self.open = None;
        self.watchdog.reset(now);
        Ok(sequence)
    }

    /// Tells the compositor the client is alive without submitting a frame.
    pub fn notify_alive(&mut self) -> Result<(), ClientError> {
        if self.is_lost() {
            return Err(ClientError::SessionLost);
        }
        if let Backend::Composited(c) = &self.backend {
            c.private.record_heartbeat(self.clock.now_us(), false);
        }
        Ok(())
    }

    /// Calls the health monitor once per expiry episode.
    pub fn poll_watchdog(&mut self, now_us: u64) -> WatchdogStatus {
        let status = self.watchdog.poll(now_us);
        if status == (WatchdogStatus::Expired { first: true }) {
            let expiry = WatchdogExpiry {
                deadline_us: self.watchdog.deadline_us(),
                observed_us: now_us,
            };
            warn!("watchdog expired: deadline {}us, now {}us", expiry.deadline_us, now_us);
            if let Some(monitor) = self.health_monitor.as_mut() {
                monitor(&expiry);
            }
        }
        status
    }

    /// Restarts the watchdog after the health monitor handled an expiry.
    pub fn restart_watchdog(&mut self) {
        self.watchdog.reset(self.clock.now_us());
    }

    /// Shows the next frame on the session's own display.
    ///
    /// With nothing new queued, the previous frame is shown again. In a
    /// composited session this is a no-op: the compositor presents.
    pub fn present_direct(&mut self, mode: QueueMode) -> Result<DirectPresent, ClientError> {
        let geometry = self.context.geometry();
        let format = self.context.format();
        let single_slot = self.context.queue_depth() == 1;
        let d = match &mut self.backend {
            Backend::Direct(d) => d,
            Backend::Composited(_) => return Ok(DirectPresent::Delegated),
        };
        let outcome = d.consumer.present(mode)?;
        let (pixels, result): (&[u8], DirectPresent) = match outcome {
            Presentation::New { slot, sequence } => {
                if single_slot {
                    let copy = d.frames[slot.index()].clone();
                    d.consumer.release_held()?;
                    d.retained = Some((copy, sequence));
                    (&d.retained.as_ref().unwrap().0, DirectPresent::New(sequence))
                } else {
                    (&d.frames[slot.index()], DirectPresent::New(sequence))
                }
            }
            Presentation::Held { slot, sequence } => {
                (&d.frames[slot.index()], DirectPresent::Repeated(sequence))
            }
            Presentation::Empty => match &d.retained {
                Some((copy, sequence)) => (copy, DirectPresent::Repeated(*sequence)),
                None => return Ok(DirectPresent::Nothing),
            },
        };
        d.sink.present(&Surface::new(pixels, geometry, format)?)?;
        Ok(result)
    }

    /// Frames the direct-mode sink has accepted.
    pub fn frames_presented(&self) -> u64 {
        match &self.backend {
            Backend::Direct(d) => d.sink.frames(),
            Backend::Composited(_) => 0,
        }
    }
}
