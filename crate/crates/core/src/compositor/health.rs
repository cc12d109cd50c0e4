//! Server-side liveness tracking.
//!
//! Each client writes a heartbeat (counter, timestamp, frames submitted) into
//! its private area. The server turns that into a watchdog deadline and a
//! sliding window of frame timestamps for the minimum-framerate check.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crate::clock::Clock;
use crate::error::QueueError;
use crate::protocol::PrivateArea;

/// Length of the framerate window.
pub const FPS_WINDOW_US: u64 = 2_000_000;

// A corrupt frame counter must not make one observation unbounded work.
const MAX_FRAMES_PER_OBSERVATION: u64 = 4_096;

#[derive(Debug, Clone, PartialEq)]
pub enum DisconnectReason {
    WatchdogTimeout { deadline_us: u64 },
    LowFramerate { fps: f64, min_fps: u32 },
    HeaderCorrupted,
    QueueFault(QueueError),
    BadFormat(u32),
}

impl fmt::Display for DisconnectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DisconnectReason::WatchdogTimeout { deadline_us } => {
                write!(f, "watchdog expired (deadline {deadline_us}us)")
            }
            DisconnectReason::LowFramerate { fps, min_fps } => {
                write!(f, "framerate {fps:.2} below minimum {min_fps}")
            }
            DisconnectReason::HeaderCorrupted => f.write_str("region header modified"),
            DisconnectReason::QueueFault(e) => write!(f, "queue fault: {e}"),
            DisconnectReason::BadFormat(v) => write!(f, "invalid negotiated format {v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisconnectEvent {
    pub client: u32,
    pub at_us: u64,
    pub reason: DisconnectReason,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FramerateVerdict {
    Keep,
    Disconnect { fps: f64 },
}

/// Liveness state of one client.
pub struct ClientHealth {
    client: u32,
    private: PrivateArea,
    timeout_us: u64,
    min_fps: u32,
    deadline_us: u64,
    last_count: u64,
    last_frames: u64,
    last_stamp_us: u64,
    first_frame_us: Option<u64>,
    window: VecDeque<u64>,
}

impl ClientHealth {
    /// Starts tracking at `now_us`; the first deadline is `now_us + timeout`.
    pub fn new(client: u32, private: PrivateArea, timeout_us: u64, min_fps: u32, now_us: u64) -> Self {
        let hb = private.heartbeat();
        Self {
            client,
            private,
            timeout_us,
            min_fps,
            deadline_us: now_us + timeout_us,
            last_count: hb.count,
            last_frames: hb.frames,
            last_stamp_us: now_us,
            first_frame_us: None,
            window: VecDeque::new(),
        }
    }

    pub fn client(&self) -> u32 {
        self.client
    }

    pub fn deadline_us(&self) -> u64 {
        self.deadline_us
    }

    /// Frame timestamps currently inside the window.
    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Reads the heartbeat and folds anything new into the deadline and the
    /// frame window.
    pub fn observe(&mut self, now_us: u64) {
        let hb = self.private.heartbeat();
        if hb.count == self.last_count {
            return;
        }
        // Never trust a stamp from the future or one older than what we have.
        let stamp = hb.time_us.clamp(self.last_stamp_us, now_us.max(self.last_stamp_us));
        let frames = hb.frames.saturating_sub(self.last_frames).min(MAX_FRAMES_PER_OBSERVATION);
        if frames > 0 {
            self.first_frame_us.get_or_insert(stamp);
            let span = stamp - self.last_stamp_us;
            for i in 1..=frames {
                self.window.push_back(self.last_stamp_us + span * i / frames);
            }
        }
        self.deadline_us = stamp + self.timeout_us;
        self.last_count = hb.count;
        self.last_frames = hb.frames;
        self.last_stamp_us = stamp;
        self.private.acknowledge(hb.count);
        while self
            .window
            .front()
            .is_some_and(|&t| t + FPS_WINDOW_US <= stamp)
        {
            self.window.pop_front();
        }
    }

    /// Strictly past the deadline.
    pub fn watchdog_expired(&self, now_us: u64) -> bool {
        self.deadline_us < now_us
    }

    /// Frames per second over the window ending at the latest heartbeat.
    pub fn fps(&self) -> f64 {
        self.window.len() as f64 * 1e6 / FPS_WINDOW_US as f64
    }

    /// Judged only once a full window has passed since the first frame.
    /// Exactly `min_fps` is kept.
    pub fn check_framerate(&self, now_us: u64) -> FramerateVerdict {
        let Some(first) = self.first_frame_us else {
            return FramerateVerdict::Keep;
        };
        if self.min_fps == 0 || now_us < first + FPS_WINDOW_US {
            return FramerateVerdict::Keep;
        }
        let needed = u64::from(self.min_fps) * FPS_WINDOW_US;
        if self.window.len() as u64 * 1_000_000 >= needed {
            FramerateVerdict::Keep
        } else {
            FramerateVerdict::Disconnect { fps: self.fps() }
        }
    }
}

/// Liveness state of every ACTIVE client.
#[derive(Default)]
pub struct HealthTable {
    clients: BTreeMap<u32, ClientHealth>,
}

impl HealthTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn track(&mut self, health: ClientHealth) {
        self.clients.insert(health.client, health);
    }

    pub fn untrack(&mut self, client: u32) {
        self.clients.remove(&client);
    }

    pub fn get(&self, client: u32) -> Option<&ClientHealth> {
        self.clients.get(&client)
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    /// Observes every client and removes those past their deadline.
    pub fn check_watchdogs(&mut self, now_us: u64) -> Vec<DisconnectEvent> {
        let mut events = Vec::new();
        for health in self.clients.values_mut() {
            health.observe(now_us);
            if health.watchdog_expired(now_us) {
                events.push(DisconnectEvent {
                    client: health.client,
                    at_us: now_us,
                    reason: DisconnectReason::WatchdogTimeout {
                        deadline_us: health.deadline_us,
                    },
                });
            }
        }
        for e in &events {
            self.clients.remove(&e.client);
        }
        events
    }

    pub fn check_framerate(&mut self, client: u32, now_us: u64) -> FramerateVerdict {
        match self.clients.get_mut(&client) {
            Some(health) => {
                health.observe(now_us);
                health.check_framerate(now_us)
            }
            None => FramerateVerdict::Keep,
        }
    }

    /// Watchdogs, then the framerate of every client still tracked.
    pub fn check_all(&mut self, now_us: u64) -> Vec<DisconnectEvent> {
        let mut events = self.check_watchdogs(now_us);
        let ids: Vec<u32> = self.clients.keys().copied().collect();
        for client in ids {
            let health = &self.clients[&client];
            if let FramerateVerdict::Disconnect { fps } = health.check_framerate(now_us) {
                events.push(DisconnectEvent {
                    client,
                    at_us: now_us,
                    reason: DisconnectReason::LowFramerate {
                        fps,
                        min_fps: health.min_fps,
                    },
                });
                self.clients.remove(&client);
            }
        }
        events
    }
}

pub(crate) enum WatchCommand {
    Track(ClientHealth),
    Untrack(u32),
}

/// Health checks running on their own thread. Disconnect decisions come
/// back over a channel and are applied by the compose loop.
pub(crate) struct WatchdogTask {
    commands: Option<Sender<WatchCommand>>,
    events: Receiver<DisconnectEvent>,
    handle: Option<JoinHandle<()>>,
}

impl WatchdogTask {
    pub(crate) fn spawn(mut table: HealthTable, clock: Arc<dyn Clock>, tick_us: u64) -> Self {
        let (cmd_tx, cmd_rx) = mpsc::channel::<WatchCommand>();
        let (ev_tx, ev_rx) = mpsc::channel();
        let handle = thread::Builder::new()
            .name("watchdog".into())
            .spawn(move || loop {
                loop {
                    match cmd_rx.try_recv() {
                        Ok(WatchCommand::Track(h)) => table.track(h),
                        Ok(WatchCommand::Untrack(id)) => table.untrack(id),
                        Err(TryRecvError::Empty) => break,
                        Err(TryRecvError::Disconnected) => return,
                    }
                }
                for event in table.check_all(clock.now_us()) {
                    if ev_tx.send(event).is_err() {
                        return;
                    }
                }
                clock.sleep_us(tick_us);
            })
            .expect("spawn watchdog thread");
        Self {
            commands: Some(cmd_tx),
            events: ev_rx,
            handle: Some(handle),
        }
    }

    pub(crate) fn send(&self, command: WatchCommand) {
        if let Some(tx) = &self.commands {
            let _ = tx.send(command);
        }
    }

    pub(crate) fn drain(&self) -> Vec<DisconnectEvent> {
        self.events.try_iter().collect()
    }
}

impl Drop for WatchdogTask {
    fn drop(&mut self) {
        self.commands.take();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}
