//! Single-process, simulated-clock scenario runner.
//!
//! Clients, health checks and composition advance as discrete events on one
//! [`SimClock`], so a run is a pure function of its configuration. Events at
//! the same instant run in the order: client frames (by id), health check,
//! compose.

use std::collections::BTreeMap;
use std::sync::Arc;

use log::debug;

use super::config::{ClientSpec, ScenarioConfig};
use super::{client_region_config, render_widget, HarnessError, GARBAGE, GARBAGE_OFFSET};
use crate::client::ClientSession;
use crate::clock::SimClock;
use crate::compositor::{ClientOutcome, CompositionReport, Compositor, CompositorConfig, DisconnectEvent};
use crate::error::ClientError;
use crate::protocol::{client_attach, AttachOptions, ServerRegion};
use crate::region::Region;
use crate::sink::OutputSink;

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Keep every composition report (memory grows with run length).
    pub keep_reports: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimClientStats {
    pub submitted: u64,
    pub skipped: u64,
    /// Composes that showed a new frame from this client.
    pub presented: u64,
    /// Last heartbeat the client wrote before going silent, if it did.
    pub last_heartbeat_us: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct SimOutcome {
    pub composes: u64,
    pub expected_composes: u64,
    pub compose_times_us: Vec<u64>,
    pub clients: BTreeMap<u32, SimClientStats>,
    pub events: Vec<DisconnectEvent>,
    pub reports: Vec<CompositionReport>,
    pub sink_errors: Vec<String>,
}

impl SimOutcome {
    pub fn disconnect_of(&self, client: u32) -> Option<&DisconnectEvent> {
        self.events.iter().find(|e| e.client == client)
    }
}

struct SimClient {
    spec: ClientSpec,
    region: Arc<Region>,
    session: Option<ClientSession>,
    next_frame_us: u64,
    garbage_done: bool,
    stats: SimClientStats,
}

impl SimClient {
    fn period_us(&self, t: u64) -> u64 {
        let fps = self.spec.faults.fps_at(t).unwrap_or(self.spec.fps).max(1);
        1_000_000 / u64::from(fps)
    }

    fn step(&mut self, t: u64) -> Result<(), HarnessError> {
        let faults = &self.spec.faults;
        if faults.crash_at().is_some_and(|at| t >= at) {
            debug!("client {} crashed at {t}us", self.spec.id);
            self.session = None;
            self.next_frame_us = u64::MAX;
            return Ok(());
        }
        if !self.garbage_done && faults.garbage_at().is_some_and(|at| t >= at) {
            // SAFETY: header bytes are never borrowed as slices.
            unsafe { self.region.write_bytes(GARBAGE_OFFSET, &GARBAGE) };
            self.garbage_done = true;
        }
        self.next_frame_us = t + self.period_us(t);
        if faults.stalled_at(t) {
            return Ok(());
        }
        let Some(session) = self.session.as_mut() else {
            return Ok(());
        };
        let frame = self.stats.submitted;
        match session.try_begin_frame() {
            Ok(Some(mut surface)) => render_widget(&self.spec, &mut surface, t, frame)?,
            Ok(None) => {
                self.stats.skipped += 1;
                return Ok(());
            }
            Err(ClientError::SessionLost) => {
                self.session = None;
                self.next_frame_us = u64::MAX;
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        }
        session.end_frame()?;
        self.stats.submitted += 1;
        self.stats.last_heartbeat_us = Some(t);
        Ok(())
    }
}

/// Runs `config` for its duration on simulated time.
pub fn run_sim<S: OutputSink>(
    config: &ScenarioConfig,
    sink: S,
    options: &SimOptions,
) -> Result<(SimOutcome, S), HarnessError> {
    config.validate()?;
    let clock = Arc::new(SimClock::new(0));
    let mut target = CompositorConfig::new(config.target_geometry()?, config.target.format);
    target.background = config.target.background;
    let mut compositor = Compositor::new(target, sink, clock.clone())?;

    let mut clients = Vec::new();
    for spec in &config.clients {
        let server = ServerRegion::create_heap(&client_region_config(spec)?)?;
        let region = server.region().clone();
        compositor.register_client(spec.id, region.clone(), spec.placement(), spec.min_fps)?;
        let attach = AttachOptions {
            preferred_formats: vec![spec.format],
            ..AttachOptions::default()
        };
        let attached = client_attach(region.clone(), &attach, &*clock)?;
        clients.push(SimClient {
            spec: spec.clone(),
            region,
            session: Some(ClientSession::composited(attached, clock.clone())),
            next_frame_us: 0,
            garbage_done: false,
            stats: SimClientStats::default(),
        });
    }

    let duration = config.duration_us();
    let compose_period = config.compose_period_us();
    let tick = config.watchdog_tick_us();
    let (mut next_compose, mut next_tick) = (0u64, tick);
    let mut outcome = SimOutcome {
        expected_composes: duration.div_ceil(compose_period),
        ..SimOutcome::default()
    };

    loop {
        let next_client = clients.iter().map(|c| c.next_frame_us).min().unwrap_or(u64::MAX);
        let t = next_client.min(next_compose).min(next_tick);
        if t >= duration {
            break;
        }
        clock.set(t);
        for c in clients.iter_mut().filter(|c| c.next_frame_us == t) {
            c.step(t)?;
        }
        if next_tick == t {
            compositor.check_health(t);
            next_tick += tick;
        }
        if next_compose == t {
            match compositor.compose_once(t) {
                Ok(report) => {
                    for (id, o) in &report.clients {
                        if let ClientOutcome::Presented(_) = o {
                            if let Some(c) = clients.iter_mut().find(|c| c.spec.id == *id) {
                                c.stats.presented += 1;
                            }
                        }
                    }
                    outcome.composes += 1;
                    outcome.compose_times_us.push(t);
                    if options.keep_reports {
                        outcome.reports.push(report);
                    }
                }
                Err(e) => outcome.sink_errors.push(e.to_string()),
            }
            next_compose += compose_period;
        }
    }

    outcome.events = compositor.events().to_vec();
    outcome.clients = clients.into_iter().map(|c| (c.spec.id, c.stats)).collect();
    Ok((outcome, compositor.into_sink()))
}
