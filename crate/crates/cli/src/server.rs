//! Body of the compositor server process in a wall-clock run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use fbstack_core::harness::client_region_config;
use fbstack_core::{
    ClientOutcome, Clock, Compositor, CompositorConfig, ScenarioConfig, ServerRegion, WallClock,
};

use crate::client::region_path;
use crate::report::EventRecord;
use crate::{build_sink, CliError};

/// What the server hands back to the orchestrator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServerReport {
    /// Compose instants relative to the epoch.
    pub compose_times_us: Vec<u64>,
    pub presented: BTreeMap<u32, u64>,
    pub events: Vec<EventRecord>,
    pub sink_frames: u64,
    pub digest: Option<String>,
    pub sink_errors: Vec<String>,
}

/// Publishes one region file per client, composes every period from
/// `epoch_us` for the scenario's duration and returns what happened.
///
/// Clients are registered (and their watchdogs started) at the epoch, so
/// they may attach any time before it.
pub fn serve(config: &ScenarioConfig, dir: &Path, epoch_us: u64) -> Result<ServerReport, CliError> {
    let clock: Arc<dyn Clock> = Arc::new(WallClock);
    let mut regions = Vec::new();
    for spec in &config.clients {
        let path = region_path(dir, spec.id);
        let staging = path.with_extension("tmp");
        let server = ServerRegion::create_file(&client_region_config(spec)?, &staging)?;
        fs::rename(&staging, &path)?;
        regions.push((spec, server));
    }

    let (sink, digest) = build_sink(config.sink.kind, config.sink.dir.as_deref())?;
    let mut target = CompositorConfig::new(config.target_geometry()?, config.target.format);
    target.background = config.target.background;
    let mut compositor = Compositor::new(target, sink, clock.clone())?;

    let now = clock.now_us();
    if epoch_us > now {
        clock.sleep_us(epoch_us - now);
    }
    for (spec, server) in &regions {
        compositor.register_client(spec.id, server.region().clone(), spec.placement(), spec.min_fps)?;
    }
    compositor.spawn_watchdog(config.watchdog_tick_us());
    info!("server composing from epoch {epoch_us}us");

    let period = config.compose_period_us();
    let count = config.duration_us().div_ceil(period);
    let mut report = ServerReport::default();
    for k in 0..count {
        let due = epoch_us + k * period;
        let now = clock.now_us();
        if due > now {
            clock.sleep_us(due - now);
        }
        let now = clock.now_us();
        match compositor.compose_once(now) {
            Ok(frame) => {
                report.compose_times_us.push(now - epoch_us);
                for (id, outcome) in &frame.clients {
                    if let ClientOutcome::Presented(_) = outcome {
                        *report.presented.entry(*id).or_default() += 1;
                    }
                }
                for e in &frame.disconnects {
                    warn!("client {} disconnected: {}", e.client, e.reason);
                }
            }
            Err(e) => report.sink_errors.push(e.to_string()),
        }
    }
    report.events = compositor
        .events()
        .iter()
        .map(|e| EventRecord {
            client: e.client,
            at_s: e.at_us.saturating_sub(epoch_us) as f64 / 1e6,
            reason: e.reason.to_string(),
        })
        .collect();
    report.sink_frames = compositor.frames();
    report.digest = digest.digest();
    Ok(report)
}
