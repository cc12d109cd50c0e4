//! Body of one client process in a wall-clock run.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use fbstack_core::harness::{render_widget, ClientSpec, GARBAGE, GARBAGE_OFFSET};
use fbstack_core::{client_attach, AttachOptions, ClientError, ClientSession, Clock, Region, WallClock};

use crate::CliError;

/// How long a client waits for its region file to appear.
pub const REGION_WAIT_US: u64 = 5_000_000;

/// Summary a client prints as one JSON line on stdout before exiting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub id: u32,
    pub submitted: u64,
    pub skipped: u64,
    pub lost: bool,
}

pub fn region_path(dir: &Path, id: u32) -> PathBuf {
    dir.join(format!("client-{id}.fb"))
}

fn open_region(path: &Path, clock: &dyn Clock) -> Result<Arc<Region>, CliError> {
    let start = clock.now_us();
    loop {
        match Region::open_file(path) {
            Ok(r) => return Ok(Arc::new(r)),
            Err(e) if clock.now_us() - start >= REGION_WAIT_US => {
                return Err(CliError::Process(format!("region {} never appeared: {e}", path.display())))
            }
            Err(_) => clock.sleep_us(5_000),
        }
    }
}

/// Attaches to the region the server published for `spec` and renders until
/// `epoch_us + duration_us`, following the fault script. Crash faults abort
/// the process.
pub fn run_client(spec: &ClientSpec, dir: &Path, epoch_us: u64, duration_us: u64) -> Result<ClientReport, CliError> {
    let clock: Arc<dyn Clock> = Arc::new(WallClock);
    let region = open_region(&region_path(dir, spec.id), &*clock)?;
    let attach = AttachOptions {
        preferred_formats: vec![spec.format],
        ..AttachOptions::default()
    };
    let attached = client_attach(region.clone(), &attach, &*clock)?;
    let mut session = ClientSession::composited(attached, clock.clone());
    let id = spec.id;
    session.set_health_monitor(Box::new(move |e| {
        warn!("client {id}: own watchdog expired at {}us", e.observed_us);
    }));
    info!("client {id} attached");
    let now = clock.now_us();
    if epoch_us > now {
        clock.sleep_us(epoch_us - now);
    }
    session.restart_watchdog();

    let mut report = ClientReport {
        id,
        ..ClientReport::default()
    };
    let end = epoch_us + duration_us;
    let mut garbage_done = false;
    let mut next = clock.now_us();
    let mut frame = 0u64;
    loop {
        let now = clock.now_us();
        if now >= end {
            break;
        }
        let t = now.saturating_sub(epoch_us);
        let faults = &spec.faults;
        if now >= epoch_us && faults.crash_at().is_some_and(|at| t >= at) {
            warn!("client {id}: scripted crash at {t}us");
            std::process::abort();
        }
        if now >= epoch_us && !garbage_done && faults.garbage_at().is_some_and(|at| t >= at) {
            // SAFETY: header bytes are never borrowed as slices.
            unsafe { region.write_bytes(GARBAGE_OFFSET, &GARBAGE) };
            garbage_done = true;
        }
        let fps = faults.fps_at(t).filter(|_| now >= epoch_us).unwrap_or(spec.fps);
        let period = if fps == 0 { 0 } else { 1_000_000 / u64::from(fps) };
        let stalled = now >= epoch_us && faults.stalled_at(t);
        if !stalled {
            match session.begin_frame() {
                Ok(Some(mut surface)) => {
                    render_widget(spec, &mut surface, t, frame).map_err(fbstack_core::harness::HarnessError::from)?;
                    session.end_frame()?;
                    report.submitted += 1;
                    frame += 1;
                }
                Ok(None) => {
                    report.skipped += 1;
                    match session.notify_alive() {
                        Ok(()) => {}
                        Err(ClientError::SessionLost) => {
                            info!("client {id}: disconnected by the compositor");
                            report.lost = true;
                            break;
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
                Err(ClientError::SessionLost) => {
                    info!("client {id}: disconnected by the compositor");
                    report.lost = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        session.poll_watchdog(clock.now_us());
        next = next.max(clock.now_us().saturating_sub(period)) + period;
        let now = clock.now_us();
        if next > now {
            clock.sleep_us((next - now).min(end.saturating_sub(now)));
        } else if stalled {
            clock.sleep_us(1_000);
        } else if period == 0 {
            std::thread::yield_now();
        }
    }
    Ok(report)
}
