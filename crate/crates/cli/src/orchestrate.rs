//! Runs a scenario on simulated time in-process, or on the wall clock as a
//! server process plus one process per client.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::os::unix::process::ExitStatusExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU32, Ordering};
use std::thread;
use std::time::Duration;

use log::{info, warn};

use fbstack_core::harness::sim::{run_sim, SimOptions};
use fbstack_core::{Clock, ScenarioConfig, WallClock};

use crate::client::ClientReport;
use crate::report::{max_gap, ClientSummary, ClockMode, EventRecord, RunReport, SinkSummary};
use crate::server::ServerReport;
use crate::{build_sink, CliError};

/// Time between launching the processes and the scenario's time zero.
pub const STARTUP_US: u64 = 1_000_000;
/// How long past the scenario end a child may take to exit before it is
/// killed.
pub const GRACE_US: u64 = 5_000_000;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub clock: ClockMode,
    /// The `fbstack` executable, spawned for the server and every client.
    pub exe: PathBuf,
    /// Directory for region files; a fresh one under /dev/shm by default.
    pub session_dir: Option<PathBuf>,
    pub keep_session_dir: bool,
}

impl RunOptions {
    pub fn new(clock: ClockMode, exe: PathBuf) -> Self {
        Self {
            clock,
            exe,
            session_dir: None,
            keep_session_dir: false,
        }
    }
}

pub fn run_scenario(config: &ScenarioConfig, options: &RunOptions) -> Result<RunReport, CliError> {
    config.validate()?;
    match options.clock {
        ClockMode::Sim => run_simulated(config),
        ClockMode::Wall => run_processes(config, options),
    }
}

fn sink_summary(config: &ScenarioConfig, frames: u64, digest: Option<String>) -> SinkSummary {
    SinkSummary {
        kind: config.sink.kind,
        frames,
        digest,
        dir: config.sink.dir.clone(),
    }
}

fn run_simulated(config: &ScenarioConfig) -> Result<RunReport, CliError> {
    let (sink, digest) = build_sink(config.sink.kind, config.sink.dir.as_deref())?;
    let (outcome, sink) = run_sim(config, sink, &SimOptions::default())?;
    let events: Vec<EventRecord> = outcome
        .events
        .iter()
        .map(|e| EventRecord {
            client: e.client,
            at_s: e.at_us as f64 / 1e6,
            reason: e.reason.to_string(),
        })
        .collect();
    let clients = config
        .clients
        .iter()
        .map(|spec| {
            let stats = outcome.clients.get(&spec.id).cloned().unwrap_or_default();
            let event = events.iter().find(|e| e.client == spec.id);
            ClientSummary {
                id: spec.id,
                submitted: stats.submitted,
                skipped: stats.skipped,
                presented: stats.presented,
                scripted_faults: !spec.faults.is_empty(),
                disconnected_at_s: event.map(|e| e.at_s),
                disconnect_reason: event.map(|e| e.reason.clone()),
                exit: None,
            }
        })
        .collect();
    let mut report = RunReport {
        scenario: config.name.clone(),
        clock: ClockMode::Sim,
        duration_s: config.duration_s,
        compose_period_us: config.compose_period_us(),
        composes: outcome.composes,
        expected_composes: outcome.expected_composes,
        max_compose_gap_us: max_gap(&outcome.compose_times_us),
        sink: sink_summary(config, sink.frames(), digest.digest()),
        clients,
        events,
        violations: Vec::new(),
    };
    report.check_invariants(config, &outcome.sink_errors);
    Ok(report)
}

fn fresh_session_dir() -> io::Result<PathBuf> {
    static COUNTER: AtomicU32 = AtomicU32::new(0);
    let base = Path::new("/dev/shm");
    let base = if base.is_dir() { base.to_path_buf() } else { std::env::temp_dir() };
    let dir = base.join(format!(
        "fbstack-{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn describe_exit(status: ExitStatus) -> String {
    match (status.code(), status.signal()) {
        (Some(code), _) => format!("exit {code}"),
        (None, Some(sig)) => format!("signal {sig}"),
        _ => "unknown".into(),
    }
}

struct Proc {
    child: Child,
    client: Option<u32>,
    exited: Option<(ExitStatus, u64)>,
}

fn spawn(exe: &Path, args: &[String]) -> Result<Child, CliError> {
    Command::new(exe)
        .args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| CliError::Process(format!("cannot start {}: {e}", exe.display())))
}

fn run_processes(config: &ScenarioConfig, options: &RunOptions) -> Result<RunReport, CliError> {
    let dir = match &options.session_dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            d.clone()
        }
        None => fresh_session_dir()?,
    };
    let result = supervise(config, options, &dir);
    if !options.keep_session_dir {
        let _ = fs::remove_dir_all(&dir);
    }
    result
}

fn supervise(config: &ScenarioConfig, options: &RunOptions, dir: &Path) -> Result<RunReport, CliError> {
    let scenario_path = dir.join("scenario.toml");
    fs::write(&scenario_path, config.to_toml_string())?;
    let server_out = dir.join("server.json");
    let clock = WallClock;
    let epoch = clock.now_us() + STARTUP_US;
    let common = |cmd: &str| {
        vec![
            cmd.to_string(),
            "--scenario".into(),
            scenario_path.display().to_string(),
            "--dir".into(),
            dir.display().to_string(),
            "--epoch-us".into(),
            epoch.to_string(),
        ]
    };

    let mut args = common("serve");
    args.extend(["--out".into(), server_out.display().to_string()]);
    let mut procs = vec![Proc {
        child: spawn(&options.exe, &args)?,
        client: None,
        exited: None,
    }];
    for spec in &config.clients {
        let mut args = common("client");
        args.extend(["--id".into(), spec.id.to_string()]);
        match spawn(&options.exe, &args) {
            Ok(child) => procs.push(Proc {
                child,
                client: Some(spec.id),
                exited: None,
            }),
            Err(e) => {
                for p in &mut procs {
                    let _ = p.child.kill();
                    let _ = p.child.wait();
                }
                return Err(e);
            }
        }
    }
    info!("spawned server and {} clients, epoch {epoch}us", config.clients.len());

    let deadline = epoch + config.duration_us() + GRACE_US;
    loop {
        let now = clock.now_us();
        for p in procs.iter_mut().filter(|p| p.exited.is_none()) {
            if let Some(status) = p.child.try_wait()? {
                p.exited = Some((status, now.saturating_sub(epoch)));
                if !status.success() {
                    warn!(
                        "{} ended with {}",
                        p.client.map_or("server".to_string(), |id| format!("client {id}")),
                        describe_exit(status)
                    );
                }
            }
        }
        if procs.iter().all(|p| p.exited.is_some()) {
            break;
        }
        if now >= deadline {
            for p in procs.iter_mut().filter(|p| p.exited.is_none()) {
                warn!("killing {:?} after the grace period", p.client);
                let _ = p.child.kill();
                let status = p.child.wait()?;
                p.exited = Some((status, now.saturating_sub(epoch)));
            }
            break;
        }
        thread::sleep(Duration::from_millis(5));
    }

    let mut violations = Vec::new();
    let server_status = procs[0].exited.expect("waited").0;
    let server: ServerReport = match fs::read_to_string(&server_out) {
        Ok(text) if server_status.success() => serde_json::from_str(&text)?,
        _ => {
            violations.push(format!("server process failed ({})", describe_exit(server_status)));
            ServerReport::default()
        }
    };

    let mut client_reports: BTreeMap<u32, ClientReport> = BTreeMap::new();
    let mut exits: BTreeMap<u32, (ExitStatus, u64)> = BTreeMap::new();
    for p in &mut procs[1..] {
        let id = p.client.expect("client process");
        let mut out = String::new();
        if let Some(mut stdout) = p.child.stdout.take() {
            let _ = stdout.read_to_string(&mut out);
        }
        if let Some(line) = out.lines().rev().find(|l| l.starts_with('{')) {
            if let Ok(r) = serde_json::from_str::<ClientReport>(line) {
                client_reports.insert(id, r);
            }
        }
        exits.insert(id, p.exited.expect("waited"));
    }

    let mut events = server.events.clone();
    for (&id, &(status, at_us)) in &exits {
        if !status.success() {
            events.push(EventRecord {
                client: id,
                at_s: at_us as f64 / 1e6,
                reason: format!("process ended with {}", describe_exit(status)),
            });
        }
    }
    events.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));

    let clients = config
        .clients
        .iter()
        .map(|spec| {
            let r = client_reports.get(&spec.id).cloned().unwrap_or_default();
            let event = server.events.iter().find(|e| e.client == spec.id);
            ClientSummary {
                id: spec.id,
                submitted: r.submitted,
                skipped: r.skipped,
                presented: server.presented.get(&spec.id).copied().unwrap_or(0),
                scripted_faults: !spec.faults.is_empty(),
                disconnected_at_s: event.map(|e| e.at_s),
                disconnect_reason: event.map(|e| e.reason.clone()),
                exit: exits.get(&spec.id).map(|(s, _)| describe_exit(*s)),
            }
        })
        .collect();

    let mut report = RunReport {
        scenario: config.name.clone(),
        clock: ClockMode::Wall,
        duration_s: config.duration_s,
        compose_period_us: config.compose_period_us(),
        composes: server.compose_times_us.len() as u64,
        expected_composes: config.duration_us().div_ceil(config.compose_period_us()),
        max_compose_gap_us: max_gap(&server.compose_times_us),
        sink: sink_summary(config, server.sink_frames, server.digest.clone()),
        clients,
        events,
        violations: Vec::new(),
    };
    report.check_invariants(config, &server.sink_errors);
    violations.append(&mut report.violations);
    report.violations = violations;
    Ok(report)
}
