//! One misbehaving client must not disturb its neighbour or the compositor.

use fbstack_core::harness::sim::{run_sim, SimOutcome};
use fbstack_core::harness::{SinkKind, SinkSpec, TargetSpec, Widget};
use fbstack_core::{
    ChecksumSink, ClientSpec, DisconnectReason, FaultAction, FaultScript, PixelFormat, ScenarioConfig,
};

use crate::Outcome;

const FAULT_AT_S: f64 = 2.0;
const MIN_FPS: u32 = 10;

fn scenario(faults: Vec<FaultAction>) -> ScenarioConfig {
    let mut a = ClientSpec::new(1, 96, 96, 8, 8);
    a.min_fps = MIN_FPS;
    a.faults = FaultScript::new(faults);
    let mut b = ClientSpec::new(2, 96, 96, 112, 8);
    b.widget = Widget::Solid;
    b.min_fps = MIN_FPS;
    ScenarioConfig {
        name: "containment".into(),
        duration_s: 8.0,
        target: TargetSpec {
            width: 216,
            height: 112,
            format: PixelFormat::B8G8R8A8,
            compose_fps: 30,
            background: [16, 16, 24, 255],
            watchdog_tick_ms: None,
        },
        sink: SinkSpec {
            kind: SinkKind::Checksum,
            dir: None,
        },
        clients: vec![a, b],
    }
}

fn simulate(config: &ScenarioConfig) -> Result<(SimOutcome, u64), String> {
    let (outcome, sink) = run_sim(config, ChecksumSink::new(), &Default::default()).map_err(|e| e.to_string())?;
    Ok((outcome, sink.checksums().len() as u64))
}

/// Every compose period produced exactly one presented frame.
fn check_cadence(name: &str, config: &ScenarioConfig, outcome: &SimOutcome, presented: u64) -> Result<(), String> {
    let period = config.compose_period_us();
    ensure!(outcome.sink_errors.is_empty(), "{name}: sink errors {:?}", outcome.sink_errors);
    ensure!(
        outcome.composes == outcome.expected_composes && presented == outcome.composes,
        "{name}: {} composes, {presented} presented, {} expected",
        outcome.composes,
        outcome.expected_composes
    );
    for (k, &t) in outcome.compose_times_us.iter().enumerate() {
        ensure!(t == k as u64 * period, "{name}: compose {k} at {t}us, expected {}us", k as u64 * period);
    }
    Ok(())
}

pub fn run() -> Outcome {
    let baseline_config = scenario(Vec::new());
    let (baseline, frames) = simulate(&baseline_config)?;
    check_cadence("fault-free", &baseline_config, &baseline, frames)?;
    ensure!(baseline.events.is_empty(), "fault-free run disconnected {:?}", baseline.events);
    let b_baseline = baseline.clients[&2].presented;

    let faults: [(&str, FaultAction, fn(&DisconnectReason) -> bool); 4] = [
        (
            "stall",
            FaultAction::Stall {
                from_s: FAULT_AT_S,
                duration_s: None,
            },
            |r| matches!(r, DisconnectReason::WatchdogTimeout { .. }),
        ),
        ("crash", FaultAction::Crash { at_s: FAULT_AT_S }, |r| {
            matches!(r, DisconnectReason::WatchdogTimeout { .. })
        }),
        ("garbage-header", FaultAction::GarbageHeader { at_s: FAULT_AT_S }, |r| {
            *r == DisconnectReason::HeaderCorrupted
        }),
        (
            "slow-to",
            FaultAction::SlowTo {
                fps: MIN_FPS / 2,
                at_s: FAULT_AT_S,
            },
            |r| matches!(r, DisconnectReason::LowFramerate { .. }),
        ),
    ];
    let mut cells = Vec::new();
    for (name, fault, expected_reason) in faults {
        let config = scenario(vec![fault]);
        let (outcome, frames) = simulate(&config)?;
        check_cadence(name, &config, &outcome, frames)?;
        let b = outcome.clients[&2].presented;
        ensure!(
            b.abs_diff(b_baseline) <= 1,
            "{name}: client B presented {b} frames, {b_baseline} without the fault"
        );
        ensure!(outcome.disconnect_of(2).is_none(), "{name}: client B was disconnected");
        let event = outcome
            .disconnect_of(1)
            .ok_or_else(|| format!("{name}: faulty client A was never disconnected"))?;
        ensure!(expected_reason(&event.reason), "{name}: A disconnected for {}", event.reason);
        cells.push(format!("{name}: B {b}, A out at {:.3} s", event.at_us as f64 / 1e6));
    }
    Ok(format!(
        "B presented {b_baseline} frames fault-free; {}; every run composed {} frames on cadence",
        cells.join(", "),
        baseline.expected_composes
    ))
}
