//! Watchdog timing on simulated time.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fbstack_core::harness::config::{SinkSpec, TargetSpec, Widget};
use fbstack_core::harness::sim::{run_sim, SimOptions};
use fbstack_core::{
    client_attach, AttachOptions, ClientSession, ClientSpec, Compositor, CompositorConfig, DisconnectReason,
    FaultAction, FaultScript, NullSink, PixelFormat, Rect, RegionConfig, ScenarioConfig, ServerRegion, SimClock,
    SurfaceGeometry,
};

use crate::Outcome;

const SCHEDULES: usize = 200;
const STEADY_FRAMES: u64 = 1_000_000;

struct Schedule {
    config: ScenarioConfig,
    period_us: u64,
    stall_us: u64,
    timeout_us: u64,
    tick_us: u64,
}

fn random_schedule(rng: &mut ChaCha8Rng) -> Schedule {
    // Fast enough that the 10 fps minimum cannot trip before the watchdog.
    let fps = rng.gen_range(20..=60u32);
    let period_us = 1_000_000 / u64::from(fps);
    let timeout_ms = rng.gen_range(200..=600u64);
    let tick_ms = rng.gen_range(1..=50u32);
    // The stall starts just after a frame boundary, so that frame is the
    // last heartbeat.
    let k = rng.gen_range(500_000 / period_us..=3_000_000 / period_us);
    let stall_us = k * period_us + 1;

    let mut a = ClientSpec::new(1, 16, 16, 0, 0);
    a.widget = Widget::Solid;
    a.fps = fps;
    a.timeout_ms = timeout_ms;
    a.faults = FaultScript::new(vec![FaultAction::Stall {
        from_s: stall_us as f64 / 1e6,
        duration_s: None,
    }]);
    let mut b = ClientSpec::new(2, 16, 16, 16, 0);
    b.widget = Widget::Solid;
    b.fps = rng.gen_range(20..=60);
    let config = ScenarioConfig {
        name: "watchdog".into(),
        duration_s: (stall_us + timeout_ms * 1_000) as f64 / 1e6 + 0.5,
        target: TargetSpec {
            width: 32,
            height: 16,
            format: PixelFormat::B8G8R8A8,
            // Composing at least as often as the client renders keeps its
            // queue from filling, so every scheduled frame is submitted.
            compose_fps: rng.gen_range(fps..=120),
            background: [0, 0, 0, 255],
            watchdog_tick_ms: Some(f64::from(tick_ms)),
        },
        sink: SinkSpec {
            kind: fbstack_core::harness::SinkKind::Null,
            dir: None,
        },
        clients: vec![a, b],
    };
    Schedule {
        config,
        period_us,
        stall_us,
        timeout_us: timeout_ms * 1_000,
        tick_us: u64::from(tick_ms) * 1_000,
    }
}

fn check_schedule(i: usize, s: &Schedule) -> Result<u64, String> {
    let (outcome, _) = run_sim(&s.config, NullSink::new(), &SimOptions::default()).map_err(|e| e.to_string())?;
    let last = outcome.clients[&1].last_heartbeat_us;
    let expected_last = s.stall_us - 1;
    ensure!(
        last == Some(expected_last),
        "schedule {i}: last heartbeat {last:?}, expected {expected_last} (period {})",
        s.period_us
    );
    let event = outcome
        .disconnect_of(1)
        .ok_or_else(|| format!("schedule {i}: stalled client never disconnected"))?;
    let deadline = expected_last + s.timeout_us;
    ensure!(
        event.reason == DisconnectReason::WatchdogTimeout { deadline_us: deadline },
        "schedule {i}: disconnected for {} instead of the watchdog",
        event.reason
    );
    // Health checks run at every multiple of the tick; the first one strictly
    // past the deadline disconnects.
    let first_tick_after = (deadline / s.tick_us + 1) * s.tick_us;
    ensure!(
        event.at_us == first_tick_after,
        "schedule {i}: disconnect at {}us, expected the tick at {first_tick_after}us",
        event.at_us
    );
    let lateness = event.at_us - (s.stall_us + s.timeout_us);
    ensure!(
        event.at_us >= s.stall_us + s.timeout_us && lateness <= s.tick_us,
        "schedule {i}: disconnect {lateness}us after stall + timeout, tick {}us",
        s.tick_us
    );
    ensure!(outcome.disconnect_of(2).is_none(), "schedule {i}: healthy client disconnected");
    Ok(lateness)
}

/// A client whose gaps between submissions never exceed the timeout.
fn steady_client(rng: &mut ChaCha8Rng) -> Result<(u64, u64), String> {
    const TIMEOUT_US: u64 = 10_000;
    const MIN_GAP_US: u64 = 2_000;
    const COMPOSE_US: u64 = MIN_GAP_US;
    const TICK_US: u64 = 1_000;
    let err = |e: &dyn std::fmt::Display| e.to_string();

    let clock = Arc::new(SimClock::new(0));
    let target = SurfaceGeometry::with_default_pitch(16, 16).map_err(|e| err(&e))?;
    let mut compositor =
        Compositor::new(CompositorConfig::new(target, PixelFormat::R8G8B8A8), NullSink::new(), clock.clone())
            .map_err(|e| err(&e))?;
    let config = RegionConfig::new(
        SurfaceGeometry::with_default_pitch(8, 8).map_err(|e| err(&e))?,
        vec![PixelFormat::R8G8B8A8],
        200,
        TIMEOUT_US,
        3,
    );
    let server = ServerRegion::create_heap(&config).map_err(|e| err(&e))?;
    compositor
        .register_client(1, server.region().clone(), Rect::new(0, 0, 8, 8), 10)
        .map_err(|e| err(&e))?;
    let attached =
        client_attach(server.region().clone(), &AttachOptions::default(), &*clock).map_err(|e| err(&e))?;
    let mut session = ClientSession::composited(attached, clock.clone());

    let (mut next_submit, mut next_tick, mut next_compose) = (0u64, TICK_US, 0u64);
    let mut submitted = 0u64;
    let mut max_gap = 0u64;
    let mut last_submit = 0u64;
    while submitted < STEADY_FRAMES {
        let t = next_submit.min(next_tick).min(next_compose);
        clock.set(t);
        if next_submit == t {
            match session.try_begin_frame().map_err(|e| err(&e))? {
                Some(_) => {}
                None => return Err(format!("no free slot at {t}us")),
            }
            session.end_frame().map_err(|e| err(&e))?;
            max_gap = max_gap.max(t - last_submit);
            last_submit = t;
            submitted += 1;
            next_submit = t + rng.gen_range(MIN_GAP_US..=TIMEOUT_US);
        }
        if next_tick == t {
            let events = compositor.check_health(t);
            ensure!(events.is_empty(), "steady client disconnected at {t}us: {}", events[0].reason);
            next_tick += TICK_US;
        }
        if next_compose == t {
            compositor.compose_once(t).map_err(|e| err(&e))?;
            next_compose += COMPOSE_US;
        }
    }
    ensure!(compositor.events().is_empty(), "steady client was disconnected");
    Ok((submitted, max_gap))
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7761_7463);
    let mut worst = 0;
    for i in 0..SCHEDULES {
        let schedule = random_schedule(&mut rng);
        worst = worst.max(check_schedule(i, &schedule)?);
    }
    let (frames, max_gap) = steady_client(&mut rng)?;
    Ok(format!(
        "{SCHEDULES} stall schedules disconnect on the first tick past stall + timeout (max lateness {worst}us); \
         steady client submitted {frames} frames (max gap {max_gap}us, timeout 10000us) without disconnect"
    ))
}
