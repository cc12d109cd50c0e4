//! A client that stops rendering but keeps heartbeating keeps its last frame
//! on screen, byte for byte, until it renders again or is disconnected.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fbstack_core::sink::bytes_checksum;
use fbstack_core::{
    client_attach, AttachOptions, ClientSession, Compositor, CompositorConfig, DisconnectReason, NullSink,
    PixelFormat, Rect, RegionConfig, ServerRegion, SimClock, SurfaceGeometry,
};

use crate::Outcome;

const W: u32 = 48;
const H: u32 = 32;
const PLACEMENT: Rect = Rect::new(8, 4, W, H);
const COMPOSE_US: u64 = 33_333;
const TIMEOUT_US: u64 = 2_000_000;
const HEARTBEAT_US: u64 = 100_000;

/// Phases of the client's behaviour, as (end time, what it does).
#[derive(Clone, Copy, PartialEq, Debug)]
enum Behaviour {
    Render,
    HeartbeatOnly,
    Silent,
}

const PLAN: [(u64, Behaviour); 4] = [
    (1_000_000, Behaviour::Render),
    (4_000_000, Behaviour::HeartbeatOnly),
    (4_500_000, Behaviour::Render),
    (9_000_000, Behaviour::Silent),
];

fn behaviour_at(t: u64) -> Behaviour {
    PLAN.iter().find(|(end, _)| t < *end).map_or(Behaviour::Silent, |(_, b)| *b)
}

/// Checksum of the placement rectangle's rows in the composed target.
fn shown(compositor: &Compositor<NullSink>) -> u64 {
    let target = compositor.target();
    let mut bytes = Vec::with_capacity((W * H * 4) as usize);
    for y in PLACEMENT.y..PLACEMENT.y + H {
        let row = target.row(y);
        bytes.extend_from_slice(&row[4 * PLACEMENT.x as usize..4 * (PLACEMENT.x + W) as usize]);
    }
    bytes_checksum(&bytes)
}

pub fn run() -> Outcome {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7072_6573);
    let clock = Arc::new(SimClock::new(0));
    let target = SurfaceGeometry::with_default_pitch(64, 40).map_err(|e| err(&e))?;
    let mut compositor =
        Compositor::new(CompositorConfig::new(target, PixelFormat::R8G8B8A8), NullSink::new(), clock.clone())
            .map_err(|e| err(&e))?;
    let config = RegionConfig::new(
        SurfaceGeometry::with_default_pitch(W, H).map_err(|e| err(&e))?,
        vec![PixelFormat::R8G8B8A8],
        1,
        TIMEOUT_US,
        3,
    );
    let server = ServerRegion::create_heap(&config).map_err(|e| err(&e))?;
    compositor
        .register_client(1, server.region().clone(), PLACEMENT, 0)
        .map_err(|e| err(&e))?;
    let attached =
        client_attach(server.region().clone(), &AttachOptions::default(), &*clock).map_err(|e| err(&e))?;
    let mut session = ClientSession::composited(attached, clock.clone());

    // Golden checksum of the last frame submitted, taken from the client's
    // own pixels just before submission.
    let mut golden: Option<u64> = None;
    let mut last_signal = 0u64;
    let mut held_checks = 0u32;
    let mut preserved_during_silence = 0u32;
    let mut disconnect_at = None;
    let (mut next_client, mut next_compose) = (0u64, 0u64);
    let end = PLAN[PLAN.len() - 1].0;
    while next_compose < end {
        let t = next_client.min(next_compose);
        clock.set(t);
        if next_client == t {
            match behaviour_at(t) {
                Behaviour::Render => {
                    let Some(mut frame) = session.try_begin_frame().map_err(|e| err(&e))? else {
                        return Err(format!("no free slot at {t}us"));
                    };
                    let mut rows = Vec::new();
                    for y in 0..H {
                        let row = &mut frame.row_mut(y)[..4 * W as usize];
                        rng.fill(row);
                        rows.extend_from_slice(row);
                    }
                    golden = Some(bytes_checksum(&rows));
                    session.end_frame().map_err(|e| err(&e))?;
                    last_signal = t;
                    next_client = t + 20_000;
                }
                Behaviour::HeartbeatOnly => {
                    session.notify_alive().map_err(|e| err(&e))?;
                    last_signal = t;
                    next_client = t + HEARTBEAT_US;
                }
                Behaviour::Silent => next_client = u64::MAX,
            }
        }
        if next_compose == t {
            compositor.check_health(t);
            compositor.compose_once(t).map_err(|e| err(&e))?;
            let disconnected = compositor.events().first().map(|e| (e.at_us, e.reason.clone()));
            let on_screen = shown(&compositor);
            match disconnected {
                None => {
                    let want = golden.ok_or("compose before any frame")?;
                    ensure!(
                        on_screen == want,
                        "compose at {t}us shows {on_screen:016x}, last submitted frame is {want:016x} ({:?})",
                        behaviour_at(t)
                    );
                    held_checks += 1;
                    if behaviour_at(t) != Behaviour::Render {
                        preserved_during_silence += 1;
                    }
                }
                Some((at, reason)) => {
                    ensure!(
                        matches!(reason, DisconnectReason::WatchdogTimeout { .. }),
                        "disconnected for {reason}"
                    );
                    ensure!(behaviour_at(at) == Behaviour::Silent, "disconnected at {at}us while still heartbeating");
                    ensure!(at > last_signal + TIMEOUT_US, "disconnected at {at}us, before the timeout ran out");
                    ensure!(Some(on_screen) != golden, "stale frame still shown after disconnect");
                    disconnect_at.get_or_insert(at);
                }
            }
            next_compose += COMPOSE_US;
        }
    }
    let at = disconnect_at.ok_or("silent client was never disconnected")?;
    Ok(format!(
        "{held_checks} composes matched the golden checksum of the last submitted frame, \
         {preserved_during_silence} of them without new frames; indicator replaced it at {:.3} s",
        at as f64 / 1e6
    ))
}
