//! Wall-clock overhead measurement.
//!
//! Three loops render the counters widget at the same client size:
//! (a) straight into a display-sized buffer that is handed to the sink,
//! (b) the same loop through a direct-mode [`ClientSession`],
//! (c) N composited clients on their own threads feeding one compositor.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::info;

use super::config::{BenchSuite, ClientSpec, SinkKind};
use super::report::{BenchmarkReport, Calibration, CompositedRun, FpsSample, MachineInfo};
use super::{client_region_config, make_sink, render_counters, HarnessError};
use crate::client::ClientSession;
use crate::clock::{Clock, WallClock};
use crate::compositor::{ClientOutcome, Compositor, CompositorConfig};
use crate::pixel::{FramebufferContext, PixelFormat, Rect, SurfaceGeometry, SurfaceMut};
use crate::protocol::{client_attach, AttachOptions, ServerRegion};
use crate::queue::QueueMode;
use crate::sink::{frame_checksum, OutputSink, SharedSink};

/// Pixel format of both the clients and the display in every loop.
pub const BENCH_FORMAT: PixelFormat = PixelFormat::B8G8R8A8;
const WARMUP: Duration = Duration::from_millis(300);
const IDLE_SLEEP: Duration = Duration::from_micros(200);

/// Measured cost, in milliseconds, of rendering a `w`×`h` counters frame at
/// each complexity.
pub fn render_cost_ms(w: u32, h: u32, complexity: u32, repeats: usize) -> Result<f64, HarnessError> {
    let g = SurfaceGeometry::with_default_pitch(w, h)?;
    let mut buf = vec![0u8; g.byte_len()];
    let mut s = SurfaceMut::new(&mut buf, g, BENCH_FORMAT)?;
    render_counters(&mut s, 0, complexity)?;
    let mut samples = Vec::with_capacity(repeats);
    for i in 0..repeats {
        let start = Instant::now();
        render_counters(&mut s, i as u64 * 16_667, complexity)?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(samples))
}

/// Measured cost, in milliseconds, of checksumming a `w`×`h` display frame.
pub fn checksum_cost_ms(w: u32, h: u32, repeats: usize) -> Result<f64, HarnessError> {
    let g = SurfaceGeometry::with_default_pitch(w, h)?;
    let buf = vec![0x5au8; g.byte_len()];
    let s = crate::pixel::Surface::new(&buf, g, BENCH_FORMAT)?;
    let mut samples = Vec::with_capacity(repeats);
    let mut acc = 0u64;
    for _ in 0..repeats {
        let start = Instant::now();
        acc ^= frame_checksum(&s);
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    std::hint::black_box(acc);
    Ok(median(samples))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Picks a complexity at which rendering one client frame costs about twice
/// presenting one display frame, unless the suite fixes it.
pub fn calibrate(suite: &BenchSuite) -> Result<Calibration, HarnessError> {
    let present_ms = checksum_cost_ms(suite.target_width, suite.target_height, 7)?;
    let (cw, ch) = (suite.client_width, suite.client_height);
    let complexity = match suite.complexity {
        Some(c) => c,
        None => {
            let one = render_cost_ms(cw, ch, 1, 5)?;
            let three = render_cost_ms(cw, ch, 3, 5)?;
            let slope = ((three - one) / 2.0).max(1e-6);
            let base = (one - slope).max(0.0);
            ((2.0 * present_ms - base) / slope).round().clamp(1.0, 64.0) as u32
        }
    };
    let render_ms = render_cost_ms(cw, ch, complexity, 5)?;
    Ok(Calibration {
        complexity,
        render_ms,
        present_ms,
    })
}

fn geometries(suite: &BenchSuite) -> Result<(SurfaceGeometry, Rect), HarnessError> {
    let target = SurfaceGeometry::with_default_pitch(suite.target_width, suite.target_height)?;
    let (x, y) = suite.placements.first().copied().unwrap_or((0, 0));
    let rect = Rect::new(x, y, suite.client_width, suite.client_height);
    if !rect.fits_within(&target) {
        return Err(HarnessError::Config(format!("client placement {rect} outside the target")));
    }
    Ok((target, rect))
}

fn sink_for(kind: SinkKind) -> Result<Box<dyn OutputSink>, HarnessError> {
    if kind == SinkKind::Images {
        return Err(HarnessError::Config("benchmarks support the checksum and null sinks".into()));
    }
    make_sink(kind, None)
}

/// Loop (a): render into the display buffer and present it.
pub fn measure_direct(suite: &BenchSuite, complexity: u32) -> Result<FpsSample, HarnessError> {
    let (target, rect) = geometries(suite)?;
    let mut sink = sink_for(suite.sink)?;
    let mut buf = vec![0u8; target.byte_len()];
    let mut display = SurfaceMut::new(&mut buf, target, BENCH_FORMAT)?;
    let seconds = suite.seconds_per_run;
    let mut times = Vec::new();
    let origin = Instant::now();
    let mut start = None;
    loop {
        let now = origin.elapsed();
        let t_us = now.as_micros() as u64;
        render_counters(&mut display.sub_surface(rect)?, t_us, complexity)?;
        sink.present(&display.as_surface())?;
        let done = origin.elapsed();
        match start {
            None if done >= WARMUP => start = Some(done),
            Some(s) => {
                let t = (done - s).as_secs_f64();
                if t >= seconds {
                    break;
                }
                times.push(t);
            }
            None => {}
        }
    }
    Ok(FpsSample::from_times(&times, seconds))
}

/// Result of loop (b), with the sink's own frame count over the window.
#[derive(Debug, Clone)]
pub struct FramebufferMeasurement {
    pub sample: FpsSample,
    pub sink_frames: u64,
    pub stopwatch_seconds: f64,
}

/// Loop (b): the same work through a direct-mode session.
pub fn measure_framebuffer(suite: &BenchSuite, complexity: u32) -> Result<FramebufferMeasurement, HarnessError> {
    let (target, rect) = geometries(suite)?;
    let (sink, shared) = SharedSink::new(sink_for(suite.sink)?);
    let clock: Arc<dyn Clock> = Arc::new(WallClock);
    let context = FramebufferContext::new(target, BENCH_FORMAT, 60, 1_000_000, suite.queue_depth)?;
    let mut session = ClientSession::direct(context, Box::new(sink), clock);
    let seconds = suite.seconds_per_run;
    let mut times = Vec::new();
    let origin = Instant::now();
    let mut start: Option<(Duration, u64, Instant)> = None;
    loop {
        let t_us = origin.elapsed().as_micros() as u64;
        if let Some(mut frame) = session.try_begin_frame()? {
            render_counters(&mut frame.sub_surface(rect)?, t_us, complexity)?;
            session.end_frame()?;
        }
        session.present_direct(QueueMode::Ordered)?;
        let done = origin.elapsed();
        match start {
            None if done >= WARMUP => start = Some((done, session.frames_presented(), Instant::now())),
            Some((s, _, _)) => {
                let t = (done - s).as_secs_f64();
                if t >= seconds {
                    break;
                }
                times.push(t);
            }
            None => {}
        }
    }
    let (_, frames_at_start, stopwatch) = start.expect("window started");
    let stopwatch_seconds = stopwatch.elapsed().as_secs_f64();
    let sink_frames = shared.lock().expect("sink lock").frames() - frames_at_start;
    Ok(FramebufferMeasurement {
        sample: FpsSample::from_times(&times, seconds),
        sink_frames,
        stopwatch_seconds,
    })
}

/// Loop (c): `clients` composited clients, each on its own thread, and a
/// compositor on the calling thread that composes whenever a new frame is
/// queued.
pub fn measure_composited(suite: &BenchSuite, complexity: u32, clients: usize) -> Result<CompositedRun, HarnessError> {
    let (target, _) = geometries(suite)?;
    if clients > suite.placements.len() {
        return Err(HarnessError::Config(format!(
            "{clients} clients need {clients} placements, suite has {}",
            suite.placements.len()
        )));
    }
    let clock: Arc<dyn Clock> = Arc::new(WallClock);
    let mut config = CompositorConfig::new(target, BENCH_FORMAT);
    config.background = [16, 24, 32, 255];
    let mut compositor = Compositor::new(config, sink_for(suite.sink)?, clock.clone())?;
    let placements: Vec<(u32, u32)> = suite.placements[..clients].to_vec();

    let mut regions = Vec::new();
    for (i, &(x, y)) in placements.iter().enumerate() {
        let mut spec = ClientSpec::new(i as u32 + 1, suite.client_width, suite.client_height, x, y);
        spec.format = BENCH_FORMAT;
        spec.queue_depth = suite.queue_depth;
        spec.min_fps = 0;
        spec.timeout_ms = 5_000;
        spec.complexity = complexity;
        let server = ServerRegion::create_heap(&client_region_config(&spec)?)?;
        compositor.register_client(spec.id, server.region().clone(), spec.placement(), 0)?;
        regions.push(server.region().clone());
    }

    let seconds = suite.seconds_per_run;
    let stop = AtomicBool::new(false);
    let origin = Instant::now();
    let window_start = origin + WARMUP;
    let window_end = window_start + Duration::from_secs_f64(seconds);

    let (client_times, output_times) = thread::scope(|scope| -> Result<_, HarnessError> {
        let mut handles = Vec::new();
        for region in &regions {
            let (stop, clock) = (&stop, clock.clone());
            let region = region.clone();
            handles.push(scope.spawn(move || -> Result<Vec<f64>, HarnessError> {
                let attach = AttachOptions {
                    preferred_formats: vec![BENCH_FORMAT],
                    ..AttachOptions::default()
                };
                let attached = client_attach(region, &attach, &*clock)?;
                let mut session = ClientSession::composited(attached, clock);
                let mut times = Vec::new();
                while !stop.load(Ordering::Relaxed) {
                    let t_us = origin.elapsed().as_micros() as u64;
                    match session.try_begin_frame()? {
                        Some(mut frame) => render_counters(&mut frame, t_us, complexity)?,
                        None => {
                            thread::sleep(IDLE_SLEEP);
                            continue;
                        }
                    }
                    session.end_frame()?;
                    let done = Instant::now();
                    if done >= window_start && done < window_end {
                        times.push((done - window_start).as_secs_f64());
                    }
                }
                Ok(times)
            }));
        }

        let mut output = Vec::new();
        let result = (|| -> Result<(), HarnessError> {
            loop {
                let now = Instant::now();
                if now >= window_end {
                    return Ok(());
                }
                let now_us = clock.now_us();
                compositor.check_health(now_us);
                if !compositor.has_new_frames() {
                    thread::sleep(IDLE_SLEEP);
                    continue;
                }
                let report = compositor.compose_once(now_us)?;
                let fresh = report.clients.iter().any(|(_, o)| matches!(o, ClientOutcome::Presented(_)));
                let done = Instant::now();
                if fresh && done >= window_start && done < window_end {
                    output.push((done - window_start).as_secs_f64());
                }
            }
        })();
        stop.store(true, Ordering::Relaxed);
        let mut per_client = Vec::new();
        for h in handles {
            per_client.push(h.join().expect("client thread panicked")?);
        }
        result?;
        Ok((per_client, output))
    })?;

    Ok(CompositedRun {
        clients,
        placements,
        output: FpsSample::from_times(&output_times, seconds),
        per_client: client_times.iter().map(|t| FpsSample::from_times(t, seconds)).collect(),
        disconnects: compositor.events().len(),
    })
}

/// Runs calibration and all loops, two-client and one-client composited.
pub fn run_benchmark(suite: &BenchSuite) -> Result<BenchmarkReport, HarnessError> {
    let calibration = calibrate(suite)?;
    info!(
        "complexity {} (render {:.2} ms, present {:.2} ms)",
        calibration.complexity, calibration.render_ms, calibration.present_ms
    );
    let c = calibration.complexity;
    let direct = measure_direct(suite, c)?;
    info!("direct {:.2} fps", direct.mean_fps);
    let fb = measure_framebuffer(suite, c)?;
    info!("framebuffer {:.2} fps", fb.sample.mean_fps);
    let clients = suite.placements.len().min(2);
    let composited = measure_composited(suite, c, clients)?;
    info!("compositor {:.2} fps", composited.output.mean_fps);
    let single_client = if clients > 1 {
        Some(measure_composited(suite, c, 1)?)
    } else {
        None
    };
    Ok(BenchmarkReport {
        machine: MachineInfo::detect(),
        target: (suite.target_width, suite.target_height),
        client: (suite.client_width, suite.client_height),
        sink: format!("{:?}", suite.sink).to_lowercase(),
        calibration,
        direct,
        framebuffer: fb.sample,
        framebuffer_sink_frames: fb.sink_frames,
        framebuffer_stopwatch_s: fb.stopwatch_seconds,
        composited: Some(composited),
        single_client,
    })
}
