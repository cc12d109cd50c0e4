//! Rendering overhead of the framebuffer API and the compositor, relative to
//! one client drawing straight into the display.

use std::time::{Duration, Instant};

use fbstack_core::harness::bench::run_benchmark;
use fbstack_core::harness::report::{
    THRESHOLD_CLIENT_RATIO, THRESHOLD_COMPOSITOR_RATIO, THRESHOLD_FRAMEBUFFER_RATIO,
};
use fbstack_core::harness::SinkKind;
use fbstack_core::BenchSuite;

use crate::Outcome;

const BUDGET: Duration = Duration::from_secs(300);

pub fn run() -> Outcome {
    let suite = BenchSuite::default();
    ensure!(
        (suite.target_width, suite.target_height, suite.client_width, suite.client_height) == (1600, 900, 768, 768)
            && suite.sink == SinkKind::Checksum,
        "benchmark defaults drifted from 768x768 clients on 1600x900 with a checksum sink"
    );
    let start = Instant::now();
    let report = run_benchmark(&suite).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let ratios = report.ratios().ok_or("benchmark produced no composited run")?;
    let composited = report.composited.as_ref().expect("ratios need it");

    let checks = [
        ("framebuffer/direct", ratios.framebuffer_over_direct, THRESHOLD_FRAMEBUFFER_RATIO),
        ("composited/direct", ratios.compositor_over_direct, THRESHOLD_COMPOSITOR_RATIO),
        ("client/direct", ratios.client_over_direct, THRESHOLD_CLIENT_RATIO),
    ];
    let summary: Vec<String> = checks
        .iter()
        .map(|(name, value, min)| {
            format!("{name} {value:.3} (>= {min}) {}", if value >= min { "ok" } else { "MISSED" })
        })
        .collect();
    let detail = format!(
        "{}; direct {:.1} fps, {} cpus, complexity {}",
        summary.join(", "),
        report.direct.mean_fps,
        report.machine.parallelism,
        report.calibration.complexity
    );
    ensure!(elapsed < BUDGET, "took {:.0} s, over the 300 s budget; {detail}", elapsed.as_secs_f64());
    ensure!(composited.disconnects == 0, "{} clients disconnected during the run; {detail}", composited.disconnects);
    ensure!(checks.iter().all(|(_, value, min)| value >= min), "{detail}");
    Ok(detail)
}
