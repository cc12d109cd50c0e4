//! Benchmark report: raw samples, derived ratios, text and JSON output.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Framebuffer-API fps over direct fps, as observed on the original
/// embedded target (32.5 / 32).
pub const REFERENCE_FRAMEBUFFER_RATIO: f64 = 32.5 / 32.0;
/// Composited output fps over direct fps on the same target (29.5 / 32).
pub const REFERENCE_COMPOSITOR_RATIO: f64 = 29.5 / 32.0;
/// Per-client fps under the compositor over direct fps (48 / 32).
pub const REFERENCE_CLIENT_RATIO: f64 = 48.0 / 32.0;

pub const THRESHOLD_FRAMEBUFFER_RATIO: f64 = 0.95;
pub const THRESHOLD_COMPOSITOR_RATIO: f64 = 0.85;
pub const THRESHOLD_CLIENT_RATIO: f64 = 1.2;

/// Frame-rate statistics of one timed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpsSample {
    pub frames: u64,
    pub seconds: f64,
    pub mean_fps: f64,
    /// Lowest rate over consecutive half-second windows.
    pub min_fps: f64,
}

impl FpsSample {
    /// Builds statistics from frame completion times (seconds from start).
    pub fn from_times(times: &[f64], seconds: f64) -> FpsSample {
        const WINDOW: f64 = 0.5;
        let windows = (seconds / WINDOW).floor() as usize;
        let mut counts = vec![0u64; windows.max(1)];
        for &t in times {
            let i = (t / WINDOW) as usize;
            if i < counts.len() {
                counts[i] += 1;
            }
        }
        let min = if windows == 0 {
            times.len() as f64 / seconds.max(f64::EPSILON)
        } else {
            counts.iter().map(|&c| c as f64 / WINDOW).fold(f64::INFINITY, f64::min)
        };
        FpsSample {
            frames: times.len() as u64,
            seconds,
            mean_fps: times.len() as f64 / seconds.max(f64::EPSILON),
            min_fps: min,
        }
    }

    pub fn from_count(frames: u64, seconds: f64) -> FpsSample {
        let fps = frames as f64 / seconds.max(f64::EPSILON);
        FpsSample {
            frames,
            seconds,
            mean_fps: fps,
            min_fps: fps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub parallelism: usize,
    pub cpu_model: Option<String>,
}

impl MachineInfo {
    pub fn detect() -> MachineInfo {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        });
        MachineInfo {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cpu_model,
        }
    }
}

/// Cost of one client frame versus one display checksum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub complexity: u32,
    pub render_ms: f64,
    pub present_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositedRun {
    pub clients: usize,
    pub placements: Vec<(u32, u32)>,
    pub output: FpsSample,
    pub per_client: Vec<FpsSample>,
    pub disconnects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub framebuffer_over_direct: f64,
    pub compositor_over_direct: f64,
    /// Slowest client under the compositor over direct.
    pub client_over_direct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub machine: MachineInfo,
    pub target: (u32, u32),
    pub client: (u32, u32),
    pub sink: String,
    pub calibration: Calibration,
    pub direct: FpsSample,
    pub framebuffer: FpsSample,
    /// Frames the sink counted during the framebuffer window, and that
    /// window's length by an independent stopwatch.
    pub framebuffer_sink_frames: u64,
    pub framebuffer_stopwatch_s: f64,
    pub composited: Option<CompositedRun>,
    pub single_client: Option<CompositedRun>,
}

impl BenchmarkReport {
    /// Ratios from this report's own samples.
    pub fn ratios(&self) -> Option<Ratios> {
        let direct = self.direct.mean_fps;
        let comp = self.composited.as_ref()?;
        let slowest = comp.per_client.iter().map(|c| c.mean_fps).fold(f64::INFINITY, f64::min);
        Some(Ratios {
            framebuffer_over_direct: self.framebuffer.mean_fps / direct,
            compositor_over_direct: comp.output.mean_fps / direct,
            client_over_direct: slowest / direct,
        })
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        if let Some(r) = self.ratios() {
            value["ratios"] = serde_json::to_value(r).expect("ratios serialize");
        }
        serde_json::to_string_pretty(&value).expect("json")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m = &self.machine;
        let _ = writeln!(
            out,
            "machine: {} {} x{} {}",
            m.os,
            m.arch,
            m.parallelism,
            m.cpu_model.as_deref().unwrap_or("")
        );
        let _ = writeln!(
            out,
            "target {}x{}, client {}x{}, sink {}, complexity {} (render {:.2} ms, present {:.2} ms)",
            self.target.0,
            self.target.1,
            self.client.0,
            self.client.1,
            self.sink,
            self.calibration.complexity,
            self.calibration.render_ms,
            self.calibration.present_ms
        );
        let _ = writeln!(out, "{:<28} {:>8} {:>9} {:>9}", "configuration", "frames", "mean fps", "min fps");
        let mut row = |name: &str, s: &FpsSample| {
            let _ = writeln!(out, "{name:<28} {:>8} {:>9.2} {:>9.2}", s.frames, s.mean_fps, s.min_fps);
        };
        row("direct", &self.direct);
        row("framebuffer api", &self.framebuffer);
        for (label, run) in [("compositor", &self.composited), ("compositor (1 client)", &self.single_client)] {
            if let Some(run) = run {
                row(&format!("{label} output"), &run.output);
                for (i, c) in run.per_client.iter().enumerate() {
                    row(&format!("{label} client {}", i + 1), c);
                }
            }
        }
        if let Some(r) = self.ratios() {
            let _ = writeln!(out, "{:<28} {:>9} {:>9} {:>9}", "ratio", "measured", "required", "reference");
            for (name, v, need, reference) in [
                ("framebuffer / direct", r.framebuffer_over_direct, THRESHOLD_FRAMEBUFFER_RATIO, REFERENCE_FRAMEBUFFER_RATIO),
                ("compositor / direct", r.compositor_over_direct, THRESHOLD_COMPOSITOR_RATIO, REFERENCE_COMPOSITOR_RATIO),
                ("client / direct", r.client_over_direct, THRESHOLD_CLIENT_RATIO, REFERENCE_CLIENT_RATIO),
            ] {
                let _ = writeln!(out, "{name:<28} {v:>9.3} {need:>9.3} {reference:>9.3}");
            }
        }
        out
    }
}
