//! Scenario files (TOML).
//!
//! ```toml
//! name = "two-counters"
//! duration_s = 5.0
//!
//! [target]
//! width = 1600
//! height = 900
//! compose_fps = 30
//!
//! [sink]
//! kind = "checksum"
//!
//! [[client]]
//! id = 1
//! width = 768
//! height = 768
//! x = 16
//! y = 66
//! fps = 48
//! min_fps = 10
//! faults = [{ kind = "stall", from_s = 2.0 }]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::pixel::{PixelFormat, Rect, SurfaceGeometry};

fn default_name() -> String {
    "scenario".into()
}
fn default_duration() -> f64 {
    5.0
}
fn default_compose_fps() -> u32 {
    30
}
fn default_target_format() -> PixelFormat {
    PixelFormat::B8G8R8A8
}
fn default_background() -> [u8; 4] {
    [16, 24, 32, 255]
}
fn default_client_fps() -> u32 {
    48
}
fn default_min_fps() -> u32 {
    10
}
fn default_depth() -> u32 {
    3
}
fn default_timeout_ms() -> u64 {
    500
}
fn default_complexity() -> u32 {
    1
}
fn default_client_format() -> PixelFormat {
    PixelFormat::R8G8B8A8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    pub target: TargetSpec,
    #[serde(default)]
    pub sink: SinkSpec,
    #[serde(default, rename = "client")]
    pub clients: Vec<ClientSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_target_format")]
    pub format: PixelFormat,
    #[serde(default = "default_compose_fps")]
    pub compose_fps: u32,
    /// RGBA.
    #[serde(default = "default_background")]
    pub background: [u8; 4],
    /// Health-check period; defaults to the compose period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub watchdog_tick_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SinkKind {
    #[default]
    Checksum,
    Null,
    Images,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkSpec {
    #[serde(default)]
    pub kind: SinkKind,
    /// Output directory for `images`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Widget {
    #[default]
    Counters,
    /// Flat colour derived from the frame number; cheap.
    Solid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub id: u32,
    #[serde(default)]
    pub widget: Widget,
    pub width: u32,
    pub height: u32,
    pub x: u32,
    pub y: u32,
    /// Target frame rate; 0 renders as fast as possible.
    #[serde(default = "default_client_fps")]
    pub fps: u32,
    /// Minimum acceptable frame rate; 0 disables the check.
    #[serde(default = "default_min_fps")]
    pub min_fps: u32,
    #[serde(default = "default_depth")]
    pub queue_depth: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_complexity")]
    pub complexity: u32,
    #[serde(default = "default_client_format")]
    pub format: PixelFormat,
    #[serde(default, skip_serializing_if = "FaultScript::is_empty")]
    pub faults: FaultScript,
}

impl ClientSpec {
    pub fn new(id: u32, width: u32, height: u32, x: u32, y: u32) -> Self {
        Self {
            id,
            widget: Widget::Counters,
            width,
            height,
            x,
            y,
            fps: default_client_fps(),
            min_fps: default_min_fps(),
            queue_depth: default_depth(),
            timeout_ms: default_timeout_ms(),
            complexity: default_complexity(),
            format: default_client_format(),
            faults: FaultScript::default(),
        }
    }

    pub fn placement(&self) -> Rect {
        Rect::new(self.x, self.y, self.width, self.height)
    }

    pub fn timeout_us(&self) -> u64 {
        self.timeout_ms * 1_000
    }

    /// Rate written into the region header: the minimum rate, or 1 fps when
    /// the check is disabled.
    pub fn header_framerate(&self) -> u32 {
        self.min_fps.max(1)
    }
}

/// One timed misbehaviour. Times are seconds from scenario start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FaultAction {
    /// Stop rendering and heartbeating; `duration_s` absent means forever.
    Stall {
        from_s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration_s: Option<f64>,
    },
    /// The client process dies.
    Crash { at_s: f64 },
    /// The client overwrites its region header once.
    GarbageHeader { at_s: f64 },
    /// The client's frame rate drops to `fps`.
    SlowTo { fps: u32, at_s: f64 },
}

impl FaultAction {
    pub fn start_s(&self) -> f64 {
        match *self {
            FaultAction::Stall { from_s, .. } => from_s,
            FaultAction::Crash { at_s } | FaultAction::GarbageHeader { at_s } => at_s,
            FaultAction::SlowTo { at_s, .. } => at_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultScript(pub Vec<FaultAction>);

impl FaultScript {
    pub fn new(actions: Vec<FaultAction>) -> Self {
        Self(actions)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn actions(&self) -> &[FaultAction] {
        &self.0
    }

    fn validate(&self) -> Result<(), String> {
        for a in &self.0 {
            let ok = match *a {
                FaultAction::Stall { from_s, duration_s } => {
                    from_s >= 0.0 && duration_s.map_or(true, |d| d >= 0.0)
                }
                FaultAction::SlowTo { fps, at_s } => fps > 0 && at_s >= 0.0,
                _ => a.start_s() >= 0.0,
            };
            if !ok || !a.start_s().is_finite() {
                return Err(format!("invalid fault {a:?}"));
            }
        }
        if self.0.windows(2).any(|w| w[0].start_s() > w[1].start_s()) {
            return Err("fault actions must be in time order".into());
        }
        Ok(())
    }

    /// Stalled at `t_us`?
    pub fn stalled_at(&self, t_us: u64) -> bool {
        self.0.iter().any(|a| match *a {
            FaultAction::Stall { from_s, duration_s } => {
                let from = secs_to_us(from_s);
                t_us >= from && duration_s.map_or(true, |d| t_us < from + secs_to_us(d))
            }
            _ => false,
        })
    }

    pub fn crash_at(&self) -> Option<u64> {
        self.0.iter().find_map(|a| match *a {
            FaultAction::Crash { at_s } => Some(secs_to_us(at_s)),
            _ => None,
        })
    }

    pub fn garbage_at(&self) -> Option<u64> {
        self.0.iter().find_map(|a| match *a {
            FaultAction::GarbageHeader { at_s } => Some(secs_to_us(at_s)),
            _ => None,
        })
    }

    /// Frame rate in force at `t_us`, if any slow-to has started.
    pub fn fps_at(&self, t_us: u64) -> Option<u32> {
        self.0
            .iter()
            .filter_map(|a| match *a {
                FaultAction::SlowTo { fps, at_s } if secs_to_us(at_s) <= t_us => Some(fps),
                _ => None,
            })
            .last()
    }
}

pub fn secs_to_us(s: f64) -> u64 {
    (s * 1e6).round() as u64
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn duration_us(&self) -> u64 {
        secs_to_us(self.duration_s)
    }

    pub fn compose_period_us(&self) -> u64 {
        1_000_000 / u64::from(self.target.compose_fps)
    }

    pub fn watchdog_tick_us(&self) -> u64 {
        self.target
            .watchdog_tick_ms
            .map_or(self.compose_period_us(), |ms| secs_to_us(ms / 1e3).max(1))
    }

    pub fn target_geometry(&self) -> Result<SurfaceGeometry, HarnessError> {
        SurfaceGeometry::with_default_pitch(self.target.width, self.target.height)
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn client(&self, id: u32) -> Option<&ClientSpec> {
        self.clients.iter().find(|c| c.id == id)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration {} must be positive", self.duration_s));
        }
        if self.target.compose_fps == 0 {
            return bad("compose_fps must be positive".into());
        }
        let geometry = self.target_geometry()?;
        if self.sink.kind == SinkKind::Images && self.sink.dir.is_none() {
            return bad("images sink needs a dir".into());
        }
        for (i, c) in self.clients.iter().enumerate() {
            if self.clients[..i].iter().any(|o| o.id == c.id) {
                return bad(format!("duplicate client id {}", c.id));
            }
            let p = c.placement();
            if p.is_empty() || !p.fits_within(&geometry) {
                return bad(format!("client {} placement {p} outside target", c.id));
            }
            if let Some(o) = self.clients[..i].iter().find(|o| o.placement().intersects(&p)) {
                return bad(format!("client {} overlaps client {}", c.id, o.id));
            }
            if !(2..=crate::pixel::MAX_QUEUE_DEPTH).contains(&c.queue_depth) {
                return bad(format!("client {} queue depth must be 2..=8", c.id));
            }
            if u128::from(c.timeout_us()) * u128::from(c.header_framerate()) < 2_000_000 {
                return bad(format!("client {} timeout shorter than two periods at min_fps", c.id));
            }
            if c.widget == Widget::Counters && (c.width < 64 || c.height < 64) {
                return bad(format!("client {} counters widget needs at least 64x64", c.id));
            }
            c.faults
                .validate()
                .map_err(|m| HarnessError::Config(format!("client {}: {m}", c.id)))?;
        }
        Ok(())
    }
}

/// Benchmark suite file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSuite {
    #[serde(default = "default_bench_seconds")]
    pub seconds_per_run: f64,
    #[serde(default = "default_target_w")]
    pub target_width: u32,
    #[serde(default = "default_target_h")]
    pub target_height: u32,
    #[serde(default = "default_client_side")]
    pub client_width: u32,
    #[serde(default = "default_client_side")]
    pub client_height: u32,
    /// Client placements; defaults to side by side.
    #[serde(default = "default_placements")]
    pub placements: Vec<(u32, u32)>,
    /// Counters complexity; absent means calibrate so rendering a client
    /// frame costs about twice a display checksum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complexity: Option<u32>,
    #[serde(default = "default_bench_depth")]
    pub queue_depth: u32,
    #[serde(default)]
    pub sink: SinkKind,
}

fn default_bench_seconds() -> f64 {
    3.0
}
fn default_target_w() -> u32 {
    1600
}
fn default_target_h() -> u32 {
    900
}
fn default_client_side() -> u32 {
    768
}
fn default_placements() -> Vec<(u32, u32)> {
    vec![(16, 66), (816, 66)]
}
fn default_bench_depth() -> u32 {
    3
}

impl Default for BenchSuite {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl BenchSuite {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        toml::from_str(&fs::read_to_string(path)?).map_err(|e| HarnessError::Config(e.to_string()))
    }
}
