//! Run reports written by `fbstack run`.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fbstack_core::harness::SinkKind;
use fbstack_core::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Wall,
    Sim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkSummary {
    pub kind: SinkKind,
    pub frames: u64,
    /// Order-sensitive digest of every frame, for the checksum sink.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub client: u32,
    pub at_s: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub id: u32,
    pub submitted: u64,
    pub skipped: u64,
    /// Composes that showed a new frame from this client.
    pub presented: u64,
    pub scripted_faults: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disconnected_at_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disconnect_reason: Option<String>,
    /// How the client process ended (wall clock runs only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub clock: ClockMode,
    pub duration_s: f64,
    pub compose_period_us: u64,
    pub composes: u64,
    pub expected_composes: u64,
    /// Longest interval between consecutive composes.
    pub max_compose_gap_us: u64,
    pub sink: SinkSummary,
    pub clients: Vec<ClientSummary>,
    pub events: Vec<EventRecord>,
    pub violations: Vec<String>,
}

pub fn max_gap(times_us: &[u64]) -> u64 {
    times_us.windows(2).map(|w| w[1].saturating_sub(w[0])).max().unwrap_or(0)
}

impl RunReport {
    /// Fills `violations` from the recorded run.
    pub fn check_invariants(&mut self, config: &ScenarioConfig, sink_errors: &[String]) {
        let mut v = Vec::new();
        for e in sink_errors {
            v.push(format!("sink error: {e}"));
        }
        // One compose of slack for wall clock startup and teardown.
        let slack = u64::from(self.clock == ClockMode::Wall);
        if self.composes + slack < self.expected_composes {
            v.push(format!(
                "server composed {} frames, expected {}",
                self.composes, self.expected_composes
            ));
        }
        for c in &self.clients {
            let scripted = config.client(c.id).is_some_and(|s| !s.faults.is_empty());
            if !scripted {
                if let Some(reason) = &c.disconnect_reason {
                    v.push(format!("client {} without faults was disconnected: {reason}", c.id));
                }
                if let Some(exit) = c.exit.as_deref().filter(|e| *e != "exit 0") {
                    v.push(format!("client {} without faults ended with {exit}", c.id));
                }
            }
        }
        self.violations = v;
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario {} ({:?} clock, {:.2} s): {} / {} composes, max gap {:.1} ms",
            self.scenario,
            self.clock,
            self.duration_s,
            self.composes,
            self.expected_composes,
            self.max_compose_gap_us as f64 / 1e3
        );
        let _ = writeln!(
            out,
            "sink {:?}: {} frames{}",
            self.sink.kind,
            self.sink.frames,
            self.sink.digest.as_deref().map(|d| format!(", digest {d}")).unwrap_or_default()
        );
        let _ = writeln!(out, "{:>6} {:>10} {:>10} {:>10}  status", "client", "submitted", "presented", "skipped");
        for c in &self.clients {
            let status = match (&c.disconnected_at_s, &c.disconnect_reason) {
                (Some(at), Some(r)) => format!("disconnected at {at:.3} s: {r}"),
                _ => "connected".into(),
            };
            let exit = c.exit.as_deref().map(|e| format!(" [{e}]")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{:>6} {:>10} {:>10} {:>10}  {status}{exit}",
                c.id, c.submitted, c.presented, c.skipped
            );
        }
        if self.violations.is_empty() {
            out.push_str("no invariant violations\n");
        } else {
            for v in &self.violations {
                let _ = writeln!(out, "VIOLATION: {v}");
            }
        }
        out
    }
}
