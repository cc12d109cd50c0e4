//! Scenario runner behind the `fbstack` binary.
//!
//! `run` executes a scenario either on simulated time inside one process or
//! on the wall clock as separate processes: one compositor server and one
//! process per client, talking only through shared-memory region files.

pub mod client;
pub mod orchestrate;
pub mod report;
pub mod server;

use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use fbstack_core::harness::{HarnessError, SinkKind};
use fbstack_core::sink::{ChecksumSink, ImageSequenceSink, NullSink, OutputSink, SharedSink};
use fbstack_core::ScenarioConfig;

pub use orchestrate::{run_scenario, RunOptions};
pub use report::{ClockMode, RunReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Process(String),
}

impl From<fbstack_core::ProtocolError> for CliError {
    fn from(e: fbstack_core::ProtocolError) -> Self {
        CliError::Harness(e.into())
    }
}

impl From<fbstack_core::CompositorError> for CliError {
    fn from(e: fbstack_core::CompositorError) -> Self {
        CliError::Harness(e.into())
    }
}

impl From<fbstack_core::ClientError> for CliError {
    fn from(e: fbstack_core::ClientError) -> Self {
        CliError::Harness(e.into())
    }
}

/// Reads the checksum digest of a sink after it has been handed off.
#[derive(Clone, Default)]
pub struct SinkDigest(Option<Arc<Mutex<ChecksumSink>>>);

impl SinkDigest {
    /// Digest of every frame so far, as 16 hex digits. `None` unless the sink
    /// hashes frames.
    pub fn digest(&self) -> Option<String> {
        self.0
            .as_ref()
            .map(|c| format!("{:016x}", c.lock().expect("sink lock").digest()))
    }
}

/// Builds a scenario's output sink.
pub fn build_sink(kind: SinkKind, dir: Option<&Path>) -> Result<(Box<dyn OutputSink>, SinkDigest), HarnessError> {
    Ok(match kind {
        SinkKind::Checksum => {
            let (sink, shared) = SharedSink::new(ChecksumSink::new());
            (Box::new(sink), SinkDigest(Some(shared)))
        }
        SinkKind::Null => (Box::new(NullSink::new()), SinkDigest::default()),
        SinkKind::Images => {
            let dir = dir.ok_or_else(|| HarnessError::Config("images sink needs a directory".into()))?;
            (Box::new(ImageSequenceSink::new(dir)?), SinkDigest::default())
        }
    })
}

/// Applies command-line overrides to a loaded scenario.
pub fn apply_overrides(
    config: &mut ScenarioConfig,
    sink: Option<SinkKind>,
    images_dir: Option<PathBuf>,
    duration_s: Option<f64>,
) -> Result<(), HarnessError> {
    if let Some(kind) = sink {
        config.sink.kind = kind;
    }
    if images_dir.is_some() {
        config.sink.dir = images_dir;
    }
    if let Some(d) = duration_s {
        config.duration_s = d;
    }
    config.validate()
}
