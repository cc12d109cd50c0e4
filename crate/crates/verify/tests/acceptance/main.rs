//! Acceptance suite. Runs each criterion in turn, prints one PASS/FAIL line
//! per criterion and exits non-zero if any failed.
//!
//! `cargo test -p fbstack-verify --test acceptance -- <name or number>` runs
//! a subset.

/// Turns a failed check into an `Err` with a formatted reason.
macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

mod containment;
mod model;
mod overhead;
mod pixels;
mod preservation;
mod protocol;
mod watchdog;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

/// Details on success, the reason on failure.
pub type Outcome = Result<String, String>;

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 8] = [
    (1, "state-machine soundness", model::run),
    (2, "tearing freedom", tearing::run),
    (3, "protocol round-trip", protocol::run),
    (4, "overhead ratios", overhead::run),
    (5, "watchdog timing", watchdog::run),
    (6, "fault containment", containment::run),
    (7, "preservation rule", preservation::run),
    (8, "pixel conversion", pixels::run),
];

fn selected(filters: &[String], number: u32, name: &str) -> bool {
    filters.is_empty()
        || filters
            .iter()
            .any(|f| f.parse::<u32>().ok() == Some(number) || name.contains(f.as_str()))
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (number, name, run) in CRITERIA {
        if !selected(&filters, number, name) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|payload| {
            let message = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(message)
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(details) => println!("PASS criterion {number} ({name}, {secs:.1} s): {details}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL criterion {number} ({name}, {secs:.1} s): {reason}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
