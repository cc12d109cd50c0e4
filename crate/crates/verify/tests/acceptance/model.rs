//! Exhaustive interleavings of one producer and one consumer.
//!
//! Both sides run real `Producer`/`Consumer` code on their own threads over
//! status words that park on every load, store and CAS until a scheduler
//! grants the step. A depth-first search over the scheduler's choices covers
//! every interleaving of those accesses. A state already explored (same
//! shared words, same position of each thread in its program) is cut off,
//! since its continuations were all explored the first time.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use fbstack_core::{Consumer, FrameState, Presentation, Producer, QueueMode, StatusWords};

use crate::Outcome;

const PRODUCER: usize = 0;
const CONSUMER: usize = 1;
const BUDGET: Duration = Duration::from_secs(60);

/// Unwinds a thread out of an execution the scheduler cut short.
struct Abort;

#[derive(Default)]
struct World {
    status: Vec<u32>,
    seq: Vec<u64>,
    parked: [bool; 2],
    done: [bool; 2],
    grant: Option<usize>,
    abort: bool,
    /// Per thread: its state at the start of the current operation, then the
    /// result of every access since.
    local: [Vec<u64>; 2],
    edges: BTreeSet<(usize, u32, u32)>,
    violations: Vec<String>,
}

impl World {
    fn key(&self) -> Vec<u64> {
        let mut key = Vec::with_capacity(64);
        key.extend(self.status.iter().map(|&s| u64::from(s)));
        key.extend(&self.seq);
        for t in 0..2 {
            key.push(u64::from(self.done[t]));
            key.push(self.local[t].len() as u64);
            key.extend(&self.local[t]);
        }
        key
    }

    fn check_counts(&mut self, who: usize) {
        let count = |state: FrameState| self.status.iter().filter(|&&s| s == state.word()).count();
        let (updating, drawing) = (count(FrameState::Updating), count(FrameState::Drawing));
        if updating > 1 || drawing > 1 {
            let msg = format!("{updating} UPDATING and {drawing} DRAWING slots after a {} step: {:?}", NAMES[who], self.status);
            self.violations.push(msg);
        }
    }
}

const NAMES: [&str; 2] = ["producer", "consumer"];

struct Scheduler {
    world: Mutex<World>,
    cv: Condvar,
}

impl Scheduler {
    fn lock(&self) -> MutexGuard<'_, World> {
        self.world.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn legal(who: usize, from: u32, to: u32, mode: QueueMode) -> bool {
    use FrameState::*;
    let edge = (FrameState::from_word(from), FrameState::from_word(to));
    match who {
        PRODUCER => matches!(edge, (Some(Free), Some(Updating)) | (Some(Updating), Some(Ready))),
        _ => match edge {
            (Some(Ready), Some(Drawing)) | (Some(Drawing), Some(Free)) => true,
            (Some(Ready), Some(Free)) => mode == QueueMode::Flush,
            _ => false,
        },
    }
}

struct ModelWords {
    sched: Arc<Scheduler>,
    me: usize,
    slots: usize,
    mode: QueueMode,
}

impl ModelWords {
    fn step<R>(&self, access: impl FnOnce(&mut World) -> R) -> R {
        let mut w = self.sched.lock();
        w.parked[self.me] = true;
        self.sched.cv.notify_all();
        while w.grant != Some(self.me) && !w.abort {
            w = self.sched.cv.wait(w).unwrap_or_else(|e| e.into_inner());
        }
        w.parked[self.me] = false;
        if w.abort {
            drop(w);
            panic::resume_unwind(Box::new(Abort));
        }
        w.grant = None;
        let result = access(&mut w);
        w.check_counts(self.me);
        self.sched.cv.notify_all();
        result
    }

    fn begin_op(&self, summary: &[u64]) {
        let mut w = self.sched.lock();
        w.local[self.me] = summary.to_vec();
    }

    fn violation(&self, msg: String) {
        self.sched.lock().violations.push(msg);
    }
}

impl StatusWords for ModelWords {
    fn slot_count(&self) -> usize {
        self.slots
    }

    fn load_status(&self, slot: usize) -> u32 {
        let me = self.me;
        self.step(|w| {
            let v = w.status[slot];
            w.local[me].push(u64::from(v));
            v
        })
    }

    fn cas_status(&self, slot: usize, current: FrameState, new: FrameState) -> Result<(), u32> {
        let (me, mode) = (self.me, self.mode);
        self.step(|w| {
            let found = w.status[slot];
            w.local[me].push(100 + u64::from(found));
            if found != current.word() {
                // Each side only ever expects states the other side cannot
                // leave, so a failed CAS is already a protocol bug.
                w.violations
                    .push(format!("{} CAS {current}->{new} on slot {slot} found {found}", NAMES[me]));
                return Err(found);
            }
            if !legal(me, found, new.word(), mode) {
                w.violations.push(format!("{} moved slot {slot} {current}->{new}", NAMES[me]));
            }
            w.edges.insert((me, found, new.word()));
            w.status[slot] = new.word();
            Ok(())
        })
    }

    fn load_sequence(&self, slot: usize) -> u64 {
        let me = self.me;
        self.step(|w| {
            let v = w.seq[slot];
            w.local[me].push(v);
            v
        })
    }

    fn store_sequence(&self, slot: usize, sequence: u64) {
        let me = self.me;
        self.step(|w| {
            w.seq[slot] = sequence;
            w.local[me].push(200);
        })
    }
}

fn producer_program(words: ModelWords, ops: usize) {
    let words = Arc::new(words);
    words.begin_op(&[u64::MAX]);
    let mut producer = Producer::new(words.clone());
    let mut open = None;
    let mut cursor = 0;
    for op in 0..ops {
        let open_tag = open.map_or(0, |h: fbstack_core::SlotHandle| h.index() as u64 + 1);
        words.begin_op(&[op as u64, producer.next_sequence(), cursor, open_tag]);
        match open.take() {
            None => {
                if let Some(h) = producer.acquire_frame() {
                    cursor = h.index() as u64 + 1;
                    open = Some(h);
                }
            }
            Some(h) => {
                if let Err(e) = producer.submit_frame(h) {
                    words.violation(format!("submit failed: {e}"));
                }
            }
        }
    }
}

fn consumer_program(words: ModelWords, ops: usize) {
    let mode = words.mode;
    let words = Arc::new(words);
    let mut consumer = Consumer::new(words.clone());
    for op in 0..ops {
        let previous = consumer.last_presented();
        let (held_slot, held_seq) = consumer.held().map_or((0, 0), |(h, s)| (h.index() as u64 + 1, s));
        words.begin_op(&[op as u64, previous, held_slot, held_seq]);
        match consumer.present(mode) {
            Ok(Presentation::New { sequence, .. }) => {
                if mode == QueueMode::Ordered && sequence != previous + 1 {
                    words.violation(format!("ordered present showed {sequence} after {previous}"));
                }
                if sequence <= previous {
                    words.violation(format!("present went back from {previous} to {sequence}"));
                }
                // A single slot cannot stay on screen or the producer starves;
                // the direct backend copies the frame out and releases it.
                if words.slots == 1 {
                    if let Err(e) = consumer.release_held() {
                        words.violation(format!("release failed: {e}"));
                    }
                }
            }
            Ok(_) => {}
            Err(e) => words.violation(format!("present failed: {e}")),
        }
    }
}

fn spawn_side(
    sched: &Arc<Scheduler>,
    me: usize,
    slots: usize,
    mode: QueueMode,
    ops: usize,
) -> thread::JoinHandle<()> {
    let words = ModelWords {
        sched: sched.clone(),
        me,
        slots,
        mode,
    };
    let sched = sched.clone();
    thread::spawn(move || {
        let result = panic::catch_unwind(AssertUnwindSafe(|| {
            if me == PRODUCER {
                producer_program(words, ops)
            } else {
                consumer_program(words, ops)
            }
        }));
        let mut w = sched.lock();
        if let Err(payload) = result {
            if !payload.is::<Abort>() {
                w.violations.push(format!("{} panicked", NAMES[me]));
            }
        }
        w.done[me] = true;
        w.parked[me] = false;
        sched.cv.notify_all();
    })
}

#[derive(Debug, Default)]
struct Exploration {
    executions: u64,
    states: usize,
    edges: BTreeSet<(usize, u32, u32)>,
    violation: Option<(String, Vec<usize>)>,
}

fn explore(depth: usize, mode: QueueMode, producer_ops: usize, consumer_ops: usize, deadline: Instant) -> Result<Exploration, String> {
    let mut visited: HashSet<Vec<u64>> = HashSet::new();
    // Each entry: the threads runnable at a decision point and which of them
    // the current path picks.
    let mut stack: Vec<(Vec<usize>, usize)> = Vec::new();
    let mut result = Exploration::default();
    loop {
        if Instant::now() > deadline {
            return Err(format!("time budget exhausted after {} executions", result.executions));
        }
        let sched = Arc::new(Scheduler {
            world: Mutex::new(World {
                status: vec![FrameState::Free.word(); depth],
                seq: vec![0; depth],
                ..World::default()
            }),
            cv: Condvar::new(),
        });
        let threads = [
            spawn_side(&sched, PRODUCER, depth, mode, producer_ops),
            spawn_side(&sched, CONSUMER, depth, mode, consumer_ops),
        ];
        let mut path = Vec::new();
        let mut w = sched.lock();
        loop {
            while !(w.grant.is_none() && (0..2).all(|t| w.done[t] || w.parked[t])) {
                w = sched.cv.wait(w).unwrap_or_else(|e| e.into_inner());
            }
            if !w.violations.is_empty() {
                break;
            }
            let enabled: Vec<usize> = (0..2).filter(|&t| w.parked[t]).collect();
            if enabled.is_empty() {
                break;
            }
            let d = path.len();
            let choice = if d < stack.len() {
                let (expected, idx) = &stack[d];
                if *expected != enabled {
                    return Err(format!("replay diverged at step {d}"));
                }
                expected[*idx]
            } else {
                if !visited.insert(w.key()) {
                    break;
                }
                stack.push((enabled.clone(), 0));
                enabled[0]
            };
            path.push(choice);
            w.grant = Some(choice);
            sched.cv.notify_all();
        }
        w.abort = true;
        sched.cv.notify_all();
        drop(w);
        for t in threads {
            t.join().map_err(|_| "model thread died".to_string())?;
        }
        let w = sched.lock();
        result.executions += 1;
        result.edges.extend(w.edges.iter().copied());
        if let Some(v) = w.violations.first() {
            result.violation = Some((v.clone(), path));
            result.states = visited.len();
            return Ok(result);
        }
        drop(w);
        while let Some((enabled, idx)) = stack.last_mut() {
            if *idx + 1 < enabled.len() {
                *idx += 1;
                break;
            }
            stack.pop();
        }
        if stack.is_empty() {
            result.states = visited.len();
            return Ok(result);
        }
    }
}

fn describe_edges(edges: &BTreeSet<(usize, u32, u32)>) -> String {
    let name = |w: u32| FrameState::from_word(w).map_or("?".to_string(), |s| s.to_string());
    let mut out = String::new();
    for (i, &(who, from, to)) in edges.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{}:{}->{}", &NAMES[who][..1], name(from), name(to));
    }
    out
}

pub fn run() -> Outcome {
    let deadline = Instant::now() + BUDGET;
    let mut executions = 0;
    let mut states = 0;
    let mut all_edges = BTreeSet::new();
    for depth in 1..=3 {
        for mode in [QueueMode::Ordered, QueueMode::Flush] {
            // Enough operations for the producer to fill every slot and go
            // round once more, and for the consumer to drain it.
            let producer_ops = 2 * (depth + 1);
            let consumer_ops = depth + 2;
            let e = explore(depth, mode, producer_ops, consumer_ops, deadline)?;
            if let Some((violation, path)) = e.violation {
                return Err(format!("depth {depth} {mode:?}: {violation} (schedule {path:?})"));
            }
            let expected_consumer = match (mode, depth) {
                (QueueMode::Flush, d) if d >= 2 => 3,
                _ => 2,
            };
            let seen_consumer = e.edges.iter().filter(|(who, ..)| *who == CONSUMER).count();
            ensure!(
                seen_consumer == expected_consumer && e.edges.len() == expected_consumer + 2,
                "depth {depth} {mode:?}: unexpected edge coverage {}",
                describe_edges(&e.edges)
            );
            executions += e.executions;
            states += e.states;
            all_edges.extend(e.edges);
        }
    }
    Ok(format!(
        "depths 1-3 x ordered/flush, {executions} executions, {states} distinct states, 0 illegal transitions; edges {}",
        describe_edges(&all_edges)
    ))
}
