//! Per-application frame queue.
//!
//! Each slot carries a 32-bit status word and a 64-bit submission sequence.
//! Ownership of a slot moves with its state:
//!
//! ```text
//!   producer:  FREE -> UPDATING -> READY
//!   consumer:  READY -> DRAWING -> FREE
//!              READY -> FREE            (flush only)
//! ```
//!
//! Every transition is a compare-and-swap. Submitting publishes with release
//! ordering and taking observes with acquire ordering, so pixel writes made
//! before `submit_frame` are visible to whoever later sees the slot READY.
//!
//! The queue never blocks. Waiting for a free slot is the caller's business.

use std::fmt;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::QueueError;
use crate::region::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum FrameState {
    Free = 0,
    Updating = 1,
    Ready = 2,
    Drawing = 3,
}

impl FrameState {
    pub fn from_word(word: u32) -> Option<FrameState> {
        match word {
            0 => Some(FrameState::Free),
            1 => Some(FrameState::Updating),
            2 => Some(FrameState::Ready),
            3 => Some(FrameState::Drawing),
            _ => None,
        }
    }

    pub fn word(self) -> u32 {
        self as u32
    }

    fn name(self) -> &'static str {
        match self {
            FrameState::Free => "FREE",
            FrameState::Updating => "UPDATING",
            FrameState::Ready => "READY",
            FrameState::Drawing => "DRAWING",
        }
    }
}

impl fmt::Display for FrameState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn describe_word(word: u32) -> String {
    FrameState::from_word(word).map_or_else(|| format!("{word:#x}"), |s| s.to_string())
}

/// Presentation policy, chosen per present call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueMode {
    /// Present frames in submission order.
    Ordered,
    /// Present the newest frame and drop everything older.
    Flush,
}

/// Storage for the per-slot status and sequence words.
///
/// `load_status` must have acquire semantics and `cas_status` acquire-release
/// semantics; sequence accesses may be relaxed because they are ordered by
/// the status word.
pub trait StatusWords {
    fn slot_count(&self) -> usize;
    fn load_status(&self, slot: usize) -> u32;
    /// On failure returns the word actually found.
    fn cas_status(&self, slot: usize, current: FrameState, new: FrameState) -> Result<(), u32>;
    fn load_sequence(&self, slot: usize) -> u64;
    fn store_sequence(&self, slot: usize, sequence: u64);
}

impl<W: StatusWords + ?Sized> StatusWords for &W {
    fn slot_count(&self) -> usize {
        (**self).slot_count()
    }
    fn load_status(&self, slot: usize) -> u32 {
        (**self).load_status(slot)
    }
    fn cas_status(&self, slot: usize, current: FrameState, new: FrameState) -> Result<(), u32> {
        (**self).cas_status(slot, current, new)
    }
    fn load_sequence(&self, slot: usize) -> u64 {
        (**self).load_sequence(slot)
    }
    fn store_sequence(&self, slot: usize, sequence: u64) {
        (**self).store_sequence(slot, sequence)
    }
}

impl<W: StatusWords + ?Sized> StatusWords for Arc<W> {
    fn slot_count(&self) -> usize {
        (**self).slot_count()
    }
    fn load_status(&self, slot: usize) -> u32 {
        (**self).load_status(slot)
    }
    fn cas_status(&self, slot: usize, current: FrameState, new: FrameState) -> Result<(), u32> {
        (**self).cas_status(slot, current, new)
    }
    fn load_sequence(&self, slot: usize) -> u64 {
        (**self).load_sequence(slot)
    }
    fn store_sequence(&self, slot: usize, sequence: u64) {
        (**self).store_sequence(slot, sequence)
    }
}

/// Size of one status record in shared memory: status u32, pad, sequence u64.
pub const STATUS_RECORD_SIZE: usize = 16;

/// Status records living in a shared region, little-endian on the wire.
#[derive(Clone)]
pub struct RegionStatusWords {
    region: Arc<Region>,
    offset: usize,
    count: usize,
}

impl RegionStatusWords {
    /// Panics if the records do not fit inside the region or are misaligned.
    pub fn new(region: Arc<Region>, offset: usize, count: usize) -> Self {
        assert!(offset % STATUS_RECORD_SIZE == 0, "status array misaligned");
        assert!(
            region.contains(offset, count * STATUS_RECORD_SIZE),
            "status array outside region"
        );
        Self { region, offset, count }
    }

    fn status(&self, slot: usize) -> &AtomicU32 {
        assert!(slot < self.count);
        self.region.atomic_u32(self.offset + slot * STATUS_RECORD_SIZE)
    }

    fn sequence(&self, slot: usize) -> &AtomicU64 {
        assert!(slot < self.count);
        self.region.atomic_u64(self.offset + slot * STATUS_RECORD_SIZE + 8)
    }
}

impl StatusWords for RegionStatusWords {
    fn slot_count(&self) -> usize {
        self.count
    }

    fn load_status(&self, slot: usize) -> u32 {
        u32::from_le(self.status(slot).load(Ordering::Acquire))
    }

    fn cas_status(&self, slot: usize, current: FrameState, new: FrameState) -> Result<(), u32> {
        self.status(slot)
            .compare_exchange(
                current.word().to_le(),
                new.word().to_le(),
                Ordering::AcqRel,
                Ordering::Acquire,
            )
            .map(drop)
            .map_err(u32::from_le)
    }

    fn load_sequence(&self, slot: usize) -> u64 {
        u64::from_le(self.sequence(slot).load(Ordering::Relaxed))
    }

    fn store_sequence(&self, slot: usize, sequence: u64) {
        self.sequence(slot).store(sequence.to_le(), Ordering::Relaxed)
    }
}

/// In-process status words, used for tests and model checking.
pub struct LocalStatusWords {
    slots: Vec<(AtomicU32, AtomicU64)>,
}

impl LocalStatusWords {
    pub fn new(count: usize) -> Self {
        Self {
            slots: (0..count)
                .map(|_| (AtomicU32::new(0), AtomicU64::new(0)))
                .collect(),
        }
    }

    /// Overwrites a status word without any checks, e.g. to inject corruption.
    pub fn force_status(&self, slot: usize, word: u32) {
        self.slots[slot].0.store(word, Ordering::SeqCst);
    }

    pub fn states(&self) -> Vec<u32> {
        self.slots.iter().map(|s| s.0.load(Ordering::SeqCst)).collect()
    }
}

impl Clone for LocalStatusWords {
    fn clone(&self) -> Self {
        Self {
            slots: self
                .slots
                .iter()
                .map(|(s, q)| {
                    (
                        AtomicU32::new(s.load(Ordering::SeqCst)),
                        AtomicU64::new(q.load(Ordering::SeqCst)),
                    )
                })
                .collect(),
        }
    }
}

impl StatusWords for LocalStatusWords {
    fn slot_count(&self) -> usize {
        self.slots.len()
    }

    fn load_status(&self, slot: usize) -> u32 {
        self.slots[slot].0.load(Ordering::Acquire)
    }

    fn cas_status(&self, slot: usize, current: FrameState, new: FrameState) -> Result<(), u32> {
        self.slots[slot]
            .0
            .compare_exchange(current.word(), new.word(), Ordering::AcqRel, Ordering::Acquire)
            .map(drop)
    }

    fn load_sequence(&self, slot: usize) -> u64 {
        self.slots[slot].1.load(Ordering::Relaxed)
    }

    fn store_sequence(&self, slot: usize, sequence: u64) {
        self.slots[slot].1.store(sequence, Ordering::Relaxed)
    }
}

/// Index of a slot handed out by the queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotHandle(usize);

impl SlotHandle {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reads every status word, failing on values outside the four states.
pub fn snapshot_states<W: StatusWords>(words: &W) -> Result<Vec<FrameState>, QueueError> {
    (0..words.slot_count())
        .map(|slot| {
            let value = words.load_status(slot);
            FrameState::from_word(value).ok_or(QueueError::CorruptStatus { slot, value })
        })
        .collect()
}

/// The single producer side of a queue.
#[derive(Clone)]
pub struct Producer<W> {
    words: W,
    next_sequence: u64,
    cursor: usize,
}

impl<W: StatusWords> Producer<W> {
    /// Sequences continue after the largest one already present in the slots.
    pub fn new(words: W) -> Self {
        let newest = (0..words.slot_count())
            .map(|slot| words.load_sequence(slot))
            .max()
            .unwrap_or(0);
        Self {
            words,
            next_sequence: newest + 1,
            cursor: 0,
        }
    }

    pub fn words(&self) -> &W {
        &self.words
    }

    pub fn slot_count(&self) -> usize {
        self.words.slot_count()
    }

    /// Sequence the next submission will receive.
    pub fn next_sequence(&self) -> u64 {
        self.next_sequence
    }

    /// Moves one FREE slot to UPDATING, scanning round-robin from the last pick.
    pub fn acquire_frame(&mut self) -> Option<SlotHandle> {
        let count = self.words.slot_count();
        for step in 0..count {
            let slot = (self.cursor + step) % count;
            if self.words.load_status(slot) != FrameState::Free.word() {
                continue;
            }
            if self
                .words
                .cas_status(slot, FrameState::Free, FrameState::Updating)
                .is_ok()
            {
                self.cursor = (slot + 1) % count;
                return Some(SlotHandle(slot));
            }
        }
        None
    }

    /// Publishes an UPDATING slot as READY and returns its sequence number.
    pub fn submit_frame(&mut self, handle: SlotHandle) -> Result<u64, QueueError> {
        let slot = handle.0;
        if slot >= self.words.slot_count() {
            return Err(QueueError::InvalidHandle(slot));
        }
        let found = self.words.load_status(slot);
        if found != FrameState::Updating.word() {
            return Err(QueueError::ProtocolViolation {
                slot,
                expected: "UPDATING",
                found: describe_word(found),
            });
        }
        let previous = self.words.load_sequence(slot);
        let sequence = self.next_sequence;
        self.words.store_sequence(slot, sequence);
        if let Err(found) = self
            .words
            .cas_status(slot, FrameState::Updating, FrameState::Ready)
        {
            self.words.store_sequence(slot, previous);
            return Err(QueueError::ProtocolViolation {
                slot,
                expected: "UPDATING",
                found: describe_word(found),
            });
        }
        self.next_sequence += 1;
        Ok(sequence)
    }
}

/// Outcome of [`Consumer::present`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Presentation {
    /// A newer frame was taken; the previous one was released first.
    New { slot: SlotHandle, sequence: u64 },
    /// Nothing new; the frame already on screen stays DRAWING.
    Held { slot: SlotHandle, sequence: u64 },
    /// Nothing has ever been presented.
    Empty,
}

impl Presentation {
    pub fn slot(&self) -> Option<SlotHandle> {
        match *self {
            Presentation::New { slot, .. } | Presentation::Held { slot, .. } => Some(slot),
            Presentation::Empty => None,
        }
    }
}

/// The single consumer side of a queue.
#[derive(Clone)]
pub struct Consumer<W> {
    words: W,
    last_presented: u64,
    held: Option<(SlotHandle, u64)>,
}

impl<W: StatusWords> Consumer<W> {
    pub fn new(words: W) -> Self {
        Self {
            words,
            last_presented: 0,
            held: None,
        }
    }

    pub fn words(&self) -> &W {
        &self.words
    }

    /// Slot currently on screen, with its sequence.
    pub fn held(&self) -> Option<(SlotHandle, u64)> {
        self.held
    }

    pub fn last_presented(&self) -> u64 {
        self.last_presented
    }

    /// True if any slot is READY. Fails on corrupt status words.
    pub fn has_ready(&self) -> Result<bool, QueueError> {
        Ok(snapshot_states(&self.words)?.contains(&FrameState::Ready))
    }

    /// Moves one READY slot to DRAWING according to `mode`.
    ///
    /// `Ordered` picks the oldest READY frame. `Flush` picks the newest and
    /// frees every older READY frame. The slot is not recorded as held; see
    /// [`Consumer::present`] for the hold-and-release cycle.
    pub fn take_for_display(&mut self, mode: QueueMode) -> Result<Option<SlotHandle>, QueueError> {
        let states = self.stable_snapshot()?;
        let ready: Vec<(usize, u64)> = states
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == FrameState::Ready)
            .map(|(slot, _)| (slot, self.words.load_sequence(slot)))
            .collect();
        let chosen = match mode {
            QueueMode::Ordered => ready.iter().min_by_key(|(_, seq)| *seq),
            QueueMode::Flush => ready.iter().max_by_key(|(_, seq)| *seq),
        };
        let Some(&(slot, sequence)) = chosen else {
            return Ok(None);
        };
        if sequence <= self.last_presented {
            return Err(QueueError::StaleSequence {
                slot,
                sequence,
                presented: self.last_presented,
            });
        }
        self.transition(slot, FrameState::Ready, FrameState::Drawing)?;
        if mode == QueueMode::Flush {
            for &(other, other_seq) in &ready {
                if other != slot && other_seq < sequence {
                    self.transition(other, FrameState::Ready, FrameState::Free)?;
                }
            }
        }
        self.last_presented = sequence;
        Ok(Some(SlotHandle(slot)))
    }

    /// Reads the status words until two consecutive passes agree.
    ///
    /// A single pass can see a newer frame READY while missing an older one
    /// that turned READY behind the scan. Between passes only the producer
    /// moves slots, and only forward (FREE to UPDATING to READY), so two equal
    /// passes are a snapshot of one instant.
    fn stable_snapshot(&self) -> Result<Vec<FrameState>, QueueError> {
        let mut previous = snapshot_states(&self.words)?;
        loop {
            let current = snapshot_states(&self.words)?;
            if current == previous {
                return Ok(current);
            }
            previous = current;
        }
    }

    /// Moves a DRAWING slot back to FREE.
    pub fn release_frame(&mut self, handle: SlotHandle) -> Result<(), QueueError> {
        if handle.0 >= self.words.slot_count() {
            return Err(QueueError::InvalidHandle(handle.0));
        }
        self.transition(handle.0, FrameState::Drawing, FrameState::Free)?;
        if self.held.is_some_and(|(h, _)| h == handle) {
            self.held = None;
        }
        Ok(())
    }

    /// One display cycle: if a READY frame exists, release the frame on
    /// screen and take the next one; otherwise keep the current frame.
    ///
    /// Releasing before taking keeps at most one slot DRAWING at any time.
    pub fn present(&mut self, mode: QueueMode) -> Result<Presentation, QueueError> {
        if !self.has_ready()? {
            return Ok(match self.held {
                Some((slot, sequence)) => Presentation::Held { slot, sequence },
                None => Presentation::Empty,
            });
        }
        if let Some((slot, _)) = self.held {
            self.release_frame(slot)?;
        }
        match self.take_for_display(mode)? {
            Some(slot) => {
                let sequence = self.last_presented;
                self.held = Some((slot, sequence));
                Ok(Presentation::New { slot, sequence })
            }
            // Only the consumer removes READY frames, so one must still be there.
            None => Err(QueueError::ProtocolViolation {
                slot: 0,
                expected: "a READY slot",
                found: "none".into(),
            }),
        }
    }

    /// Releases the held frame, if any, without taking a new one.
    pub fn release_held(&mut self) -> Result<(), QueueError> {
        if let Some((slot, _)) = self.held {
            self.release_frame(slot)?;
        }
        Ok(())
    }

    fn transition(&self, slot: usize, from: FrameState, to: FrameState) -> Result<(), QueueError> {
        self.words
            .cas_status(slot, from, to)
            .map_err(|found| QueueError::ProtocolViolation {
                slot,
                expected: from.name(),
                found: describe_word(found),
            })
    }
}
