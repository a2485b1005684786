//! Receive-side reordering for sequence-numbered UDP streams.
//!
//! Chunks are released in strictly increasing `seq`. A missing `seq` is
//! waited on until either `window` chunks are queued behind it or the oldest
//! queued chunk has been held for `max_hold` ms; then the gap is declared
//! lost and delivery moves on. There is no retransmission.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::Millis;

pub const DEFAULT_WINDOW: usize = 32;
pub const DEFAULT_MAX_HOLD_MS: Millis = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReorderConfig {
    pub window: usize,
    pub max_hold_ms: Millis,
}

impl Default for ReorderConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            max_hold_ms: DEFAULT_MAX_HOLD_MS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReorderStats {
    pub released: u64,
    /// Sequence numbers skipped over as lost.
    pub lost: u64,
    /// Distinct gaps declared (a run of consecutive lost seqs counts once).
    pub gaps: u64,
    /// Duplicates and chunks that arrived after their slot was passed.
    pub dropped: u64,
}

#[derive(Debug, Clone)]
pub struct ReorderBuffer<T> {
    cfg: ReorderConfig,
    next: u64,
    pending: BTreeMap<u64, (Millis, T)>,
    stats: ReorderStats,
}

impl<T> ReorderBuffer<T> {
    pub fn new(cfg: ReorderConfig, first_seq: u64) -> Self {
        Self {
            cfg: ReorderConfig {
                window: cfg.window.max(1),
                ..cfg
            },
            next: first_seq,
            pending: BTreeMap::new(),
            stats: ReorderStats::default(),
        }
    }

    pub fn stats(&self) -> ReorderStats {
        self.stats
    }

    /// Next sequence number the buffer is waiting for.
    pub fn expected(&self) -> u64 {
        self.next
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn push(&mut self, seq: u64, item: T, now: Millis) -> Vec<(u64, T)> {
        if seq < self.next || self.pending.contains_key(&seq) {
            self.stats.dropped += 1;
            return Vec::new();
        }
        self.pending.insert(seq, (now, item));
        let mut out = Vec::new();
        self.release_run(&mut out);
        while self.pending.len() >= self.cfg.window {
            self.skip_gap(&mut out);
        }
        out
    }

    /// Releases whatever the hold timer has given up on.
    pub fn poll(&mut self, now: Millis) -> Vec<(u64, T)> {
        let mut out = Vec::new();
        while self
            .oldest_arrival()
            .is_some_and(|a| a + self.cfg.max_hold_ms <= now)
        {
            self.skip_gap(&mut out);
        }
        out
    }

    /// When [`poll`](Self::poll) would next release something.
    pub fn next_deadline(&self) -> Option<Millis> {
        self.oldest_arrival().map(|a| a + self.cfg.max_hold_ms)
    }

    /// Releases everything still queued, declaring all gaps lost.
    pub fn flush(&mut self) -> Vec<(u64, T)> {
        let mut out = Vec::new();
        while !self.pending.is_empty() {
            self.skip_gap(&mut out);
        }
        out
    }

    fn oldest_arrival(&self) -> Option<Millis> {
        self.pending.values().map(|(a, _)| *a).min()
    }

    fn skip_gap(&mut self, out: &mut Vec<(u64, T)>) {
        if let Some(&first) = self.pending.keys().next() {
            if first > self.next {
                self.stats.lost += first - self.next;
                self.stats.gaps += 1;
                self.next = first;
            }
            self.release_run(out);
        }
    }

    fn release_run(&mut self, out: &mut Vec<(u64, T)>) {
        while let Some((_, item)) = self.pending.remove(&self.next) {
            out.push((self.next, item));
            self.next += 1;
            self.stats.released += 1;
        }
    }
}
