//! Simulated clock with a deterministic timer wheel.
//!
//! Time only moves via explicit [`SimClock::advance`]; timers due inside the
//! advanced window fire in timestamp order, ties broken by registration
//! order. Realtime mode exists for demos and maps one simulated millisecond
//! to one wall millisecond; the scheduler semantics are identical.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Simulated,
    Realtime,
}

/// Identifies one scheduled timer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimerId(pub u64);

/// A timer that came due during an `advance` window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Firing {
    pub timer: TimerId,
    pub due_ms: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClockError {
    #[error("delta_ms must be positive")]
    ZeroDelta,
    #[error("cannot schedule at {due_ms} before current time {now_ms}")]
    ScheduleInPast { due_ms: u64, now_ms: u64 },
}

/// Read-only, shareable view of the clock. Cheap to clone.
#[derive(Debug, Clone)]
pub struct ClockHandle {
    now: Arc<AtomicU64>,
}

impl ClockHandle {
    pub fn now_ms(&self) -> u64 {
        self.now.load(Ordering::Acquire)
    }
}

/// Anything that can answer "what time is it" in milliseconds.
pub trait TimeSource: Send + Sync {
    fn now_ms(&self) -> u64;
}

impl TimeSource for ClockHandle {
    fn now_ms(&self) -> u64 {
        ClockHandle::now_ms(self)
    }
}

/// Wall-clock time source, for the standalone broker.
#[derive(Debug, Clone, Copy, Default)]
pub struct WallClock;

impl TimeSource for WallClock {
    fn now_ms(&self) -> u64 {
        use std::time::{SystemTime, UNIX_EPOCH};
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// The simulation clock. Single logical owner; tick operations are
/// serialized by `&mut self`. Observers share a [`ClockHandle`].
#[derive(Debug)]
pub struct SimClock {
    now: Arc<AtomicU64>,
    mode: ClockMode,
    timers: BinaryHeap<Reverse<(u64, u64)>>, // (due_ms, registration seq)
    timer_ids: std::collections::HashMap<u64, TimerId>,
    next_reg: u64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::with_mode(ClockMode::Simulated)
    }

    pub fn with_mode(mode: ClockMode) -> Self {
        SimClock {
            now: Arc::new(AtomicU64::new(0)),
            mode,
            timers: BinaryHeap::new(),
            timer_ids: std::collections::HashMap::new(),
            next_reg: 0,
        }
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn now_ms(&self) -> u64 {
        self.now.load(Ordering::Acquire)
    }

    pub fn handle(&self) -> ClockHandle {
        ClockHandle {
            now: Arc::clone(&self.now),
        }
    }

    /// Register a timer at `due_ms` (>= now). Returns its id; firing order
    /// among timers due at the same instant follows registration order.
    pub fn schedule(&mut self, due_ms: u64) -> Result<TimerId, ClockError> {
        let now = self.now_ms();
        if due_ms < now {
            return Err(ClockError::ScheduleInPast { due_ms, now_ms: now });
        }
        let reg = self.next_reg;
        self.next_reg += 1;
        let id = TimerId(reg);
        self.timers.push(Reverse((due_ms, reg)));
        self.timer_ids.insert(reg, id);
        Ok(id)
    }

    /// Move time forward by exactly `delta_ms` (> 0) and return every timer
    /// that came due, in (due_ms, registration) order.
    pub fn advance(&mut self, delta_ms: u64) -> Result<Vec<Firing>, ClockError> {
        if delta_ms == 0 {
            return Err(ClockError::ZeroDelta);
        }
        let target = self.now_ms() + delta_ms;
        let mut fired = Vec::new();
        while let Some(Reverse((due, reg))) = self.timers.peek().copied() {
            if due > target {
                break;
            }
            self.timers.pop();
            let timer = self.timer_ids.remove(&reg).expect("registered timer");
            fired.push(Firing { timer, due_ms: due });
        }
        self.now.store(target, Ordering::Release);
        Ok(fired)
    }

    /// Timers still pending.
    pub fn pending(&self) -> usize {
        self.timers.len()
    }
}

impl Default for SimClock {
    fn default() -> Self {
        Self::new()
    }
}
