//! Joystick input shaping: stale-sequence filter, latest-wins rate limit
//! and the single-holder control arbiter.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::watch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeleopInput {
    pub v: f64,
    pub omega: f64,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TeleopOutput {
    Applied { seq: u64, v: f64, omega: f64, clamped: bool },
    Dropped { seq: u64, reason: String },
    Gate { accepted: bool, v: f64, omega: f64 },
    ControlTaken,
    Error { message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Offer {
    Queued,
    Stale,
}

/// Holds at most one pending input and releases it no more often than
/// once per interval. A newer input replaces the pending one.
#[derive(Debug, Clone)]
pub struct TeleopGate {
    interval: Duration,
    last_seq: Option<u64>,
    last_applied: Option<Instant>,
    pending: Option<TeleopInput>,
}

impl TeleopGate {
    pub fn new(max_hz: f64) -> Self {
        Self {
            interval: Duration::from_secs_f64(1.0 / max_hz),
            last_seq: None,
            last_applied: None,
            pending: None,
        }
    }

    pub fn offer(&mut self, input: TeleopInput) -> Offer {
        if self.last_seq.is_some_and(|s| input.seq <= s) {
            return Offer::Stale;
        }
        self.last_seq = Some(input.seq);
        self.pending = Some(input);
        Offer::Queued
    }

    /// When the pending input may be applied.
    pub fn due_at(&self) -> Option<Instant> {
        self.pending?;
        Some(match self.last_applied {
            Some(t) => t + self.interval,
            None => Instant::now(),
        })
    }

    pub fn poll(&mut self, now: Instant) -> Option<TeleopInput> {
        if self.last_applied.is_some_and(|t| now < t + self.interval) {
            return None;
        }
        let input = self.pending.take()?;
        self.last_applied = Some(now);
        Some(input)
    }
}

/// Exactly one teleop stream holds control; the newest grant wins.
pub struct ControlArbiter {
    holder: watch::Sender<u64>,
    next: AtomicU64,
}

impl Default for ControlArbiter {
    fn default() -> Self {
        Self {
            holder: watch::channel(0).0,
            next: AtomicU64::new(0),
        }
    }
}

impl ControlArbiter {
    /// Returns the new holder id, a receiver that fires when control moves,
    /// and whether someone else held control before.
    pub fn grant(&self) -> (u64, watch::Receiver<u64>, bool) {
        let id = self.next.fetch_add(1, Ordering::SeqCst) + 1;
        let mut rx = self.holder.subscribe();
        let prev = self.holder.send_replace(id);
        rx.borrow_and_update();
        (id, rx, prev != 0)
    }

    /// Clears control if `id` still holds it.
    pub fn release(&self, id: u64) -> bool {
        self.holder.send_if_modified(|h| {
            if *h == id {
                *h = 0;
                true
            } else {
                false
            }
        })
    }

    pub fn holder(&self) -> u64 {
        *self.holder.borrow()
    }
}
