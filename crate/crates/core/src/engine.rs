//! Simulation clock, deterministic event ordering and seeded random streams.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Simulated time in whole microseconds since the start of the run.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond. Negative or NaN inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if s.is_nan() || s <= 0.0 {
            return SimTime::ZERO;
        }
        SimTime((s * 1e6).round() as u64)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Arrival,
    Breakpoint,
    ControlTick,
    PeriodBoundary,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    pub due: SimTime,
    pub kind: EventKind,
    /// Opaque entity id, interpreted by whoever handles `kind`.
    pub target: usize,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct QueueKey {
    due: SimTime,
    seq: u64,
}

/// Pending-event set with a total order on `(due, seq)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    now: SimTime,
    next_seq: u64,
    // seq is unique, so the kind and target never decide order.
    heap: BinaryHeap<Reverse<(QueueKey, EventKind, usize)>>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules an event, assigning the next tie-break sequence number.
    pub fn schedule(
        &mut self,
        due: SimTime,
        kind: EventKind,
        target: usize,
    ) -> Result<u64, SimError> {
        let seq = self.next_seq;
        self.schedule_record(EventRecord {
            due,
            kind,
            target,
            seq,
        })?;
        Ok(seq)
    }

    /// Inserts a fully formed record. The caller owns `seq` uniqueness.
    pub fn schedule_record(&mut self, event: EventRecord) -> Result<(), SimError> {
        if event.due < self.now {
            return Err(SimError::Invariant(format!(
                "event {:?} scheduled at {} but clock is {}",
                event.kind, event.due, self.now
            )));
        }
        self.next_seq = self.next_seq.max(event.seq + 1);
        self.heap.push(Reverse((
            QueueKey {
                due: event.due,
                seq: event.seq,
            },
            event.kind,
            event.target,
        )));
        Ok(())
    }

    pub fn peek_due(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse((key, _, _))| key.due)
    }

    /// Pops the earliest event if it is due at or before `limit`, advancing the clock to it.
    pub fn pop_due(&mut self, limit: SimTime) -> Option<EventRecord> {
        match self.heap.peek() {
            Some(Reverse((key, _, _))) if key.due <= limit => {}
            _ => return None,
        }
        let Reverse((key, kind, target)) = self.heap.pop()?;
        self.now = key.due;
        Some(EventRecord {
            due: key.due,
            kind,
            target,
            seq: key.seq,
        })
    }

    /// Moves the clock forward without processing anything.
    pub fn advance_to(&mut self, t: SimTime) -> Result<(), SimError> {
        if t < self.now {
            return Err(SimError::Invariant(format!(
                "clock moved backwards from {} to {}",
                self.now, t
            )));
        }
        self.now = t;
        Ok(())
    }

    /// Drains every event due at or before `end` through `handler`, then sets the clock to `end`.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> Result<(), SimError>
    where
        F: FnMut(&mut EventQueue, EventRecord) -> Result<(), SimError>,
    {
        while let Some(ev) = self.pop_due(end) {
            handler(self, ev)?;
        }
        self.advance_to(end)
    }
}

/// Identifies one independent random sequence derived from the scenario seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn generator(self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        StreamRng { rng }
    }
}

/// A seeded generator bound to one stream. ChaCha output is platform independent.
#[derive(Debug, Clone)]
pub struct StreamRng {
    rng: ChaCha8Rng,
}

impl StreamRng {
    /// Uniform in the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.gen();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn index(&mut self, len: usize) -> usize {
        self.rng.gen_range(0..len)
    }

    /// Inverse-CDF exponential inter-arrival gap for `rate` events per second,
    /// rounded to whole microseconds with a floor of 1 µs.
    pub fn sample_exponential(&mut self, rate: f64) -> Result<SimTime, SimError> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(SimError::config(format!(
                "exponential rate must be > 0, got {rate}"
            )));
        }
        let gap_s = -self.uniform_open().ln() / rate;
        Ok(SimTime(((gap_s * 1e6).round() as u64).max(1)))
    }

    /// Exponential sample with the given mean in microseconds (floor 1 µs).
    pub fn sample_exponential_mean(&mut self, mean_us: f64) -> u64 {
        let v = -self.uniform_open().ln() * mean_us;
        (v.round() as u64).max(1)
    }
}
