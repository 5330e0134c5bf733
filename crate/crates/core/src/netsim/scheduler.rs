//! Event queue ordered by (time, insertion sequence).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    PacketArrival,
    Timer,
    PositionUpdate,
    Beacon,
    LinkCheck,
}

#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: P,
}

/// Handle returned by [`Scheduler::schedule`]; the sequence number of the
/// event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(pub u64);

#[derive(Debug, Error, Clone, PartialEq)]
#[error("event at {time} scheduled before current time {now}")]
pub struct PastEvent {
    pub time: f64,
    pub now: f64,
}

struct Entry<P>(SimEvent<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.time.total_cmp(&self.0.time).then(other.0.seq.cmp(&self.0.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunStats {
    pub processed: u64,
    pub final_time: f64,
}

pub struct Scheduler<P> {
    heap: BinaryHeap<Entry<P>>,
    now: f64,
    next_seq: u64,
    processed: u64,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Self { heap: BinaryHeap::new(), now: 0.0, next_seq: 0, processed: 0 }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn schedule(&mut self, time: f64, kind: EventKind, payload: P) -> Result<EventHandle, PastEvent> {
        if time < self.now || time.is_nan() {
            return Err(PastEvent { time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(SimEvent { time, seq, kind, payload }));
        Ok(EventHandle(seq))
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.0.time)
    }

    /// Removes the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<SimEvent<P>> {
        let ev = self.heap.pop()?.0;
        self.now = ev.time;
        self.processed += 1;
        Some(ev)
    }

    /// Processes every event with `time <= t_end` in order. The handler may
    /// schedule further events. The clock ends at `t_end`.
    pub fn run_until<F>(&mut self, t_end: f64, mut handler: F) -> RunStats
    where
        F: FnMut(&mut Self, SimEvent<P>),
    {
        let start = self.processed;
        while self.peek_time().is_some_and(|t| t <= t_end) {
            let ev = self.pop().expect("peeked");
            handler(self, ev);
        }
        if t_end > self.now {
            self.now = t_end;
        }
        RunStats { processed: self.processed - start, final_time: self.now }
    }
}

/// Free-function form of [`Scheduler::schedule`].
pub fn schedule<P>(sim: &mut Scheduler<P>, time: f64, kind: EventKind, payload: P) -> Result<EventHandle, PastEvent> {
    sim.schedule(time, kind, payload)
}

/// Free-function form of [`Scheduler::run_until`] that only drains events.
pub fn run_until<P>(sim: &mut Scheduler<P>, t_end: f64) -> RunStats {
    sim.run_until(t_end, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_times_keep_scheduling_order() {
        let mut s = Scheduler::new();
        s.schedule(1.0, EventKind::Timer, "a").unwrap();
        s.schedule(1.0, EventKind::Timer, "b").unwrap();
        s.schedule(0.5, EventKind::Beacon, "c").unwrap();
        let mut seen = Vec::new();
        s.run_until(2.0, |_, e| seen.push(e.payload));
        assert_eq!(seen, vec!["c", "a", "b"]);
    }

    #[test]
    fn fresh_run_until_zero_processes_nothing() {
        let mut s: Scheduler<()> = Scheduler::new();
        assert_eq!(run_until(&mut s, 0.0).processed, 0);
    }

    #[test]
    fn past_events_rejected() {
        let mut s = Scheduler::new();
        s.schedule(1.0, EventKind::Timer, ()).unwrap();
        run_until(&mut s, 1.5);
        assert_eq!(s.schedule(1.0, EventKind::Timer, ()), Err(PastEvent { time: 1.0, now: 1.5 }));
        assert!(s.schedule(1.5, EventKind::Timer, ()).is_ok());
    }

    #[test]
    fn handler_can_schedule_and_events_past_end_wait() {
        let mut s = Scheduler::new();
        s.schedule(0.0, EventKind::Timer, 0u32).unwrap();
        let stats = s.run_until(1.0, |s, e| {
            if e.payload < 20 {
                s.schedule(e.time + 0.1, EventKind::Timer, e.payload + 1).unwrap();
            }
        });
        // 0.0, 0.1, ..., 1.0 within float rounding
        assert!(stats.processed >= 10 && stats.processed <= 11);
        assert_eq!(s.pending(), 1);
    }

    proptest! {
        #[test]
        fn dequeues_in_time_seq_order(times in prop::collection::vec(0.0f64..100.0, 1..200)) {
            let mut s = Scheduler::new();
            for (i, t) in times.iter().enumerate() {
                s.schedule(*t, EventKind::Timer, i).unwrap();
            }
            let mut last = (f64::NEG_INFINITY, 0u64);
            while let Some(e) = s.pop() {
                prop_assert!(e.time > last.0 || (e.time == last.0 && e.seq > last.1));
                last = (e.time, e.seq);
            }
        }
    }
}
