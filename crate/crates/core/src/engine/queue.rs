use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use super::time::SimTime;
use crate::NodeId;

/// A scheduled occurrence addressed to one node.
#[derive(Clone, Debug)]
pub struct Event<P> {
    pub time: SimTime,
    pub sequence: u64,
    pub target: NodeId,
    pub payload: P,
}

/// Permits cancellation of a scheduled event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<P>(Event<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.time == other.0.time && self.0.sequence == other.0.sequence
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.time, other.0.sequence).cmp(&(self.0.time, self.0.sequence))
    }
}

/// Time-ordered event queue with insertion-order tie breaking and lazy
/// cancellation.
pub struct EventQueue<P> {
    heap: BinaryHeap<Entry<P>>,
    cancelled: HashSet<u64>,
    now: SimTime,
    next_sequence: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            now: SimTime::ZERO,
            next_sequence: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Panics if `time` is earlier than the current clock.
    pub fn schedule(&mut self, time: SimTime, target: NodeId, payload: P) -> EventHandle {
        assert!(
            time >= self.now,
            "event scheduled in the past: {time} < {}",
            self.now
        );
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Entry(Event {
            time,
            sequence,
            target,
            payload,
        }));
        EventHandle(sequence)
    }

    /// Cancelling an already-dispatched event is a no-op.
    pub fn cancel(&mut self, handle: EventHandle) {
        if handle.0 < self.next_sequence {
            self.cancelled.insert(handle.0);
        }
    }

    pub fn pop(&mut self) -> Option<Event<P>> {
        while let Some(Entry(ev)) = self.heap.pop() {
            if !self.cancelled.is_empty() && self.cancelled.remove(&ev.sequence) {
                continue;
            }
            self.now = ev.time;
            return Some(ev);
        }
        None
    }

    pub fn peek_time(&mut self) -> Option<SimTime> {
        while let Some(Entry(ev)) = self.heap.peek() {
            if self.cancelled.contains(&ev.sequence) {
                let seq = ev.sequence;
                self.heap.pop();
                self.cancelled.remove(&seq);
                continue;
            }
            return Some(ev.time);
        }
        None
    }

    /// Number of live (non-cancelled) events.
    pub fn len(&self) -> usize {
        self.heap
            .iter()
            .filter(|e| !self.cancelled.contains(&e.0.sequence))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
