use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

/// Simulated clock plus pending events ordered by `(time, insertion order)`.
#[derive(Debug)]
pub struct EventQueue<E> {
    now: f64,
    next_seq: u64,
    heap: BinaryHeap<Reverse<Entry<E>>>,
}

#[derive(Debug)]
struct Entry<E> {
    time: f64,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            now: 0.0,
            next_seq: 0,
            heap: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedule `payload` at `time`. Times in the past are pulled up to `now`
    /// so the clock never runs backwards.
    pub fn push(&mut self, time: f64, payload: E) {
        let time = if time < self.now { self.now } else { time };
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { time, seq, payload }));
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    /// Pop the earliest event if it is due at or before `until`, advancing the
    /// clock to its time.
    pub fn pop_until(&mut self, until: f64) -> Option<(f64, E)> {
        match self.heap.peek() {
            Some(Reverse(e)) if e.time <= until => {
                let Reverse(e) = self.heap.pop().expect("peeked");
                self.now = e.time;
                Some((e.time, e.payload))
            }
            _ => None,
        }
    }

    /// Move the clock forward with no event (used once all events up to
    /// `until` have fired).
    pub fn set_now(&mut self, until: f64) {
        if until > self.now {
            self.now = until;
        }
    }
}
