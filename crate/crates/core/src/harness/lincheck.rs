//! Linearizability checking of small FIFO queue histories.
//!
//! Wing & Gong style search: repeatedly pick an operation that no pending
//! operation strictly precedes in real time, apply it to a sequential queue,
//! and backtrack on mismatch. Failed `(linearized set, queue contents)`
//! states are memoized, which keeps histories of a few dozen calls cheap.

use std::collections::{HashSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering::SeqCst};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueueOp {
    Enqueue(u64),
    /// Dequeue and what it returned.
    Dequeue(Option<u64>),
}

/// One completed call. `invoke < response` on a shared logical clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Call {
    pub thread: usize,
    pub op: QueueOp,
    pub invoke: u64,
    pub response: u64,
}

/// Logical clock for stamping calls across threads.
#[derive(Debug, Default)]
pub struct HistoryClock(AtomicU64);

impl HistoryClock {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn tick(&self) -> u64 {
        self.0.fetch_add(1, SeqCst)
    }
}

/// True if some sequential FIFO order consistent with real time explains
/// every result in `history`. Panics on more than 64 calls.
pub fn is_linearizable_queue(history: &[Call]) -> bool {
    assert!(history.len() <= 64, "history too long for the checker");
    let mut failed = HashSet::new();
    search(history, 0, &mut VecDeque::new(), &mut failed)
}

fn search(h: &[Call], done: u64, queue: &mut VecDeque<u64>, failed: &mut HashSet<(u64, Vec<u64>)>) -> bool {
    let all = if h.len() == 64 { u64::MAX } else { (1u64 << h.len()) - 1 };
    if done == all {
        return true;
    }
    if failed.contains(&(done, queue.iter().copied().collect())) {
        return false;
    }
    let pending = || (0..h.len()).filter(move |&i| done & (1 << i) == 0);
    // Anything invoked after this response is not yet eligible.
    let horizon = pending().map(|i| h[i].response).min().unwrap_or(u64::MAX);
    for i in pending() {
        if h[i].invoke > horizon {
            continue;
        }
        let next = done | (1 << i);
        match h[i].op {
            QueueOp::Enqueue(v) => {
                queue.push_back(v);
                let ok = search(h, next, queue, failed);
                queue.pop_back();
                if ok {
                    return true;
                }
            }
            QueueOp::Dequeue(None) => {
                if queue.is_empty() && search(h, next, queue, failed) {
                    return true;
                }
            }
            QueueOp::Dequeue(Some(v)) => {
                if queue.front() == Some(&v) {
                    queue.pop_front();
                    let ok = search(h, next, queue, failed);
                    queue.push_front(v);
                    if ok {
                        return true;
                    }
                }
            }
        }
    }
    failed.insert((done, queue.iter().copied().collect()));
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use QueueOp::*;

    fn call(thread: usize, op: QueueOp, invoke: u64, response: u64) -> Call {
        Call { thread, op, invoke, response }
    }

    #[test]
    fn sequential_fifo_is_accepted() {
        let h = [
            call(0, Enqueue(1), 0, 1),
            call(0, Enqueue(2), 2, 3),
            call(1, Dequeue(Some(1)), 4, 5),
            call(1, Dequeue(Some(2)), 6, 7),
            call(1, Dequeue(None), 8, 9),
        ];
        assert!(is_linearizable_queue(&h));
    }

    #[test]
    fn lifo_order_is_rejected() {
        let h = [
            call(0, Enqueue(1), 0, 1),
            call(0, Enqueue(2), 2, 3),
            call(1, Dequeue(Some(2)), 4, 5),
        ];
        assert!(!is_linearizable_queue(&h));
    }

    #[test]
    fn overlap_allows_either_order() {
        let h = [
            call(0, Enqueue(1), 0, 5),
            call(1, Enqueue(2), 1, 4),
            call(2, Dequeue(Some(2)), 6, 7),
            call(2, Dequeue(Some(1)), 8, 9),
        ];
        assert!(is_linearizable_queue(&h));
    }

    #[test]
    fn empty_dequeue_during_a_completed_enqueue_is_rejected() {
        let h = [call(0, Enqueue(1), 0, 1), call(1, Dequeue(None), 2, 3)];
        assert!(!is_linearizable_queue(&h));
    }

    #[test]
    fn invented_value_is_rejected() {
        let h = [call(0, Enqueue(1), 0, 3), call(1, Dequeue(Some(9)), 1, 2)];
        assert!(!is_linearizable_queue(&h));
    }
}
