//! Treiber's lock-free stack. Only reservation index 0 is used.

use std::fmt;
use std::ptr;
use std::sync::atomic::{AtomicPtr, Ordering::SeqCst};

use super::{deref, Op, Rideable, RideableKind};
use crate::tracker::{Block, Handle, Tracker};
use crate::Result;

struct Node {
    value: u64,
    next: AtomicPtr<Block<Node>>,
}

pub struct TreiberStack<Tr: Tracker> {
    tracker: Tr,
    top: AtomicPtr<Block<Node>>,
}

// Nodes are only reached through the tracker's protocol.
unsafe impl<Tr: Tracker> Send for TreiberStack<Tr> {}
unsafe impl<Tr: Tracker> Sync for TreiberStack<Tr> {}

impl<Tr: Tracker> TreiberStack<Tr> {
    pub fn new(tracker: Tr) -> Self {
        Self { tracker, top: AtomicPtr::new(ptr::null_mut()) }
    }

    pub fn tracker(&self) -> &Tr {
        &self.tracker
    }

    pub fn register(&self) -> Result<Handle<'_, Tr>> {
        self.tracker.register()
    }

    pub fn push(&self, h: &mut Handle<'_, Tr>, value: u64) {
        h.start_op();
        let node = h.alloc(Node { value, next: AtomicPtr::default() });
        loop {
            let top = self.top.load(SeqCst);
            // SAFETY: `node` is still private to this thread.
            unsafe { deref(node).next.store(top, SeqCst) };
            if self.top.compare_exchange(top, node, SeqCst, SeqCst).is_ok() {
                break;
            }
        }
        h.end_op();
    }

    pub fn pop(&self, h: &mut Handle<'_, Tr>) -> Option<u64> {
        h.start_op();
        let out = loop {
            // SAFETY: `top` outlives every handle.
            let top = unsafe { h.get_protected(0, &self.top, None) };
            if top.is_null() {
                break None;
            }
            h.check(top);
            // SAFETY: protected by reservation 0.
            let (value, next) = unsafe { (deref(top).value, deref(top).next.load(SeqCst)) };
            if self.top.compare_exchange(top, next, SeqCst, SeqCst).is_ok() {
                // SAFETY: unlinked by this thread's CAS.
                unsafe { h.retire(top) };
                break Some(value);
            }
        };
        h.end_op();
        out
    }

    pub fn is_empty(&self) -> bool {
        self.top.load(SeqCst).is_null()
    }
}

impl<Tr: Tracker> Drop for TreiberStack<Tr> {
    fn drop(&mut self) {
        let mut cur = *self.top.get_mut();
        while !cur.is_null() {
            // SAFETY: exclusive access; every reachable node is live.
            unsafe {
                let next = deref(cur).next.load(SeqCst);
                self.tracker.core().dealloc_exclusive(Block::header_ptr(cur));
                cur = next;
            }
        }
    }
}

impl<Tr: Tracker> fmt::Debug for TreiberStack<Tr> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TreiberStack").field("tracker", &Tr::KIND).field("empty", &self.is_empty()).finish()
    }
}

impl<Tr: Tracker> Rideable for TreiberStack<Tr> {
    type Tr = Tr;
    const KIND: RideableKind = RideableKind::Stack;

    fn build(tracker: Tr) -> Result<Self> {
        Ok(Self::new(tracker))
    }

    fn tracker(&self) -> &Tr {
        &self.tracker
    }

    fn apply(&self, h: &mut Handle<'_, Tr>, op: Op) -> bool {
        match op {
            Op::Insert(_, v) | Op::Put(_, v) => {
                self.push(h, v);
                true
            }
            Op::Remove(_) | Op::Get(_) => self.pop(h).is_some(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{He, TrackerConfig};

    #[test]
    fn lifo_order_and_empty() {
        let s = TreiberStack::new(He::new(TrackerConfig::new(1)).unwrap());
        let mut h = s.register().unwrap();
        assert_eq!(s.pop(&mut h), None);
        for v in 1..=3 {
            s.push(&mut h, v);
        }
        assert_eq!((s.pop(&mut h), s.pop(&mut h), s.pop(&mut h)), (Some(3), Some(2), Some(1)));
        assert_eq!(s.pop(&mut h), None);
    }
}
