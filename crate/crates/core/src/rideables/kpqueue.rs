//! Kogan and Petrank's wait-free FIFO queue with phase-based helping.
//!
//! Every dynamic record, queue nodes and operation descriptors alike, is a
//! tracked block. A descriptor is immutable; replacing one in the state
//! array retires the old one. The dequeued value is copied into the final
//! descriptor, so the owner never touches a node after its operation.
//!
//! Reservation indices: 0 head, 1 successor, 2 tail, 3 descriptor.

use std::fmt;
use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicUsize, Ordering::SeqCst};

use crossbeam_utils::CachePadded;

use super::{deref, Op, Rideable, RideableKind};
use crate::tracker::{Block, Handle, Tracker};
use crate::{Error, Result};

const I_HEAD: usize = 0;
const I_NEXT: usize = 1;
const I_TAIL: usize = 2;
const I_DESC: usize = 3;

const NO_TID: usize = usize::MAX;

struct Node {
    value: u64,
    next: AtomicPtr<Block<Node>>,
    enq_tid: usize,
    deq_tid: AtomicUsize,
}

struct OpDesc {
    phase: u64,
    pending: bool,
    enqueue: bool,
    node: *mut Block<Node>,
    value: u64,
}

type NodePtr = *mut Block<Node>;
type DescPtr = *mut Block<OpDesc>;

pub struct KpQueue<Tr: Tracker> {
    tracker: Tr,
    head: CachePadded<AtomicPtr<Block<Node>>>,
    tail: CachePadded<AtomicPtr<Block<Node>>>,
    state: Box<[CachePadded<AtomicPtr<Block<OpDesc>>>]>,
}

unsafe impl<Tr: Tracker> Send for KpQueue<Tr> {}
unsafe impl<Tr: Tracker> Sync for KpQueue<Tr> {}

impl<Tr: Tracker> KpQueue<Tr> {
    /// Needs `max_hes >= 4`.
    pub fn new(tracker: Tr) -> Result<Self> {
        let cfg = tracker.core().config();
        if cfg.max_hes < 4 {
            return Err(Error::Config("the KP queue needs max_hes >= 4".into()));
        }
        let n = cfg.max_threads;
        let (sentinel, descs) = {
            let mut h = tracker.register()?;
            let sentinel = h.alloc(Node { value: 0, next: AtomicPtr::default(), enq_tid: NO_TID, deq_tid: AtomicUsize::new(NO_TID) });
            let descs: Vec<DescPtr> = (0..n)
                .map(|_| h.alloc(OpDesc { phase: 0, pending: false, enqueue: true, node: ptr::null_mut(), value: 0 }))
                .collect();
            (sentinel, descs)
        };
        Ok(Self {
            tracker,
            head: CachePadded::new(AtomicPtr::new(sentinel)),
            tail: CachePadded::new(AtomicPtr::new(sentinel)),
            state: descs.into_iter().map(|d| CachePadded::new(AtomicPtr::new(d))).collect(),
        })
    }

    pub fn tracker(&self) -> &Tr {
        &self.tracker
    }

    pub fn register(&self) -> Result<Handle<'_, Tr>> {
        self.tracker.register()
    }

    pub fn enqueue(&self, h: &mut Handle<'_, Tr>, value: u64) {
        h.start_op();
        let tid = h.tid();
        unsafe {
            let phase = self.max_phase(h) + 1;
            let node = h.alloc(Node { value, next: AtomicPtr::default(), enq_tid: tid, deq_tid: AtomicUsize::new(NO_TID) });
            self.publish(h, OpDesc { phase, pending: true, enqueue: true, node, value: 0 });
            self.help(h, phase);
            self.help_finish_enq(h);
        }
        h.end_op();
    }

    pub fn dequeue(&self, h: &mut Handle<'_, Tr>) -> Option<u64> {
        h.start_op();
        let out = unsafe {
            let phase = self.max_phase(h) + 1;
            self.publish(h, OpDesc { phase, pending: true, enqueue: false, node: ptr::null_mut(), value: 0 });
            self.help(h, phase);
            self.help_finish_deq(h);
            let (_, d) = self.desc(h, h.tid());
            debug_assert!(!d.pending);
            (!d.node.is_null()).then_some(d.value)
        };
        h.end_op();
        out
    }

    /// Contents from head to tail. Requires that no other thread is mutating.
    pub fn values(&mut self) -> Vec<u64> {
        let mut out = Vec::new();
        // SAFETY: exclusive access.
        unsafe {
            let mut cur = self.head.load(SeqCst);
            loop {
                cur = deref(cur).next.load(SeqCst);
                if cur.is_null() {
                    break;
                }
                out.push(deref(cur).value);
            }
        }
        out
    }

    unsafe fn desc<'a>(&self, h: &mut Handle<'_, Tr>, tid: usize) -> (DescPtr, &'a OpDesc) {
        let p = h.get_protected(I_DESC, &self.state[tid], None);
        h.check(p);
        (p, &**p)
    }

    unsafe fn max_phase(&self, h: &mut Handle<'_, Tr>) -> u64 {
        (0..self.state.len()).map(|i| self.desc(h, i).1.phase).max().unwrap_or(0)
    }

    unsafe fn is_still_pending(&self, h: &mut Handle<'_, Tr>, tid: usize, phase: u64) -> bool {
        let (_, d) = self.desc(h, tid);
        d.pending && d.phase <= phase
    }

    /// Installs a new descriptor for the calling thread and retires the old one.
    unsafe fn publish(&self, h: &mut Handle<'_, Tr>, desc: OpDesc) {
        let new = h.alloc(desc);
        let old = self.state[h.tid()].swap(new, SeqCst);
        h.retire(old);
    }

    /// Replaces `cur` with a fresh descriptor if nobody else did first.
    unsafe fn replace(&self, h: &mut Handle<'_, Tr>, tid: usize, cur: DescPtr, desc: OpDesc) -> bool {
        let new = h.alloc(desc);
        if self.state[tid].compare_exchange(cur, new, SeqCst, SeqCst).is_ok() {
            h.retire(cur);
            true
        } else {
            h.dealloc_unshared(new);
            false
        }
    }

    unsafe fn help(&self, h: &mut Handle<'_, Tr>, phase: u64) {
        for i in 0..self.state.len() {
            let (_, d) = self.desc(h, i);
            if d.pending && d.phase <= phase {
                if d.enqueue {
                    self.help_enq(h, i, phase);
                } else {
                    self.help_deq(h, i, phase);
                }
            }
        }
    }

    /// A successor read through a parent is only safe to dereference once the
    /// parent is known to be still linked (`last == tail`, `first == head`);
    /// callers check the canary after that validation, not here.
    unsafe fn protect_node(&self, h: &mut Handle<'_, Tr>, index: usize, src: &AtomicPtr<Block<Node>>, parent: Option<NodePtr>) -> NodePtr {
        h.get_protected(index, src, parent.map(|p| (*p).header()))
    }

    /// Head or tail: always linked when read.
    unsafe fn protect_end(&self, h: &mut Handle<'_, Tr>, index: usize, src: &AtomicPtr<Block<Node>>) -> NodePtr {
        let p = h.get_protected(index, src, None);
        h.check(p);
        p
    }

    unsafe fn help_enq(&self, h: &mut Handle<'_, Tr>, tid: usize, phase: u64) {
        while self.is_still_pending(h, tid, phase) {
            let last = self.protect_end(h, I_TAIL, &self.tail);
            let next = self.protect_node(h, I_NEXT, &deref(last).next, Some(last));
            if last != self.tail.load(SeqCst) {
                continue;
            }
            if next.is_null() {
                let (_, d) = self.desc(h, tid);
                if d.pending
                    && d.phase <= phase
                    && deref(last).next.compare_exchange(ptr::null_mut(), d.node, SeqCst, SeqCst).is_ok()
                {
                    self.help_finish_enq(h);
                    return;
                }
            } else {
                self.help_finish_enq(h);
            }
        }
    }

    unsafe fn help_finish_enq(&self, h: &mut Handle<'_, Tr>) {
        let last = self.protect_end(h, I_TAIL, &self.tail);
        let next = self.protect_node(h, I_NEXT, &deref(last).next, Some(last));
        // Once the tail has moved on, whoever moved it finished this enqueue.
        if next.is_null() || last != self.tail.load(SeqCst) {
            return;
        }
        h.check(next);
        let tid = deref(next).enq_tid;
        let (cur, d) = self.desc(h, tid);
        if last == self.tail.load(SeqCst) && d.pending && d.node == next {
            let done = OpDesc { phase: d.phase, pending: false, enqueue: true, node: next, value: 0 };
            self.replace(h, tid, cur, done);
        }
        let _ = self.tail.compare_exchange(last, next, SeqCst, SeqCst);
    }

    unsafe fn help_deq(&self, h: &mut Handle<'_, Tr>, tid: usize, phase: u64) {
        while self.is_still_pending(h, tid, phase) {
            let first = self.protect_end(h, I_HEAD, &self.head);
            let last = self.protect_end(h, I_TAIL, &self.tail);
            let next = self.protect_node(h, I_NEXT, &deref(first).next, Some(first));
            if first != self.head.load(SeqCst) {
                continue;
            }
            if first == last {
                if next.is_null() {
                    let (cur, d) = self.desc(h, tid);
                    if last == self.tail.load(SeqCst) && d.pending && d.phase <= phase {
                        let empty = OpDesc { phase: d.phase, pending: false, enqueue: false, node: ptr::null_mut(), value: 0 };
                        self.replace(h, tid, cur, empty);
                    }
                } else {
                    self.help_finish_enq(h);
                }
                continue;
            }
            let (cur, d) = self.desc(h, tid);
            if !(d.pending && d.phase <= phase) {
                break;
            }
            if first == self.head.load(SeqCst) && d.node != first {
                let locked = OpDesc { phase: d.phase, pending: true, enqueue: false, node: first, value: 0 };
                if !self.replace(h, tid, cur, locked) {
                    continue;
                }
            }
            let _ = deref(first).deq_tid.compare_exchange(NO_TID, tid, SeqCst, SeqCst);
            self.help_finish_deq(h);
        }
    }

    unsafe fn help_finish_deq(&self, h: &mut Handle<'_, Tr>) {
        let first = self.protect_end(h, I_HEAD, &self.head);
        let next = self.protect_node(h, I_NEXT, &deref(first).next, Some(first));
        let tid = deref(first).deq_tid.load(SeqCst);
        if tid == NO_TID {
            return;
        }
        let (cur, d) = self.desc(h, tid);
        if first == self.head.load(SeqCst) && !next.is_null() {
            h.check(next);
            if d.pending && d.node == first {
                let done = OpDesc { phase: d.phase, pending: false, enqueue: false, node: first, value: deref(next).value };
                self.replace(h, tid, cur, done);
            }
            if self.head.compare_exchange(first, next, SeqCst, SeqCst).is_ok() {
                h.retire(first);
            }
        }
    }
}

impl<Tr: Tracker> Drop for KpQueue<Tr> {
    fn drop(&mut self) {
        let core = self.tracker.core();
        // SAFETY: exclusive access; no operation is in flight.
        unsafe {
            let mut cur = self.head.load(SeqCst);
            while !cur.is_null() {
                let next = deref(cur).next.load(SeqCst);
                core.dealloc_exclusive(Block::header_ptr(cur));
                cur = next;
            }
            for d in self.state.iter() {
                core.dealloc_exclusive(Block::header_ptr(d.load(SeqCst)));
            }
        }
    }
}

impl<Tr: Tracker> fmt::Debug for KpQueue<Tr> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KpQueue").field("tracker", &Tr::KIND).field("threads", &self.state.len()).finish()
    }
}

impl<Tr: Tracker> Rideable for KpQueue<Tr> {
    type Tr = Tr;
    const KIND: RideableKind = RideableKind::KpQueue;

    fn build(tracker: Tr) -> Result<Self> {
        Self::new(tracker)
    }

    fn tracker(&self) -> &Tr {
        &self.tracker
    }

    fn apply(&self, h: &mut Handle<'_, Tr>, op: Op) -> bool {
        match op {
            Op::Insert(_, v) | Op::Put(_, v) => {
                self.enqueue(h, v);
                true
            }
            Op::Remove(_) | Op::Get(_) => self.dequeue(h).is_some(),
        }
    }
}
