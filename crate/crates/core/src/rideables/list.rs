//! Harris's sorted linked list with Michael's hazard-pointer-friendly
//! unlinking. A node is logically deleted by marking the low bit of its
//! `next` link and physically unlinked by whichever traversal meets it.
//!
//! Three reservation indices rotate over the prev / curr / next window;
//! each read passes the node the link lives in as `parent`.

use std::fmt;
use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicU64, Ordering::SeqCst};

use super::{deref, Op, Rideable, RideableKind};
use crate::tracker::{Block, Handle, Tracker};
use crate::Result;

pub(crate) struct Node {
    key: u64,
    value: AtomicU64,
    next: AtomicPtr<Block<Node>>,
}

pub(crate) type Link = AtomicPtr<Block<Node>>;
type NodePtr = *mut Block<Node>;

const MARK: usize = 1;

#[inline]
fn is_marked(p: NodePtr) -> bool {
    p as usize & MARK != 0
}

#[inline]
fn unmarked(p: NodePtr) -> NodePtr {
    (p as usize & !MARK) as NodePtr
}

#[inline]
fn marked(p: NodePtr) -> NodePtr {
    (p as usize | MARK) as NodePtr
}

struct Position {
    prev: *const Link,
    curr: NodePtr,
    next: NodePtr,
    found: bool,
}

/// Finds the first node with key >= `key`, unlinking marked nodes on the way.
/// On return `curr` and the node owning `prev` are protected.
unsafe fn find<Tr: Tracker>(h: &mut Handle<'_, Tr>, head: &Link, key: u64) -> Position {
    'retry: loop {
        let mut prev: *const Link = head;
        let (mut ip, mut ic, mut inx) = (0, 1, 2);
        let mut curr = h.get_protected(ic, head, None);
        loop {
            if curr.is_null() {
                return Position { prev, curr, next: ptr::null_mut(), found: false };
            }
            h.check(curr);
            let next = h.get_protected(inx, &deref(curr).next, Some((*curr).header()));
            if (*prev).load(SeqCst) != curr {
                continue 'retry;
            }
            if !is_marked(next) {
                let ckey = deref(curr).key;
                if ckey >= key {
                    return Position { prev, curr, next, found: ckey == key };
                }
                prev = &deref(curr).next;
                (ip, ic, inx) = (ic, inx, ip);
            } else {
                let next = unmarked(next);
                if (*prev).compare_exchange(curr, next, SeqCst, SeqCst).is_err() {
                    continue 'retry;
                }
                h.retire(curr);
                (ic, inx) = (inx, ic);
            }
            curr = unmarked(next);
        }
    }
}

pub(crate) fn insert<Tr: Tracker>(h: &mut Handle<'_, Tr>, head: &Link, key: u64, value: u64) -> bool {
    h.start_op();
    let mut node: NodePtr = ptr::null_mut();
    let inserted = loop {
        // SAFETY: `head` outlives the handle; `find` protects what it returns.
        let pos = unsafe { find(h, head, key) };
        if pos.found {
            break false;
        }
        if node.is_null() {
            node = h.alloc(Node { key, value: AtomicU64::new(value), next: AtomicPtr::default() });
        }
        unsafe {
            deref(node).next.store(pos.curr, SeqCst);
            if (*pos.prev).compare_exchange(pos.curr, node, SeqCst, SeqCst).is_ok() {
                node = ptr::null_mut();
                break true;
            }
        }
    };
    if !node.is_null() {
        // SAFETY: never published.
        unsafe { h.dealloc_unshared(node) };
    }
    h.end_op();
    inserted
}

pub(crate) fn remove<Tr: Tracker>(h: &mut Handle<'_, Tr>, head: &Link, key: u64) -> Option<u64> {
    h.start_op();
    let out = loop {
        unsafe {
            let pos = find(h, head, key);
            if !pos.found {
                break None;
            }
            let curr = &*pos.curr;
            if curr.next.compare_exchange(pos.next, marked(pos.next), SeqCst, SeqCst).is_err() {
                continue;
            }
            let value = curr.value.load(SeqCst);
            if (*pos.prev).compare_exchange(pos.curr, pos.next, SeqCst, SeqCst).is_ok() {
                h.retire(pos.curr);
            } else {
                find(h, head, key);
            }
            break Some(value);
        }
    };
    h.end_op();
    out
}

pub(crate) fn get<Tr: Tracker>(h: &mut Handle<'_, Tr>, head: &Link, key: u64) -> Option<u64> {
    h.start_op();
    let out = unsafe {
        let pos = find(h, head, key);
        pos.found.then(|| deref(pos.curr).value.load(SeqCst))
    };
    h.end_op();
    out
}

/// Updates the value of `key` if present, inserts it otherwise. Returns the
/// previous value.
pub(crate) fn put<Tr: Tracker>(h: &mut Handle<'_, Tr>, head: &Link, key: u64, value: u64) -> Option<u64> {
    loop {
        h.start_op();
        let prev = unsafe {
            let pos = find(h, head, key);
            pos.found.then(|| deref(pos.curr).value.swap(value, SeqCst))
        };
        h.end_op();
        if prev.is_some() || insert(h, head, key, value) {
            return prev;
        }
    }
}

/// Frees every node reachable from `head`.
///
/// # Safety
/// Exclusive access to the structure.
pub(crate) unsafe fn free_all<Tr: Tracker>(tracker: &Tr, head: &mut Link) {
    let mut cur = unmarked(*head.get_mut());
    while !cur.is_null() {
        let next = unmarked(deref(cur).next.load(SeqCst));
        tracker.core().dealloc_exclusive(Block::header_ptr(cur));
        cur = next;
    }
    *head.get_mut() = ptr::null_mut();
}

/// Keys in list order, skipping logically deleted nodes. Quiescent use only.
pub(crate) fn snapshot(head: &Link, out: &mut Vec<(u64, u64)>) {
    let mut cur = unmarked(head.load(SeqCst));
    while !cur.is_null() {
        // SAFETY: caller guarantees no concurrent reclamation.
        let node = unsafe { &*cur };
        let next = node.next.load(SeqCst);
        if !is_marked(next) {
            out.push((node.key, node.value.load(SeqCst)));
        }
        cur = unmarked(next);
    }
}

/// A sorted set of `u64` keys with `u64` values.
pub struct HarrisList<Tr: Tracker> {
    tracker: Tr,
    head: Link,
}

unsafe impl<Tr: Tracker> Send for HarrisList<Tr> {}
unsafe impl<Tr: Tracker> Sync for HarrisList<Tr> {}

impl<Tr: Tracker> HarrisList<Tr> {
    pub fn new(tracker: Tr) -> Self {
        Self { tracker, head: AtomicPtr::default() }
    }

    pub fn tracker(&self) -> &Tr {
        &self.tracker
    }

    pub fn register(&self) -> Result<Handle<'_, Tr>> {
        self.tracker.register()
    }

    /// `false` if the key is already present.
    pub fn insert(&self, h: &mut Handle<'_, Tr>, key: u64, value: u64) -> bool {
        insert(h, &self.head, key, value)
    }

    pub fn remove(&self, h: &mut Handle<'_, Tr>, key: u64) -> Option<u64> {
        remove(h, &self.head, key)
    }

    pub fn get(&self, h: &mut Handle<'_, Tr>, key: u64) -> Option<u64> {
        get(h, &self.head, key)
    }

    pub fn put(&self, h: &mut Handle<'_, Tr>, key: u64, value: u64) -> Option<u64> {
        put(h, &self.head, key, value)
    }

    /// Contents in key order. Requires that no other thread is mutating.
    pub fn entries(&mut self) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        snapshot(&self.head, &mut out);
        out
    }
}

impl<Tr: Tracker> Drop for HarrisList<Tr> {
    fn drop(&mut self) {
        unsafe { free_all(&self.tracker, &mut self.head) }
    }
}

impl<Tr: Tracker> fmt::Debug for HarrisList<Tr> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HarrisList").field("tracker", &Tr::KIND).finish_non_exhaustive()
    }
}

impl<Tr: Tracker> Rideable for HarrisList<Tr> {
    type Tr = Tr;
    const KIND: RideableKind = RideableKind::List;

    fn build(tracker: Tr) -> Result<Self> {
        Ok(Self::new(tracker))
    }

    fn tracker(&self) -> &Tr {
        &self.tracker
    }

    fn apply(&self, h: &mut Handle<'_, Tr>, op: Op) -> bool {
        match op {
            Op::Insert(k, v) => self.insert(h, k, v),
            Op::Remove(k) => self.remove(h, k).is_some(),
            Op::Get(k) => self.get(h, k).is_some(),
            Op::Put(k, v) => self.put(h, k, v).is_some(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Hp, TrackerConfig, Wfe};

    #[test]
    fn insert_get_duplicate() {
        let l = HarrisList::new(Wfe::new(TrackerConfig::new(1)).unwrap());
        let mut h = l.register().unwrap();
        assert!(l.insert(&mut h, 5, 50));
        assert_eq!(l.get(&mut h, 5), Some(50));
        assert!(!l.insert(&mut h, 5, 51));
        assert_eq!(l.get(&mut h, 4), None);
        assert_eq!(l.remove(&mut h, 4), None);
    }

    #[test]
    fn keeps_keys_sorted_and_unlinks() {
        let l = HarrisList::new(Hp::new(TrackerConfig::new(1)).unwrap());
        let mut h = l.register().unwrap();
        for k in [7, 3, 9, 1, 5] {
            assert!(l.insert(&mut h, k, k * 10));
        }
        assert_eq!(l.remove(&mut h, 3), Some(30));
        assert_eq!(l.put(&mut h, 9, 99), Some(90));
        assert_eq!(l.put(&mut h, 4, 40), None);
        drop(h);
        let mut l = l;
        assert_eq!(l.entries(), vec![(1, 10), (4, 40), (5, 50), (7, 70), (9, 99)]);
    }
}
