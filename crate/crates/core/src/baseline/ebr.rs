//! Epoch-based reclamation. Fast, but a thread stalled inside an operation
//! freezes the epoch and with it all reclamation.

use std::fmt;
use std::sync::atomic::{AtomicPtr, AtomicU64, Ordering::SeqCst};

use crossbeam_utils::CachePadded;

use crate::atomic::{Era, NONE_ERA};
use crate::tracker::{BlockHeader, ThreadState, Tracker, TrackerConfig, TrackerCore, TrackerKind};
use crate::Result;

pub struct Ebr {
    core: TrackerCore,
    // NONE_ERA while the thread is outside an operation.
    announced: Box<[CachePadded<AtomicU64>]>,
    // Epoch of each thread's last scan. Nothing new becomes free until the
    // epoch moves, so scans in between are skipped.
    last_scan: Box<[CachePadded<AtomicU64>]>,
}

impl Ebr {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        let core = TrackerCore::new(config)?;
        let n = core.config().max_threads;
        Ok(Self {
            announced: (0..n).map(|_| CachePadded::new(AtomicU64::new(NONE_ERA))).collect(),
            last_scan: (0..n).map(|_| CachePadded::new(AtomicU64::new(0))).collect(),
            core,
        })
    }

    pub fn epoch(&self) -> Era {
        self.core.clock().load()
    }

    pub fn announced(&self, tid: usize) -> Option<Era> {
        Some(self.announced[tid].load(SeqCst)).filter(|&e| e != NONE_ERA)
    }

    pub fn enter(&self, st: &mut ThreadState) {
        self.announced[st.tid()].store(self.core.clock().load(), SeqCst);
    }

    pub fn leave(&self, st: &mut ThreadState) {
        self.announced[st.tid()].store(NONE_ERA, SeqCst);
    }

    /// Advances the epoch if every active thread has announced the current one.
    pub fn try_advance(&self) -> bool {
        let clock = self.core.clock();
        let e = clock.load();
        let blocked = self.announced.iter().any(|a| {
            let a = a.load(SeqCst);
            a != NONE_ERA && a != e
        });
        !blocked && clock.raw().compare_exchange(e, e + 1, SeqCst, SeqCst).is_ok()
    }
}

impl Tracker for Ebr {
    const KIND: TrackerKind = TrackerKind::Ebr;

    #[inline]
    fn core(&self) -> &TrackerCore {
        &self.core
    }

    fn reset_thread(&self, tid: usize) {
        self.announced[tid].store(NONE_ERA, SeqCst);
        self.last_scan[tid].store(0, SeqCst);
    }

    #[inline]
    unsafe fn protect_raw(
        &self,
        st: &mut ThreadState,
        _index: usize,
        src: &AtomicPtr<()>,
        _parent: Option<&BlockHeader>,
    ) -> *mut () {
        st.stats.protect_calls += 1;
        src.load(SeqCst)
    }

    fn clear(&self, _st: &mut ThreadState) {}

    fn start_op(&self, st: &mut ThreadState) {
        self.enter(st)
    }

    fn end_op(&self, st: &mut ThreadState) {
        self.leave(st)
    }

    /// Frees every record retired at least two epochs ago.
    fn cleanup(&self, st: &mut ThreadState) -> usize {
        self.core.adopt_orphans(st);
        let epoch = self.core.clock().load();
        if self.last_scan[st.tid()].swap(epoch, SeqCst) == epoch {
            return 0;
        }
        self.core.scan_free(st, |r| r.retire_era + 2 > epoch)
    }

    fn increment_era(&self, _st: &mut ThreadState) -> Era {
        self.try_advance();
        self.core.clock().load()
    }

    fn quiesce(&self, st: &mut ThreadState) -> usize {
        self.leave(st);
        for _ in 0..3 {
            self.try_advance();
        }
        self.cleanup(st)
    }
}

impl fmt::Debug for Ebr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ebr").field("epoch", &self.epoch()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inactive_threads_let_the_epoch_move() {
        let ebr = Ebr::new(TrackerConfig::new(3)).unwrap();
        let _a = ebr.register().unwrap();
        let _b = ebr.register().unwrap();
        let e = ebr.epoch();
        assert!(ebr.try_advance());
        assert!(ebr.try_advance());
        assert_eq!(ebr.epoch(), e + 2);
    }

    #[test]
    fn blocks_are_freed_two_epochs_after_retirement() {
        let ebr = Ebr::new(TrackerConfig::new(1)).unwrap();
        let mut h = ebr.register().unwrap();
        for round in 0..3u64 {
            h.start_op();
            let b = h.alloc(round);
            unsafe { h.retire(b) };
            h.end_op();
            assert!(ebr.try_advance());
        }
        // Retired in epochs 1, 2, 3; the epoch is now 4.
        assert_eq!(h.cleanup(), 2);
        assert_eq!(ebr.unreclaimed(), 1);
        assert!(ebr.try_advance());
        assert_eq!(h.cleanup(), 1);
        assert_eq!(ebr.unreclaimed(), 0);
    }

    #[test]
    fn stalled_thread_freezes_reclamation() {
        let ebr = Ebr::new(TrackerConfig::new(2)).unwrap();
        let mut stalled = ebr.register().unwrap();
        let mut w = ebr.register().unwrap();
        stalled.start_op();
        ebr.try_advance();
        let mut last = 0;
        for round in 1..=5 {
            for i in 0..100u64 {
                w.start_op();
                let b = w.alloc(i);
                unsafe { w.retire(b) };
                w.end_op();
            }
            w.cleanup();
            let now = ebr.unreclaimed();
            assert_eq!(now, round * 100);
            assert!(now > last);
            last = now;
        }
        stalled.end_op();
        assert_eq!(w.quiesce(), 500);
    }
}
