//! Two-global-epoch interval-based reclamation (2GEIBR, untagged pointers).
//! Each thread reserves one era interval per operation; reads widen its
//! upper end.

use std::fmt;
use std::sync::atomic::{AtomicPtr, AtomicU64, Ordering::SeqCst};

use crossbeam_utils::CachePadded;

use crate::atomic::{Era, NONE_ERA};
use crate::tracker::{BlockHeader, ThreadState, Tracker, TrackerConfig, TrackerCore, TrackerKind};
use crate::Result;

struct Interval {
    lower: AtomicU64,
    upper: AtomicU64,
}

pub struct Ibr {
    core: TrackerCore,
    intervals: Box<[CachePadded<Interval>]>,
}

/// `true` iff `[a_lo, a_hi]` and `[b_lo, b_hi]` share an era.
#[inline]
pub fn intervals_intersect(a_lo: Era, a_hi: Era, b_lo: Era, b_hi: Era) -> bool {
    a_lo <= b_hi && b_lo <= a_hi
}

impl Ibr {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        let core = TrackerCore::new(config)?;
        let n = core.config().max_threads;
        let intervals = (0..n)
            .map(|_| {
                CachePadded::new(Interval { lower: AtomicU64::new(NONE_ERA), upper: AtomicU64::new(NONE_ERA) })
            })
            .collect();
        Ok(Self { core, intervals })
    }

    /// The interval reserved by `tid`, if any.
    pub fn interval(&self, tid: usize) -> Option<(Era, Era)> {
        let iv = &self.intervals[tid];
        let lower = iv.lower.load(SeqCst);
        (lower != NONE_ERA).then(|| (lower, iv.upper.load(SeqCst)))
    }

    #[doc(hidden)]
    pub fn set_interval(&self, tid: usize, interval: Option<(Era, Era)>) {
        let (lo, hi) = interval.unwrap_or((NONE_ERA, NONE_ERA));
        self.intervals[tid].lower.store(lo, SeqCst);
        self.intervals[tid].upper.store(hi, SeqCst);
    }
}

impl Tracker for Ibr {
    const KIND: TrackerKind = TrackerKind::Ibr;

    #[inline]
    fn core(&self) -> &TrackerCore {
        &self.core
    }

    fn reset_thread(&self, tid: usize) {
        self.set_interval(tid, None);
    }

    fn start_op(&self, st: &mut ThreadState) {
        let e = self.core.clock().load();
        let iv = &self.intervals[st.tid()];
        iv.lower.store(e, SeqCst);
        iv.upper.store(e, SeqCst);
    }

    fn end_op(&self, st: &mut ThreadState) {
        self.set_interval(st.tid(), None);
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
        let iv = &self.intervals[st.tid()];
        let clock = self.core.clock();
        if iv.lower.load(SeqCst) == NONE_ERA {
            self.start_op(st);
        }
        let mut prev = iv.upper.load(SeqCst);
        let mut iterations = 0u64;
        loop {
            iterations += 1;
            let cur = clock.load();
            if cur != prev {
                iv.upper.store(cur, SeqCst);
                prev = cur;
            }
            let value = src.load(SeqCst);
            if clock.load() == prev {
                st.stats.protect_loop_max = st.stats.protect_loop_max.max(iterations);
                return value;
            }
        }
    }

    // The interval lives for the whole operation; `end_op` drops it.
    fn clear(&self, _st: &mut ThreadState) {}

    fn cleanup(&self, st: &mut ThreadState) -> usize {
        self.core.adopt_orphans(st);
        // Flattened (lower, upper) pairs of the active intervals.
        let mut bounds = std::mem::take(&mut st.eras);
        bounds.clear();
        for iv in self.intervals.iter() {
            let lower = iv.lower.load(SeqCst);
            let upper = iv.upper.load(SeqCst);
            if lower != NONE_ERA {
                bounds.extend([lower, upper]);
            }
        }
        let freed = self.core.scan_free(st, |r| {
            bounds.chunks_exact(2).any(|b| intervals_intersect(b[0], b[1], r.alloc_era, r.retire_era))
        });
        st.eras = bounds;
        freed
    }
}

impl fmt::Debug for Ibr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ibr").field("era", &self.core.clock().load()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_intersection() {
        assert!(intervals_intersect(3, 9, 5, 6));
        assert!(intervals_intersect(3, 9, 9, 12));
        assert!(!intervals_intersect(3, 4, 5, 6));
    }

    #[test]
    fn reads_widen_the_upper_bound() {
        let ibr = Ibr::new(TrackerConfig::new(1)).unwrap();
        let mut h = ibr.register().unwrap();
        h.start_op();
        assert_eq!(ibr.interval(0), Some((1, 1)));
        ibr.core().clock().advance();
        ibr.core().clock().advance();
        let cell: AtomicPtr<crate::Block<u64>> = AtomicPtr::default();
        unsafe { h.get_protected(0, &cell, None) };
        assert_eq!(ibr.interval(0), Some((1, 3)));
        h.end_op();
        assert_eq!(ibr.interval(0), None);
    }

    #[test]
    fn disjoint_lifespans_are_freed() {
        let ibr = Ibr::new(TrackerConfig::new(2)).unwrap();
        let mut w = ibr.register().unwrap();
        let b = w.alloc(0u64);
        ibr.set_interval(1, Some((5, 9)));
        unsafe { w.retire(b) };
        assert_eq!(w.cleanup(), 1);
    }
}
