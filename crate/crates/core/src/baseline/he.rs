//! Hazard eras: lock-free reservations of eras instead of pointers.

use std::fmt;
use std::sync::atomic::{AtomicPtr, AtomicU64, Ordering::SeqCst};

use crate::atomic::{Era, NONE_ERA};
use crate::tracker::{any_era_within, BlockHeader, ThreadState, Tracker, TrackerConfig, TrackerCore, TrackerKind};
use crate::Result;

pub struct He {
    core: TrackerCore,
    max_hes: usize,
    stride: usize,
    reservations: Box<[AtomicU64]>,
}

impl He {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        let core = TrackerCore::new(config)?;
        let (n, hes) = (core.config().max_threads, core.config().max_hes);
        let stride = hes.div_ceil(16) * 16;
        Ok(Self {
            max_hes: hes,
            stride,
            reservations: (0..n * stride).map(|_| AtomicU64::new(NONE_ERA)).collect(),
            core,
        })
    }

    #[inline]
    fn res(&self, tid: usize, index: usize) -> &AtomicU64 {
        &self.reservations[tid * self.stride + index]
    }

    pub fn reservation(&self, tid: usize, index: usize) -> Era {
        self.res(tid, index).load(SeqCst)
    }

    #[doc(hidden)]
    pub fn set_reservation(&self, tid: usize, index: usize, era: Era) {
        self.res(tid, index).store(era, SeqCst)
    }
}

impl Tracker for He {
    const KIND: TrackerKind = TrackerKind::He;

    #[inline]
    fn core(&self) -> &TrackerCore {
        &self.core
    }

    fn reset_thread(&self, tid: usize) {
        for i in 0..self.max_hes {
            self.res(tid, i).store(NONE_ERA, SeqCst);
        }
    }

    /// Unbounded: retries for as long as the era keeps moving.
    #[inline]
    unsafe fn protect_raw(
        &self,
        st: &mut ThreadState,
        index: usize,
        src: &AtomicPtr<()>,
        _parent: Option<&BlockHeader>,
    ) -> *mut () {
        assert!(index < self.max_hes, "reservation index {index} out of range");
        st.stats.protect_calls += 1;
        let slot = self.res(st.tid(), index);
        let clock = self.core.clock();
        let mut prev = slot.load(SeqCst);
        let mut iterations = 0u64;
        loop {
            iterations += 1;
            let cur = clock.load();
            if cur != prev {
                slot.store(cur, SeqCst);
                prev = cur;
            }
            let value = src.load(SeqCst);
            if clock.load() == prev {
                st.stats.protect_loop_max = st.stats.protect_loop_max.max(iterations);
                st.record_trace(index, prev);
                return value;
            }
        }
    }

    fn clear(&self, st: &mut ThreadState) {
        for i in 0..self.max_hes {
            self.res(st.tid(), i).store(NONE_ERA, SeqCst);
        }
    }

    fn cleanup(&self, st: &mut ThreadState) -> usize {
        self.core.adopt_orphans(st);
        let mut eras = std::mem::take(&mut st.eras);
        eras.clear();
        eras.extend(self.reservations.iter().map(|s| s.load(SeqCst)).filter(|&e| e != NONE_ERA));
        eras.sort_unstable();
        let freed = self.core.scan_free(st, |r| any_era_within(&eras, r.alloc_era, r.retire_era));
        st.eras = eras;
        freed
    }
}

impl fmt::Debug for He {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("He").field("era", &self.core.clock().load()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::Block;

    #[test]
    fn stable_era_protects_in_one_iteration() {
        let he = He::new(TrackerConfig::new(1)).unwrap();
        he.core().clock().raw().store(4, SeqCst);
        let mut h = he.register().unwrap();
        let b = h.alloc(1u64);
        let cell = AtomicPtr::new(b);
        assert_eq!(unsafe { h.get_protected(0, &cell, None) }, b);
        assert_eq!(he.reservation(0, 0), 4);
        assert_eq!(h.stats().protect_loop_max, 1);
        let null: AtomicPtr<Block<u64>> = AtomicPtr::default();
        assert!(unsafe { h.get_protected(1, &null, None) }.is_null());
        assert_eq!(he.reservation(0, 1), 4);
        h.clear();
        unsafe { h.dealloc_unshared(b) };
    }

    #[test]
    fn single_thread_retire_drains() {
        let he = He::new(TrackerConfig::new(1)).unwrap();
        let mut h = he.register().unwrap();
        for i in 0..100u64 {
            let b = h.alloc(i);
            unsafe { h.retire(b) };
        }
        h.cleanup();
        assert_eq!(he.unreclaimed(), 0);
        assert_eq!(he.core().live_blocks(), 0);
    }

    #[test]
    fn stalled_reservation_only_pins_overlapping_blocks() {
        let he = He::new(TrackerConfig::new(2)).unwrap();
        let mut stalled = he.register().unwrap();
        let mut w = he.register().unwrap();
        let old = w.alloc(0u64);
        let cell = AtomicPtr::new(old);
        unsafe { stalled.get_protected(0, &cell, None) };
        let pinned_era = he.reservation(stalled.tid(), 0);
        cell.store(std::ptr::null_mut(), SeqCst);
        w.increment_era();
        unsafe { w.retire(old) };
        for i in 0..500u64 {
            let b = w.alloc(i);
            unsafe { w.retire(b) };
        }
        w.cleanup();
        // Everything born after the reserved era went away.
        assert_eq!(he.unreclaimed(), 1);
        assert!(pinned_era < he.core().clock().load());
        stalled.clear();
        w.cleanup();
        assert_eq!(he.unreclaimed(), 0);
    }
}
