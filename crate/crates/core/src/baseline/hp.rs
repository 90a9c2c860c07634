//! Hazard pointers: reservations are the addresses themselves.

use std::fmt;
use std::sync::atomic::{AtomicPtr, AtomicUsize, Ordering::SeqCst};

use crate::rideables::MARK_MASK;
use crate::tracker::{BlockHeader, ThreadState, Tracker, TrackerConfig, TrackerCore, TrackerKind};
use crate::Result;

pub struct Hp {
    core: TrackerCore,
    max_hes: usize,
    stride: usize,
    slots: Box<[AtomicUsize]>,
}

impl Hp {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        let core = TrackerCore::new(config)?;
        let (n, hes) = (core.config().max_threads, core.config().max_hes);
        let stride = hes.div_ceil(16) * 16;
        Ok(Self {
            max_hes: hes,
            stride,
            slots: (0..n * stride).map(|_| AtomicUsize::new(0)).collect(),
            core,
        })
    }

    #[inline]
    fn slot(&self, tid: usize, index: usize) -> &AtomicUsize {
        &self.slots[tid * self.stride + index]
    }

    /// Address advertised in slot `index` of `tid` (0 when empty).
    pub fn advertised(&self, tid: usize, index: usize) -> usize {
        self.slot(tid, index).load(SeqCst)
    }

    #[doc(hidden)]
    pub fn set_hazard(&self, tid: usize, index: usize, addr: usize) {
        self.slot(tid, index).store(addr, SeqCst)
    }
}

impl Tracker for Hp {
    const KIND: TrackerKind = TrackerKind::Hp;

    #[inline]
    fn core(&self) -> &TrackerCore {
        &self.core
    }

    fn reset_thread(&self, tid: usize) {
        for i in 0..self.max_hes {
            self.slot(tid, i).store(0, SeqCst);
        }
    }

    #[inline]
    unsafe fn protect_raw(
        &self,
        st: &mut ThreadState,
        index: usize,
        src: &AtomicPtr<()>,
        _parent: Option<&BlockHeader>,
    ) -> *mut () {
        assert!(index < self.max_hes, "hazard index {index} out of range");
        st.stats.protect_calls += 1;
        let slot = self.slot(st.tid(), index);
        let mut value = src.load(SeqCst);
        let mut iterations = 0u64;
        loop {
            iterations += 1;
            slot.store(value as usize & !MARK_MASK, SeqCst);
            let again = src.load(SeqCst);
            if again == value {
                st.stats.protect_loop_max = st.stats.protect_loop_max.max(iterations);
                return value;
            }
            value = again;
        }
    }

    fn clear(&self, st: &mut ThreadState) {
        for i in 0..self.max_hes {
            self.slot(st.tid(), i).store(0, SeqCst);
        }
    }

    fn cleanup(&self, st: &mut ThreadState) -> usize {
        self.core.adopt_orphans(st);
        let mut hazards = std::mem::take(&mut st.scratch);
        hazards.clear();
        hazards.extend(self.slots.iter().map(|s| s.load(SeqCst)).filter(|&a| a != 0));
        hazards.sort_unstable();
        let freed = self.core.scan_free(st, |r| hazards.binary_search(&r.addr()).is_ok());
        st.scratch = hazards;
        freed
    }

    fn increment_era(&self, _st: &mut ThreadState) -> crate::Era {
        self.core.clock().load()
    }
}

impl fmt::Debug for Hp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hp").field("unreclaimed", &self.core.unreclaimed()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::Block;

    #[test]
    fn advertised_block_survives_scans() {
        let hp = Hp::new(TrackerConfig::new(2)).unwrap();
        let mut reader = hp.register().unwrap();
        let mut w = hp.register().unwrap();
        let b = w.alloc(1u64);
        let cell = AtomicPtr::new(b);
        assert_eq!(unsafe { reader.get_protected(0, &cell, None) }, b);
        assert_eq!(hp.advertised(reader.tid(), 0), b as usize);
        assert_eq!(reader.stats().protect_loop_max, 1);
        cell.store(std::ptr::null_mut(), SeqCst);
        unsafe { w.retire(b) };
        for _ in 0..3 {
            assert_eq!(w.cleanup(), 0);
        }
        reader.clear();
        assert_eq!(w.cleanup(), 1);
    }

    #[test]
    fn null_source_advertises_null() {
        let hp = Hp::new(TrackerConfig::new(1)).unwrap();
        let mut h = hp.register().unwrap();
        let cell: AtomicPtr<Block<u64>> = AtomicPtr::default();
        assert!(unsafe { h.get_protected(2, &cell, None) }.is_null());
        assert_eq!(hp.advertised(0, 2), 0);
    }

    #[test]
    fn mark_bits_are_stripped_from_advertisement() {
        let hp = Hp::new(TrackerConfig::new(1)).unwrap();
        let mut h = hp.register().unwrap();
        let b = h.alloc(1u64);
        let cell = AtomicPtr::new((b as usize | 1) as *mut Block<u64>);
        unsafe { h.get_protected(0, &cell, None) };
        assert_eq!(hp.advertised(0, 0), b as usize);
        h.clear();
        unsafe { h.dealloc_unshared(b) };
    }
}
