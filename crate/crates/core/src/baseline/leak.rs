//! The no-reclamation baseline.

use std::fmt;
use std::sync::atomic::{AtomicPtr, Ordering::SeqCst};

use crate::tracker::{BlockHeader, ThreadState, Tracker, TrackerConfig, TrackerCore, TrackerKind};
use crate::Result;

/// Counts retirements and never frees. Blocks are released when the tracker drops.
pub struct Leak {
    core: TrackerCore,
}

impl Leak {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        Ok(Self { core: TrackerCore::new(config)? })
    }
}

impl Tracker for Leak {
    const KIND: TrackerKind = TrackerKind::Nil;

    #[inline]
    fn core(&self) -> &TrackerCore {
        &self.core
    }

    fn reset_thread(&self, _tid: usize) {}

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

    fn cleanup(&self, _st: &mut ThreadState) -> usize {
        0
    }

    fn increment_era(&self, _st: &mut ThreadState) -> crate::Era {
        self.core.clock().load()
    }
}

impl fmt::Debug for Leak {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Leak").field("unreclaimed", &self.core.unreclaimed()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_retire_stays_unreclaimed() {
        let leak = Leak::new(TrackerConfig::new(1)).unwrap();
        let mut h = leak.register().unwrap();
        for i in 1..=50u64 {
            let b = h.alloc(i);
            let cell = AtomicPtr::new(b);
            assert_eq!(unsafe { h.get_protected(0, &cell, None) }, b);
            unsafe { h.retire(b) };
            assert_eq!(leak.unreclaimed(), i as i64);
        }
        assert_eq!(h.quiesce(), 0);
        assert_eq!(leak.unreclaimed(), 50);
    }
}
