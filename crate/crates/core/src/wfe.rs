//! Wait-Free Eras.
//!
//! The fast path is plain hazard eras: publish the current era, read the
//! reference, and succeed if the era did not move. After
//! `fastpath_attempts` failures the thread publishes a request in its
//! [`SlowState`] and keeps retrying while threads that are about to advance
//! the era (in `alloc_block`/`retire`) help it first. Each reservation is a
//! `{era, tag}` pair; the tag names the slow-path cycle so stale helpers
//! cannot touch a later cycle.
//!
//! Table layout per thread: normal reservations `0..max_hes`, then the first
//! special reservation (parent of a helped read) at `max_hes` and the second
//! special reservation (the helped read itself) at `max_hes + 1`.

use std::fmt;
use std::ptr::NonNull;
use std::str::FromStr;
use std::sync::atomic::{AtomicPtr, AtomicU64, AtomicUsize, Ordering::SeqCst};
use std::sync::Arc;

use crossbeam_utils::CachePadded;

use crate::atomic::{faa, AtomicWidePair, Era, WidePair, NONE_ERA};
use crate::tracker::{
    any_era_within, BlockHeader, ThreadState, Tracker, TrackerConfig, TrackerCore,
    TrackerKind,
};
use crate::{Error, Result};

/// Marks a pending slow-path request in the address word of a result pair.
pub const INVALID_ADDR: u64 = u64::MAX;

/// The settled "nothing produced" result.
pub const IDLE_RESULT: WidePair = WidePair::new(0, NONE_ERA);

/// Set in the tag word of a reservation a helper has handed an output to.
/// The owner's era-refresh CAS expects the bare tag, so it can never
/// overwrite a hand-over, even when its last era equals the helper's.
pub const HANDED_OVER: u64 = 1 << 63;

/// Places where a [`ScheduleHooks`] implementation may park a thread.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PausePoint {
    /// Owner: request published and `counter_start` bumped, result not yet pending.
    AfterCounterStart,
    /// Owner: result flipped to pending.
    AfterPendingFlip,
    /// Owner: top of every slow-path loop iteration.
    SlowPathIteration,
    /// Helper: request read, parent not yet reserved.
    HelperBeforeParentReservation,
    /// Helper: parent reserved, tag not yet re-checked.
    HelperAfterParentReservation,
    /// Helper: era validated, about to install the output.
    HelperBeforeResultCas,
    /// Helper: output installed, about to hand the era over to the owner.
    HelperBeforeHandOver,
    /// Scanner: between the first and second reservation pass of one record.
    ScanBetweenPasses,
}

impl PausePoint {
    pub const ALL: [PausePoint; 8] = [
        Self::AfterCounterStart,
        Self::AfterPendingFlip,
        Self::SlowPathIteration,
        Self::HelperBeforeParentReservation,
        Self::HelperAfterParentReservation,
        Self::HelperBeforeResultCas,
        Self::HelperBeforeHandOver,
        Self::ScanBetweenPasses,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::AfterCounterStart => "after_counter_start",
            Self::AfterPendingFlip => "after_pending_flip",
            Self::SlowPathIteration => "slow_path_iteration",
            Self::HelperBeforeParentReservation => "helper_before_parent_reservation",
            Self::HelperAfterParentReservation => "helper_after_parent_reservation",
            Self::HelperBeforeResultCas => "helper_before_result_cas",
            Self::HelperBeforeHandOver => "helper_before_hand_over",
            Self::ScanBetweenPasses => "scan_between_passes",
        }
    }
}

impl fmt::Display for PausePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PausePoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown pause point `{s}`")))
    }
}

/// Debug hooks called at every [`PausePoint`].
pub trait ScheduleHooks: Send + Sync {
    /// `false` lets the compiler drop every hook call.
    const ACTIVE: bool = true;

    fn pause(&self, point: PausePoint, tid: usize);
}

/// The production hook set: does nothing and costs nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoHooks;

impl ScheduleHooks for NoHooks {
    const ACTIVE: bool = false;

    #[inline(always)]
    fn pause(&self, _point: PausePoint, _tid: usize) {}
}

impl<H: ScheduleHooks> ScheduleHooks for Arc<H> {
    const ACTIVE: bool = H::ACTIVE;

    fn pause(&self, point: PausePoint, tid: usize) {
        (**self).pause(point, tid)
    }
}

/// Deliberate protocol faults, used to prove the test suite notices them.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mutation {
    #[default]
    None,
    /// Cleanup checks normal reservations before the second special one.
    ScanNormalsFirst,
    /// `help_thread` skips the tag re-check after reserving the parent.
    SkipHelperTagCheck,
}

/// Per-(thread, index) slow-path request record.
#[derive(Debug)]
pub struct SlowState {
    result: AtomicWidePair,
    src: AtomicUsize,
    parent_era: AtomicU64,
    // Only used for canary checks.
    parent_block: AtomicUsize,
}

pub struct Wfe<H: ScheduleHooks = NoHooks> {
    core: TrackerCore,
    max_hes: usize,
    stride: usize,
    reservations: Box<[AtomicWidePair]>,
    state: Box<[SlowState]>,
    counter_start: CachePadded<AtomicU64>,
    counter_end: CachePadded<AtomicU64>,
    hooks: H,
}

impl Wfe<NoHooks> {
    /// Fails with [`Error::Unsupported`] on CPUs without native 128-bit CAS.
    pub fn new(config: TrackerConfig) -> Result<Self> {
        Self::with_hooks(config, NoHooks)
    }
}

impl<H: ScheduleHooks> Wfe<H> {
    pub fn with_hooks(config: TrackerConfig, hooks: H) -> Result<Self> {
        let core = TrackerCore::new(config)?;
        let cfg = core.config();
        let (n, hes) = (cfg.max_threads, cfg.max_hes);
        // Rows padded to whole 128-byte lines.
        let stride = (hes + 2).div_ceil(8) * 8;
        let reservations = (0..n * stride)
            .map(|_| AtomicWidePair::new(WidePair::new(NONE_ERA, 0)))
            .collect::<Result<Box<[_]>>>()?;
        let state = (0..n * hes)
            .map(|_| {
                Ok(SlowState {
                    result: AtomicWidePair::new(IDLE_RESULT)?,
                    src: AtomicUsize::new(0),
                    parent_era: AtomicU64::new(NONE_ERA),
                    parent_block: AtomicUsize::new(0),
                })
            })
            .collect::<Result<Box<[_]>>>()?;
        Ok(Self {
            max_hes: hes,
            stride,
            reservations,
            state,
            counter_start: CachePadded::new(AtomicU64::new(0)),
            counter_end: CachePadded::new(AtomicU64::new(0)),
            hooks,
            core,
        })
    }

    #[inline]
    fn res(&self, tid: usize, index: usize) -> &AtomicWidePair {
        &self.reservations[tid * self.stride + index]
    }

    #[inline]
    fn slow(&self, tid: usize, index: usize) -> &SlowState {
        &self.state[tid * self.max_hes + index]
    }

    #[inline(always)]
    fn pause(&self, point: PausePoint, tid: usize) {
        if H::ACTIVE {
            self.hooks.pause(point, tid)
        }
    }

    /// `{era, tag}` of reservation `index` of `tid` (`max_hes` and
    /// `max_hes + 1` address the special reservations).
    pub fn reservation(&self, tid: usize, index: usize) -> WidePair {
        assert!(index < self.max_hes + 2);
        self.res(tid, index).load()
    }

    #[doc(hidden)]
    pub fn set_reservation(&self, tid: usize, index: usize, era: Era) {
        self.res(tid, index).store_lo(era)
    }

    /// Current result pair of the request record `(tid, index)`.
    pub fn request_result(&self, tid: usize, index: usize) -> WidePair {
        self.slow(tid, index).result.load()
    }

    /// `(counter_start, counter_end)`.
    pub fn counters(&self) -> (u64, u64) {
        let end = self.counter_end.load(SeqCst);
        (self.counter_start.load(SeqCst), end)
    }

    pub fn hooks(&self) -> &H {
        &self.hooks
    }

    /// The collaborative path. Entered after the fast path gave up.
    #[cold]
    #[inline(never)]
    fn slow_path(
        &self,
        st: &mut ThreadState,
        index: usize,
        src: &AtomicPtr<()>,
        parent: Option<&BlockHeader>,
    ) -> *mut () {
        let tid = st.tid();
        let slot = self.res(tid, index);
        let req = self.slow(tid, index);
        let parent_era = parent.map_or(NONE_ERA, BlockHeader::alloc_era);

        req.src.store(src as *const AtomicPtr<()> as usize, SeqCst);
        req.parent_era.store(parent_era, SeqCst);
        req.parent_block.store(parent.map_or(0, |p| p as *const BlockHeader as usize), SeqCst);
        faa(&self.counter_start, 1);
        self.pause(PausePoint::AfterCounterStart, tid);

        let tag = slot.load_hi();
        debug_assert_eq!(tag & HANDED_OVER, 0);
        let mut prev = slot.load_lo();
        let pending = WidePair::new(INVALID_ADDR, tag);
        let settled = req.result.load();
        debug_assert_ne!(settled.lo, INVALID_ADDR, "request already pending");
        if req.result.compare_exchange(settled, pending).is_err() {
            unreachable!("only the owner moves a settled result");
        }
        self.pause(PausePoint::AfterPendingFlip, tid);
        st.stats.slow_path_cycles += 1;

        let mut iterations = 0u64;
        let output = loop {
            iterations += 1;
            self.pause(PausePoint::SlowPathIteration, tid);
            let cur = self.core.clock().load();
            if cur != prev {
                // Fails only once a helper has handed an output over.
                let _ = slot.compare_exchange(WidePair::new(prev, tag), WidePair::new(cur, tag));
                prev = cur;
            }
            let value = src.load(SeqCst);
            if self.core.clock().load() == prev {
                if req.result.compare_exchange(pending, IDLE_RESULT).is_ok() {
                    slot.store_hi(tag + 1);
                    faa(&self.counter_end, 1);
                    st.stats.slow_loop_max = st.stats.slow_loop_max.max(iterations);
                    st.record_trace(index, prev);
                    return value;
                }
                break req.result.load();
            }
            let r = req.result.load();
            if r.lo != INVALID_ADDR {
                break r;
            }
        };
        debug_assert_ne!(output.lo, INVALID_ADDR);
        st.stats.slow_loop_max = st.stats.slow_loop_max.max(iterations);
        slot.store(WidePair::new(output.hi, tag + 1));
        faa(&self.counter_end, 1);
        st.record_trace(index, output.hi);
        output.lo as usize as *mut ()
    }

    /// Produces an output for the pending request `(t, i)` with cycle tag `tag`.
    pub fn help_thread(&self, st: &mut ThreadState, t: usize, i: usize, tag: u64) {
        let me = st.tid();
        let req = self.slow(t, i);
        let pending = WidePair::new(INVALID_ADDR, tag);
        let first = self.res(me, self.max_hes);
        let second = self.res(me, self.max_hes + 1);

        self.pause(PausePoint::HelperBeforeParentReservation, me);
        let parent_era = req.parent_era.load(SeqCst);
        let src_addr = req.src.load(SeqCst);
        let parent_block = req.parent_block.load(SeqCst);
        if parent_era != NONE_ERA {
            let cur = first.load();
            let _ = first.compare_exchange(cur, WidePair::new(parent_era, cur.hi));
        }
        self.pause(PausePoint::HelperAfterParentReservation, me);

        if self.core.config().mutation != Mutation::SkipHelperTagCheck && req.result.load() != pending {
            first.store_lo(NONE_ERA);
            return;
        }
        st.stats.helps += 1;

        // SAFETY: the owner was still pending after the parent was reserved,
        // so the cell is either top-level or inside a protected parent.
        let src = unsafe { &*(src_addr as *const AtomicPtr<()>) };
        let mut outer = 0u64;
        loop {
            outer += 1;
            let era = self.core.clock().load();
            second.store_lo(era);
            if let Some(p) = NonNull::new(parent_block as *mut BlockHeader) {
                self.core.check_live(p);
            }
            let value = src.load(SeqCst) as usize as u64;
            if self.core.clock().load() == era {
                self.pause(PausePoint::HelperBeforeResultCas, me);
                if req.result.compare_exchange(pending, WidePair::new(value, era)).is_ok() {
                    let target = self.res(t, i);
                    let mut attempts = 0u64;
                    loop {
                        let cur = target.load();
                        if cur.hi != tag {
                            break;
                        }
                        self.pause(PausePoint::HelperBeforeHandOver, me);
                        attempts += 1;
                        if target.compare_exchange(cur, WidePair::new(era, tag | HANDED_OVER)).is_ok() {
                            break;
                        }
                    }
                    st.stats.helper_inner_max = st.stats.helper_inner_max.max(attempts);
                }
                break;
            }
            if req.result.load() != pending {
                break;
            }
        }
        st.stats.helper_outer_max = st.stats.helper_outer_max.max(outer);
        second.store_lo(NONE_ERA);
        first.store_lo(NONE_ERA);
    }

    /// Every reserved era, read in three global passes. A helper publishes
    /// its second special reservation before handing the era over into a
    /// normal one, and reserves a parent (first special) only while the
    /// owner still holds it in a normal one; reading in the same orders
    /// cannot miss both copies.
    fn snapshot(&self, eras: &mut Vec<Era>, scanner: usize) {
        let n = self.core.config().max_threads;
        let hes = self.max_hes;
        let mut pass = |range: std::ops::Range<usize>| {
            for t in 0..n {
                for i in range.clone() {
                    let e = self.res(t, i).load_lo();
                    if e != NONE_ERA {
                        eras.push(e);
                    }
                }
            }
        };
        if self.core.config().mutation == Mutation::ScanNormalsFirst {
            pass(0..hes);
            self.pause(PausePoint::ScanBetweenPasses, scanner);
            pass(hes + 1..hes + 2);
        } else {
            pass(hes + 1..hes + 2);
            self.pause(PausePoint::ScanBetweenPasses, scanner);
            pass(0..hes);
        }
        pass(hes..hes + 1);
    }
}

impl<H: ScheduleHooks> Tracker for Wfe<H> {
    const KIND: TrackerKind = TrackerKind::Wfe;

    #[inline]
    fn core(&self) -> &TrackerCore {
        &self.core
    }

    fn reset_thread(&self, tid: usize) {
        for i in 0..self.max_hes + 2 {
            self.res(tid, i).store_lo(NONE_ERA);
        }
    }

    #[inline(always)]
    unsafe fn protect_raw(
        &self,
        st: &mut ThreadState,
        index: usize,
        src: &AtomicPtr<()>,
        parent: Option<&BlockHeader>,
    ) -> *mut () {
        assert!(index < self.max_hes, "reservation index {index} out of range");
        st.stats.protect_calls += 1;
        let cfg = self.core.config();
        if !cfg.force_slow_path {
            let slot = self.res(st.tid(), index);
            let clock = self.core.clock();
            let mut prev = slot.load_lo();
            for attempt in 1..=cfg.fastpath_attempts as u64 {
                let cur = clock.load();
                if cur != prev {
                    slot.store_lo(cur);
                    prev = cur;
                }
                let value = src.load(SeqCst);
                if clock.load() == prev {
                    st.stats.protect_loop_max = st.stats.protect_loop_max.max(attempt);
                    st.record_trace(index, prev);
                    return value;
                }
            }
        }
        self.slow_path(st, index, src, parent)
    }

    fn clear(&self, st: &mut ThreadState) {
        for i in 0..self.max_hes {
            self.res(st.tid(), i).store_lo(NONE_ERA);
        }
    }

    fn cleanup(&self, st: &mut ThreadState) -> usize {
        self.core.adopt_orphans(st);
        let mut eras = std::mem::take(&mut st.eras);
        eras.clear();
        self.snapshot(&mut eras, st.tid());
        eras.sort_unstable();
        let freed = self.core.scan_free(st, |r| any_era_within(&eras, r.alloc_era, r.retire_era));
        st.eras = eras;
        freed
    }

    /// Helps every pending request, then advances the era.
    fn increment_era(&self, st: &mut ThreadState) -> Era {
        // End first: reading start first could pair an old start with a newer end.
        let end = self.counter_end.load(SeqCst);
        let start = self.counter_start.load(SeqCst);
        if start != end {
            for t in 0..self.core.config().max_threads {
                if t == st.tid() {
                    continue;
                }
                for i in 0..self.max_hes {
                    let req = self.slow(t, i);
                    if req.result.load_lo() != INVALID_ADDR {
                        continue;
                    }
                    let r = req.result.load();
                    if r.lo == INVALID_ADDR {
                        self.help_thread(st, t, i, r.hi);
                    }
                }
            }
        }
        self.core.clock().advance()
    }
}

impl<H: ScheduleHooks> fmt::Debug for Wfe<H> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Wfe")
            .field("era", &self.core.clock().load())
            .field("counters", &self.counters())
            .field("unreclaimed", &self.core.unreclaimed())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::Block;

    fn wfe(max_threads: usize) -> Wfe {
        Wfe::new(TrackerConfig::new(max_threads)).unwrap()
    }

    fn set_era(w: &Wfe, era: Era) {
        w.core().clock().raw().store(era, SeqCst);
    }

    #[test]
    fn alloc_stamps_current_era() {
        let w = wfe(2);
        set_era(&w, 7);
        let mut h = w.register().unwrap();
        let b = h.alloc(5u64);
        let hdr = unsafe { (*b).header() };
        assert_eq!((hdr.alloc_era(), hdr.retire_era()), (7, NONE_ERA));
        unsafe { h.dealloc_unshared(b) };
    }

    #[test]
    fn alloc_advances_era_every_period() {
        let mut cfg = TrackerConfig::new(1);
        cfg.epoch_freq = 1;
        let w = Wfe::new(cfg).unwrap();
        let mut h = w.register().unwrap();
        for expected in 2..10 {
            let b = h.alloc(());
            assert_eq!(w.core().clock().load(), expected);
            unsafe { h.dealloc_unshared(b) };
        }
    }

    #[test]
    fn null_source_is_protected_vacuously() {
        let w = wfe(1);
        set_era(&w, 3);
        let mut h = w.register().unwrap();
        let cell: AtomicPtr<Block<u64>> = AtomicPtr::new(std::ptr::null_mut());
        let p = unsafe { h.get_protected(0, &cell, None) };
        assert!(p.is_null());
        assert_eq!(w.reservation(h.tid(), 0).lo, 3);
    }

    #[test]
    fn fast_path_single_iteration_when_era_stable() {
        let w = wfe(1);
        set_era(&w, 9);
        let mut h = w.register().unwrap();
        let b = h.alloc(1u64);
        let cell = AtomicPtr::new(b);
        let tag = w.reservation(h.tid(), 0).hi;
        assert_eq!(unsafe { h.get_protected(0, &cell, None) }, b);
        assert_eq!(w.reservation(h.tid(), 0), WidePair::new(9, tag));
        assert_eq!(h.stats().protect_loop_max, 1);
        assert_eq!(h.stats().slow_path_cycles, 0);
        h.clear();
        unsafe { h.dealloc_unshared(b) };
    }

    #[test]
    fn forced_slow_path_self_success() {
        let mut cfg = TrackerConfig::new(2);
        cfg.force_slow_path = true;
        let w = Wfe::new(cfg).unwrap();
        let mut h = w.register().unwrap();
        let b = h.alloc(1u64);
        let cell = AtomicPtr::new(b);
        let before = w.reservation(h.tid(), 1);
        let (s0, e0) = w.counters();
        assert_eq!(unsafe { h.get_protected(1, &cell, None) }, b);
        let after = w.reservation(h.tid(), 1);
        assert_eq!(after.hi, before.hi + 1);
        assert_eq!(after.lo, w.core().clock().load());
        assert_eq!(w.request_result(h.tid(), 1), IDLE_RESULT);
        assert_eq!(w.counters(), (s0 + 1, e0 + 1));
        assert_eq!(h.stats().slow_loop_max, 1);
        h.clear();
        unsafe { h.dealloc_unshared(b) };
    }

    #[test]
    fn clear_resets_eras_and_keeps_tags() {
        let mut cfg = TrackerConfig::new(1);
        cfg.force_slow_path = true;
        let w = Wfe::new(cfg).unwrap();
        let mut h = w.register().unwrap();
        let cell: AtomicPtr<Block<u64>> = AtomicPtr::new(std::ptr::null_mut());
        for i in 0..4 {
            unsafe { h.get_protected(i, &cell, None) };
        }
        let tags: Vec<u64> = (0..4).map(|i| w.reservation(0, i).hi).collect();
        assert!(tags.iter().all(|&t| t == 1));
        h.clear();
        for i in 0..4 {
            assert_eq!(w.reservation(0, i), WidePair::new(NONE_ERA, tags[i]));
        }
    }

    #[test]
    fn retire_stamps_lifespan_and_scans() {
        let mut cfg = TrackerConfig::new(1);
        cfg.scan_threshold = 1;
        let w = Wfe::new(cfg).unwrap();
        set_era(&w, 4);
        let mut h = w.register().unwrap();
        let b = h.alloc(0u64);
        set_era(&w, 9);
        let hdr = Block::header_ptr(b);
        unsafe { h.retire(b) };
        // Destroyed inside retire: nothing is reserved.
        assert_eq!(w.unreclaimed(), 0);
        assert_eq!(w.core().live_blocks(), 0);
        let _ = hdr;
    }

    #[test]
    fn retire_record_carries_lifespan() {
        let w = wfe(1);
        set_era(&w, 4);
        let mut h = w.register().unwrap();
        let b = h.alloc(0u64);
        set_era(&w, 9);
        unsafe { h.retire(b) };
        let r = h.state_mut().retired_mut()[0];
        assert_eq!((r.alloc_era, r.retire_era), (4, 9));
        assert_eq!(h.cleanup(), 1);
    }

    #[test]
    fn reservation_blocks_reclamation_until_cleared() {
        let w = wfe(2);
        let mut reader = w.register().unwrap();
        let mut writer = w.register().unwrap();
        let b = writer.alloc(3u64);
        let cell = AtomicPtr::new(b);
        assert_eq!(unsafe { reader.get_protected(0, &cell, None) }, b);
        cell.store(std::ptr::null_mut(), SeqCst);
        unsafe { writer.retire(b) };
        assert_eq!(writer.cleanup(), 0);
        assert!(reader.check(b));
        reader.clear();
        assert_eq!(writer.cleanup(), 1);
    }

    #[test]
    fn deregistered_slot_is_reused_clean() {
        let w = wfe(4);
        let handles: Vec<_> = (0..4).map(|_| w.register().unwrap()).collect();
        assert!(matches!(w.register(), Err(Error::Capacity(4))));
        let cell: AtomicPtr<Block<u64>> = AtomicPtr::new(std::ptr::null_mut());
        let mut handles = handles;
        let mut h2 = handles.remove(2);
        unsafe { h2.get_protected(0, &cell, None) };
        assert_ne!(w.reservation(2, 0).lo, NONE_ERA);
        drop(h2);
        let h = w.register().unwrap();
        assert_eq!(h.tid(), 2);
        assert!((0..6).all(|i| w.reservation(2, i).lo == NONE_ERA));
    }

    #[test]
    fn increment_era_without_requests_advances() {
        let w = wfe(2);
        let mut h = w.register().unwrap();
        assert_eq!(h.increment_era(), 2);
        assert_eq!(h.stats().helps, 0);
    }

    #[test]
    fn pause_point_names_parse() {
        for p in PausePoint::ALL {
            assert_eq!(p.name().parse::<PausePoint>().unwrap(), p);
        }
        assert!("line_118".parse::<PausePoint>().is_err());
    }

    #[test]
    fn invalid_addr_never_a_block() {
        let w = wfe(1);
        let mut h = w.register().unwrap();
        let b = h.alloc([0u64; 4]);
        assert_ne!(b as usize as u64, INVALID_ADDR);
        unsafe { h.dealloc_unshared(b) };
    }
}
