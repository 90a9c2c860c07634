//! The tracker abstraction shared by every reclamation scheme: block headers,
//! thread registration, per-thread retired lists, allocation accounting and
//! the generic "free what no reservation covers" scan.

use std::collections::VecDeque;
use std::fmt;
use std::marker::PhantomData;
use std::ops::Deref;
use std::ptr::NonNull;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicPtr, AtomicU64, Ordering::SeqCst};
use std::sync::Mutex;

use crossbeam_utils::CachePadded;

use crate::atomic::{Era, EraClock, NONE_ERA};
use crate::wfe::Mutation;
use crate::{Error, Result};

pub const CANARY_LIVE: u64 = 0x4c49_5645_0000_a11c;
pub const CANARY_RETIRED: u64 = 0x5245_5449_0000_0de1;
pub const CANARY_FREED: u64 = 0xdead_dead_dead_dead;

/// Per-block reclamation metadata, placed at offset zero of every [`Block`].
#[repr(C)]
pub struct BlockHeader {
    alloc_era: AtomicU64,
    retire_era: AtomicU64,
    canary: AtomicU64,
    destroy: unsafe fn(NonNull<BlockHeader>),
}

impl BlockHeader {
    #[inline]
    pub fn alloc_era(&self) -> Era {
        self.alloc_era.load(SeqCst)
    }

    #[inline]
    pub fn retire_era(&self) -> Era {
        self.retire_era.load(SeqCst)
    }

    #[inline]
    pub fn canary(&self) -> u64 {
        self.canary.load(SeqCst)
    }

    #[doc(hidden)]
    pub fn set_eras(&self, alloc_era: Era, retire_era: Era) {
        self.alloc_era.store(alloc_era, SeqCst);
        self.retire_era.store(retire_era, SeqCst);
    }
}

impl fmt::Debug for BlockHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlockHeader")
            .field("alloc_era", &self.alloc_era())
            .field("retire_era", &self.retire_era())
            .field("canary", &format_args!("{:#x}", self.canary()))
            .finish()
    }
}

/// A tracked allocation: header followed by the payload.
#[repr(C)]
pub struct Block<T> {
    header: BlockHeader,
    value: T,
}

impl<T> Block<T> {
    #[inline]
    pub fn header(&self) -> &BlockHeader {
        &self.header
    }

    #[inline]
    pub fn header_ptr(ptr: *mut Block<T>) -> NonNull<BlockHeader> {
        NonNull::new(ptr.cast()).expect("null block")
    }
}

impl<T> Deref for Block<T> {
    type Target = T;

    #[inline]
    fn deref(&self) -> &T {
        &self.value
    }
}

unsafe fn destroy_block<T>(header: NonNull<BlockHeader>) {
    drop(Box::from_raw(header.as_ptr().cast::<Block<T>>()));
}

/// A retired block waiting until no reservation covers its lifespan.
#[derive(Clone, Copy, Debug)]
pub struct RetiredRecord {
    pub block: NonNull<BlockHeader>,
    pub alloc_era: Era,
    pub retire_era: Era,
}

// Records are only handed between threads through the orphan list.
unsafe impl Send for RetiredRecord {}

impl RetiredRecord {
    #[inline]
    pub fn addr(&self) -> usize {
        self.block.as_ptr() as usize
    }
}

/// Whether some era of `sorted` (ascending) lies in `[alloc_era, retire_era]`.
#[inline]
pub fn any_era_within(sorted: &[Era], alloc_era: Era, retire_era: Era) -> bool {
    let i = sorted.partition_point(|&e| e < alloc_era);
    i < sorted.len() && sorted[i] <= retire_era
}

/// `true` iff `reserved` lies inside the inclusive interval `[alloc_era, retire_era]`.
#[inline]
pub fn lifespan_overlaps(alloc_era: Era, retire_era: Era, reserved: Era) -> bool {
    reserved != NONE_ERA && alloc_era <= reserved && reserved <= retire_era
}

/// The reclamation schemes, named the way the benchmark selects them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrackerKind {
    Wfe,
    He,
    Hp,
    Ebr,
    Ibr,
    Nil,
}

impl TrackerKind {
    pub const ALL: [TrackerKind; 6] = [Self::Wfe, Self::He, Self::Hp, Self::Ebr, Self::Ibr, Self::Nil];

    pub fn name(self) -> &'static str {
        match self {
            Self::Wfe => "WFE",
            Self::He => "HE",
            Self::Hp => "HP",
            Self::Ebr => "EBR",
            Self::Ibr => "IBR",
            Self::Nil => "NIL",
        }
    }
}

impl fmt::Display for TrackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "WFE" => Self::Wfe,
            "HE" => Self::He,
            "HP" => Self::Hp,
            "EBR" => Self::Ebr,
            "IBR" | "2GEIBR" => Self::Ibr,
            "NIL" | "LEAK" => Self::Nil,
            _ => return Err(Error::Usage(format!("unknown tracker `{s}`"))),
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrackerConfig {
    /// Upper bound on simultaneously registered threads.
    pub max_threads: usize,
    /// Normal reservation indices per thread.
    pub max_hes: usize,
    /// Per-thread era frequency: the era advances every `max_threads * epoch_freq` events.
    pub epoch_freq: u64,
    /// Minimum retired-list length before a scan.
    pub scan_threshold: usize,
    /// Fast-path retries before the WFE slow path.
    pub fastpath_attempts: usize,
    /// Skip the WFE fast path entirely.
    pub force_slow_path: bool,
    /// Check block canaries on protected dereferences and delay frees.
    pub canaries: bool,
    /// Freed blocks each thread keeps poisoned before handing them back to the allocator.
    pub quarantine: usize,
    #[doc(hidden)]
    pub mutation: Mutation,
}

impl TrackerConfig {
    pub fn new(max_threads: usize) -> Self {
        Self {
            max_threads,
            max_hes: 4,
            epoch_freq: 150,
            scan_threshold: 30,
            fastpath_attempts: 16,
            force_slow_path: false,
            canaries: false,
            quarantine: 1024,
            mutation: Mutation::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("max_threads", self.max_threads as u64),
            ("max_hes", self.max_hes as u64),
            ("epoch_freq", self.epoch_freq),
            ("scan_threshold", self.scan_threshold as u64),
            ("fastpath_attempts", self.fastpath_attempts as u64),
        ];
        match counts.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("{name} must be at least 1"))),
            None => Ok(()),
        }
    }

    pub fn with_max_hes(mut self, max_hes: usize) -> Self {
        self.max_hes = max_hes;
        self
    }

    pub fn with_canaries(mut self, on: bool) -> Self {
        self.canaries = on;
        self
    }

    fn era_period(&self) -> u64 {
        self.max_threads as u64 * self.epoch_freq
    }
}

/// Loop and path counters. Kept per handle and folded into the tracker on
/// deregistration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrackerStats {
    pub protect_calls: u64,
    pub protect_loop_max: u64,
    pub slow_path_cycles: u64,
    pub slow_loop_max: u64,
    pub helps: u64,
    pub helper_outer_max: u64,
    pub helper_inner_max: u64,
}

impl TrackerStats {
    pub fn merge(&mut self, other: &TrackerStats) {
        self.protect_calls += other.protect_calls;
        self.protect_loop_max = self.protect_loop_max.max(other.protect_loop_max);
        self.slow_path_cycles += other.slow_path_cycles;
        self.slow_loop_max = self.slow_loop_max.max(other.slow_loop_max);
        self.helps += other.helps;
        self.helper_outer_max = self.helper_outer_max.max(other.helper_outer_max);
        self.helper_inner_max = self.helper_inner_max.max(other.helper_inner_max);
    }

    pub fn slow_path_fraction(&self) -> f64 {
        if self.protect_calls == 0 {
            0.0
        } else {
            self.slow_path_cycles as f64 / self.protect_calls as f64
        }
    }
}

#[derive(Default)]
struct SharedStats {
    protect_calls: AtomicU64,
    protect_loop_max: AtomicU64,
    slow_path_cycles: AtomicU64,
    slow_loop_max: AtomicU64,
    helps: AtomicU64,
    helper_outer_max: AtomicU64,
    helper_inner_max: AtomicU64,
}

impl SharedStats {
    fn fold(&self, s: &TrackerStats) {
        self.protect_calls.fetch_add(s.protect_calls, SeqCst);
        self.protect_loop_max.fetch_max(s.protect_loop_max, SeqCst);
        self.slow_path_cycles.fetch_add(s.slow_path_cycles, SeqCst);
        self.slow_loop_max.fetch_max(s.slow_loop_max, SeqCst);
        self.helps.fetch_add(s.helps, SeqCst);
        self.helper_outer_max.fetch_max(s.helper_outer_max, SeqCst);
        self.helper_inner_max.fetch_max(s.helper_inner_max, SeqCst);
    }

    fn snapshot(&self) -> TrackerStats {
        TrackerStats {
            protect_calls: self.protect_calls.load(SeqCst),
            protect_loop_max: self.protect_loop_max.load(SeqCst),
            slow_path_cycles: self.slow_path_cycles.load(SeqCst),
            slow_loop_max: self.slow_loop_max.load(SeqCst),
            helps: self.helps.load(SeqCst),
            helper_outer_max: self.helper_outer_max.load(SeqCst),
            helper_inner_max: self.helper_inner_max.load(SeqCst),
        }
    }
}

/// Thread-private tracker state. Owned by a [`Handle`].
pub struct ThreadState {
    tid: usize,
    pub(crate) retired: Vec<RetiredRecord>,
    next_scan: usize,
    events: u64,
    quarantine: VecDeque<NonNull<BlockHeader>>,
    pub(crate) stats: TrackerStats,
    pub(crate) scratch: Vec<usize>,
    pub(crate) eras: Vec<Era>,
    pub(crate) trace: Option<Vec<(usize, Era)>>,
}

// The raw pointers in here are owned by this state alone.
unsafe impl Send for ThreadState {}

impl ThreadState {
    #[inline]
    pub fn tid(&self) -> usize {
        self.tid
    }

    pub fn retired_len(&self) -> usize {
        self.retired.len()
    }

    pub fn stats(&self) -> &TrackerStats {
        &self.stats
    }

    #[doc(hidden)]
    pub fn retired_mut(&mut self) -> &mut Vec<RetiredRecord> {
        &mut self.retired
    }

    #[inline]
    pub(crate) fn record_trace(&mut self, index: usize, era: Era) {
        if let Some(t) = self.trace.as_mut() {
            t.push((index, era));
        }
    }
}

/// State every tracker shares: configuration, era clock, registry, orphan
/// list and accounting.
pub struct TrackerCore {
    config: TrackerConfig,
    clock: EraClock,
    slots: Box<[AtomicBool]>,
    orphans: Mutex<Vec<RetiredRecord>>,
    unreclaimed: Box<[CachePadded<AtomicI64>]>,
    live: Box<[CachePadded<AtomicI64>]>,
    violations: AtomicU64,
    stats: SharedStats,
}

impl TrackerCore {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        let n = config.max_threads;
        Ok(Self {
            clock: EraClock::new(),
            slots: (0..n).map(|_| AtomicBool::new(false)).collect(),
            orphans: Mutex::new(Vec::new()),
            unreclaimed: (0..n).map(|_| CachePadded::new(AtomicI64::new(0))).collect(),
            live: (0..n).map(|_| CachePadded::new(AtomicI64::new(0))).collect(),
            violations: AtomicU64::new(0),
            stats: SharedStats::default(),
            config,
        })
    }

    #[inline]
    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    #[inline]
    pub fn clock(&self) -> &EraClock {
        &self.clock
    }

    fn claim_slot(&self) -> Result<usize> {
        self.slots
            .iter()
            .position(|s| s.compare_exchange(false, true, SeqCst, SeqCst).is_ok())
            .ok_or(Error::Capacity(self.config.max_threads))
    }

    /// Frees a thread slot. Releasing a slot that is not held is a usage error.
    #[doc(hidden)]
    pub fn release_slot(&self, tid: usize) -> Result<()> {
        match self.slots.get(tid) {
            Some(s) if s.swap(false, SeqCst) => Ok(()),
            _ => Err(Error::Usage(format!("thread slot {tid} is not registered"))),
        }
    }

    pub fn live_threads(&self) -> usize {
        self.slots.iter().filter(|s| s.load(SeqCst)).count()
    }

    /// Allocates a block with an embedded, unstamped header and counts it as live.
    pub fn alloc_accounted<T>(&self, st: &ThreadState, value: T) -> NonNull<Block<T>> {
        let block = Box::new(Block {
            header: BlockHeader {
                alloc_era: AtomicU64::new(NONE_ERA),
                retire_era: AtomicU64::new(NONE_ERA),
                canary: AtomicU64::new(CANARY_LIVE),
                destroy: destroy_block::<T>,
            },
            value,
        });
        self.live[st.tid].fetch_add(1, SeqCst);
        NonNull::from(Box::leak(block))
    }

    /// Marks a block retired; returns `false` (and records a violation) if it
    /// was already retired or freed.
    pub(crate) fn begin_retire(&self, block: NonNull<BlockHeader>) -> bool {
        let prev = unsafe { block.as_ref() }.canary.swap(CANARY_RETIRED, SeqCst);
        if prev != CANARY_LIVE {
            unsafe { block.as_ref() }.canary.store(prev, SeqCst);
            self.violation(format_args!("retire of a block in state {prev:#x} at {:p}", block));
            return false;
        }
        true
    }

    pub(crate) fn push_retired(&self, st: &mut ThreadState, record: RetiredRecord) {
        st.retired.push(record);
        self.unreclaimed[st.tid].fetch_add(1, SeqCst);
    }

    /// Counts an alloc/retire event; `true` when the era should advance.
    #[inline]
    pub(crate) fn count_event(&self, st: &mut ThreadState) -> bool {
        st.events += 1;
        if st.events >= self.config.era_period() {
            st.events = 0;
            true
        } else {
            false
        }
    }

    #[inline]
    pub(crate) fn should_scan(&self, st: &ThreadState) -> bool {
        st.retired.len() >= st.next_scan.max(self.config.scan_threshold)
    }

    /// Drains the orphan list (if uncontended) and destroys every retired
    /// record for which `covered` returns `false`. `covered` is called once
    /// per record and must re-read the reservations it depends on.
    /// Moves records left behind by departed threads into `st`. Must run
    /// before a scan reads any reservation: a record adopted after the read
    /// may have been retired after it, too late for the read to count.
    pub fn adopt_orphans(&self, st: &mut ThreadState) {
        if let Ok(mut orphans) = self.orphans.try_lock() {
            if !orphans.is_empty() {
                st.retired.append(&mut orphans);
            }
        }
    }

    /// Frees every retired record of `st` that `covered` does not claim.
    pub fn scan_free<F>(&self, st: &mut ThreadState, mut covered: F) -> usize
    where
        F: FnMut(&RetiredRecord) -> bool,
    {
        let mut freed = 0;
        let mut i = 0;
        while i < st.retired.len() {
            if covered(&st.retired[i]) {
                i += 1;
            } else {
                let r = st.retired.swap_remove(i);
                self.destroy(st, r.block);
                freed += 1;
            }
        }
        st.next_scan = st.retired.len() + self.config.scan_threshold;
        freed
    }

    fn destroy(&self, st: &mut ThreadState, block: NonNull<BlockHeader>) {
        let header = unsafe { block.as_ref() };
        let prev = header.canary.swap(CANARY_FREED, SeqCst);
        if prev == CANARY_FREED {
            self.violation(format_args!("double free of {:p}", block));
            return;
        }
        self.unreclaimed[st.tid].fetch_sub(1, SeqCst);
        self.live[st.tid].fetch_sub(1, SeqCst);
        if self.config.canaries && self.config.quarantine > 0 {
            st.quarantine.push_back(block);
            if st.quarantine.len() > self.config.quarantine {
                let old = st.quarantine.pop_front().unwrap();
                unsafe { (old.as_ref().destroy)(old) };
            }
        } else {
            unsafe { (header.destroy)(block) };
        }
    }

    /// Destroys a block that never became reachable by other threads.
    ///
    /// # Safety
    /// `block` must come from `alloc_accounted` of this tracker, must not be
    /// retired and must not be visible to any other thread.
    pub unsafe fn dealloc_unshared(&self, st: &ThreadState, block: NonNull<BlockHeader>) {
        self.live[st.tid].fetch_sub(1, SeqCst);
        (block.as_ref().destroy)(block);
    }

    /// Frees a block when the whole structure is torn down with exclusive access.
    ///
    /// # Safety
    /// No thread may hold or later obtain a reference to `block`.
    pub unsafe fn dealloc_exclusive(&self, block: NonNull<BlockHeader>) {
        self.live[0].fetch_sub(1, SeqCst);
        (block.as_ref().destroy)(block);
    }

    /// Checks that a protected block has not been freed. Always `true` when
    /// canaries are off.
    #[inline]
    pub fn check_live(&self, block: NonNull<BlockHeader>) -> bool {
        if !self.config.canaries {
            return true;
        }
        let c = unsafe { block.as_ref() }.canary();
        if c == CANARY_LIVE || c == CANARY_RETIRED {
            true
        } else {
            self.violation(format_args!("access to freed block {:p} (canary {c:#x})", block));
            false
        }
    }

    pub(crate) fn violation(&self, what: fmt::Arguments<'_>) {
        self.violations.fetch_add(1, SeqCst);
        log::error!("reclamation safety violation: {what}");
    }

    /// Use-after-free, double-retire and double-free detections so far.
    pub fn violations(&self) -> u64 {
        self.violations.load(SeqCst)
    }

    /// Retired blocks not yet destroyed.
    pub fn unreclaimed(&self) -> i64 {
        self.unreclaimed.iter().map(|c| c.load(SeqCst)).sum()
    }

    /// Allocated blocks not yet destroyed.
    pub fn live_blocks(&self) -> i64 {
        self.live.iter().map(|c| c.load(SeqCst)).sum()
    }

    pub fn orphan_len(&self) -> usize {
        self.orphans.lock().unwrap().len()
    }

    pub fn stats(&self) -> TrackerStats {
        self.stats.snapshot()
    }

    fn register_state(&self) -> Result<ThreadState> {
        let tid = self.claim_slot()?;
        Ok(ThreadState {
            tid,
            retired: Vec::new(),
            next_scan: self.config.scan_threshold,
            events: 0,
            quarantine: VecDeque::new(),
            stats: TrackerStats::default(),
            scratch: Vec::new(),
            eras: Vec::new(),
            trace: None,
        })
    }

    fn retire_state(&self, st: &mut ThreadState) {
        if !st.retired.is_empty() {
            self.orphans.lock().unwrap().append(&mut st.retired);
        }
        for block in st.quarantine.drain(..) {
            unsafe { (block.as_ref().destroy)(block) };
        }
        self.stats.fold(&st.stats);
        st.stats = TrackerStats::default();
        if let Err(e) = self.release_slot(st.tid) {
            debug_assert!(false, "{e}");
        }
    }
}

impl Drop for TrackerCore {
    fn drop(&mut self) {
        // No handle can outlive the tracker, so every orphan is unreachable.
        let orphans = std::mem::take(self.orphans.get_mut().unwrap());
        for r in orphans {
            unsafe {
                let h = r.block.as_ref();
                if h.canary.swap(CANARY_FREED, SeqCst) != CANARY_FREED {
                    (h.destroy)(r.block);
                }
            }
        }
    }
}

/// A reclamation scheme.
///
/// Threads obtain a [`Handle`] through [`register`](Tracker::register) and
/// route every allocation, hazardous read and retirement through it.
pub trait Tracker: Send + Sync + Sized {
    const KIND: TrackerKind;

    fn core(&self) -> &TrackerCore;

    /// Resets the reservations of `tid` to "none". Called on register and deregister.
    fn reset_thread(&self, tid: usize);

    /// Reads `src` and protects the block it points to under reservation `index`.
    ///
    /// # Safety
    /// `src` must either live inside `parent`, which the caller currently
    /// protects, or in memory that outlives every handle of this tracker.
    unsafe fn protect_raw(
        &self,
        st: &mut ThreadState,
        index: usize,
        src: &AtomicPtr<()>,
        parent: Option<&BlockHeader>,
    ) -> *mut ();

    /// Drops all normal reservations of the thread.
    fn clear(&self, st: &mut ThreadState);

    /// Frees retired blocks no reservation covers. Returns the count freed.
    fn cleanup(&self, st: &mut ThreadState) -> usize;

    /// Periodic clock advance driven by alloc/retire traffic.
    fn increment_era(&self, st: &mut ThreadState) -> Era {
        let _ = st;
        self.core().clock().advance()
    }

    /// Called at the start of every data-structure operation.
    fn start_op(&self, st: &mut ThreadState) {
        let _ = st;
    }

    /// Called at the end of every data-structure operation.
    fn end_op(&self, st: &mut ThreadState) {
        self.clear(st)
    }

    /// Drops this thread's protection and reclaims everything it can.
    fn quiesce(&self, st: &mut ThreadState) -> usize {
        self.end_op(st);
        self.cleanup(st)
    }

    fn register(&self) -> Result<Handle<'_, Self>> {
        let state = self.core().register_state()?;
        self.reset_thread(state.tid);
        Ok(Handle { tracker: self, state, _not_sync: PhantomData })
    }

    fn alloc_block<T>(&self, st: &mut ThreadState, value: T) -> NonNull<Block<T>> {
        let core = self.core();
        let block = core.alloc_accounted(st, value);
        unsafe { block.as_ref() }.header.alloc_era.store(core.clock().load(), SeqCst);
        if core.count_event(st) {
            self.increment_era(st);
        }
        block
    }

    /// Retires an unlinked block.
    ///
    /// # Safety
    /// `block` must come from `alloc_block` of this tracker and must no longer
    /// be reachable from the shared structure.
    unsafe fn retire(&self, st: &mut ThreadState, block: NonNull<BlockHeader>) {
        let core = self.core();
        // One clock read serves both the header stamp and the record.
        let era = core.clock().load();
        if !core.begin_retire(block) {
            return;
        }
        let header = block.as_ref();
        header.retire_era.store(era, SeqCst);
        let record = RetiredRecord { block, alloc_era: header.alloc_era(), retire_era: era };
        core.push_retired(st, record);
        if core.count_event(st) {
            self.increment_era(st);
        }
        if core.should_scan(st) {
            self.cleanup(st);
        }
    }

    fn violations(&self) -> u64 {
        self.core().violations()
    }

    fn unreclaimed(&self) -> i64 {
        self.core().unreclaimed()
    }
}

/// A registered thread's view of a tracker. Deregisters on drop.
pub struct Handle<'t, Tr: Tracker> {
    tracker: &'t Tr,
    state: ThreadState,
    _not_sync: PhantomData<*mut ()>,
}

unsafe impl<Tr: Tracker> Send for Handle<'_, Tr> {}

impl<'t, Tr: Tracker> Handle<'t, Tr> {
    #[inline]
    pub fn tid(&self) -> usize {
        self.state.tid
    }

    #[inline]
    pub fn tracker(&self) -> &'t Tr {
        self.tracker
    }

    #[inline]
    pub fn state(&self) -> &ThreadState {
        &self.state
    }

    #[doc(hidden)]
    #[inline]
    pub fn state_mut(&mut self) -> &mut ThreadState {
        &mut self.state
    }

    pub fn stats(&self) -> TrackerStats {
        self.state.stats
    }

    #[inline]
    pub fn alloc<T>(&mut self, value: T) -> *mut Block<T> {
        self.tracker.alloc_block(&mut self.state, value).as_ptr()
    }

    /// Frees a block that was never published.
    ///
    /// # Safety
    /// `block` must come from [`alloc`](Self::alloc) and never have been
    /// visible to another thread.
    pub unsafe fn dealloc_unshared<T>(&mut self, block: *mut Block<T>) {
        self.tracker.core().dealloc_unshared(&self.state, Block::header_ptr(block));
    }

    /// Protected read of a hazardous reference.
    ///
    /// # Safety
    /// See [`Tracker::protect_raw`].
    #[inline]
    pub unsafe fn get_protected<T>(
        &mut self,
        index: usize,
        src: &AtomicPtr<Block<T>>,
        parent: Option<&BlockHeader>,
    ) -> *mut Block<T> {
        let src = &*(src as *const AtomicPtr<Block<T>>).cast::<AtomicPtr<()>>();
        self.tracker.protect_raw(&mut self.state, index, src, parent).cast()
    }

    /// # Safety
    /// See [`Tracker::retire`].
    #[inline]
    pub unsafe fn retire<T>(&mut self, block: *mut Block<T>) {
        self.tracker.retire(&mut self.state, Block::header_ptr(block));
    }

    /// Retires `block` with a chosen lifespan and without scanning.
    ///
    /// # Safety
    /// As [`retire`](Self::retire).
    #[doc(hidden)]
    pub unsafe fn retire_with_lifespan<T>(&mut self, block: *mut Block<T>, alloc_era: Era, retire_era: Era) {
        let core = self.tracker.core();
        let b = Block::header_ptr(block);
        if core.begin_retire(b) {
            b.as_ref().set_eras(alloc_era, retire_era);
            core.push_retired(&mut self.state, RetiredRecord { block: b, alloc_era, retire_era });
        }
    }

    #[inline]
    pub fn clear(&mut self) {
        self.tracker.clear(&mut self.state)
    }

    #[inline]
    pub fn start_op(&mut self) {
        self.tracker.start_op(&mut self.state)
    }

    #[inline]
    pub fn end_op(&mut self) {
        self.tracker.end_op(&mut self.state)
    }

    pub fn cleanup(&mut self) -> usize {
        self.tracker.cleanup(&mut self.state)
    }

    pub fn quiesce(&mut self) -> usize {
        self.tracker.quiesce(&mut self.state)
    }

    pub fn increment_era(&mut self) -> Era {
        self.tracker.increment_era(&mut self.state)
    }

    /// Canary check for a block about to be dereferenced. Masks pointer mark bits.
    #[inline]
    pub fn check<T>(&self, block: *const Block<T>) -> bool {
        match NonNull::new((block as usize & !crate::rideables::MARK_MASK) as *mut BlockHeader) {
            Some(b) => self.tracker.core().check_live(b),
            None => true,
        }
    }

    /// Starts recording `(index, era)` after every protected read (era trackers only).
    pub fn enable_trace(&mut self) {
        self.state.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<(usize, Era)> {
        self.state.trace.replace(Vec::new()).unwrap_or_default()
    }
}

impl<Tr: Tracker> Drop for Handle<'_, Tr> {
    fn drop(&mut self) {
        self.tracker.reset_thread(self.state.tid);
        self.tracker.core().retire_state(&mut self.state);
    }
}

impl<Tr: Tracker> fmt::Debug for Handle<'_, Tr> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Handle")
            .field("tracker", &Tr::KIND)
            .field("tid", &self.state.tid)
            .field("retired", &self.state.retired.len())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_interval_arithmetic() {
        assert!(!lifespan_overlaps(4, 6, 3));
        assert!(lifespan_overlaps(2, 5, 3));
        assert!(lifespan_overlaps(2, 5, 2));
        assert!(lifespan_overlaps(2, 5, 5));
        assert!(!lifespan_overlaps(2, 5, NONE_ERA));
        assert!(!lifespan_overlaps(0, NONE_ERA, NONE_ERA));
        let sorted = [3, 7, 9];
        assert!(any_era_within(&sorted, 4, 7));
        assert!(any_era_within(&sorted, 9, 12));
        assert!(!any_era_within(&sorted, 4, 6));
        assert!(!any_era_within(&sorted, 10, 20));
        assert!(!any_era_within(&[], 0, 5));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrackerConfig::new(8);
        assert_eq!((c.epoch_freq, c.scan_threshold, c.fastpath_attempts, c.max_hes), (150, 30, 16, 4));
        assert!(c.validate().is_ok());
        let mut bad = c.clone();
        bad.scan_threshold = 0;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(TrackerCore::new(TrackerConfig::new(0)).is_err());
    }

    #[test]
    fn tracker_names_round_trip() {
        for k in TrackerKind::ALL {
            assert_eq!(k.name().parse::<TrackerKind>().unwrap(), k);
        }
        assert!("XYZ".parse::<TrackerKind>().is_err());
    }

    #[test]
    fn header_sits_at_offset_zero() {
        let core = TrackerCore::new(TrackerConfig::new(1)).unwrap();
        let st = core.register_state().unwrap();
        let b = core.alloc_accounted(&st, 99u64);
        let header = Block::header_ptr(b.as_ptr());
        assert_eq!(header.as_ptr() as usize, b.as_ptr() as usize);
        let h = unsafe { header.as_ref() };
        assert_eq!((h.alloc_era(), h.retire_era(), h.canary()), (NONE_ERA, NONE_ERA, CANARY_LIVE));
        assert_eq!(**unsafe { b.as_ref() }, 99);
        assert_eq!(core.live_blocks(), 1);
        unsafe { core.dealloc_unshared(&st, header) };
        assert_eq!(core.live_blocks(), 0);
    }

    #[test]
    fn double_release_is_a_usage_error() {
        let core = TrackerCore::new(TrackerConfig::new(2)).unwrap();
        let st = core.register_state().unwrap();
        assert!(core.release_slot(st.tid).is_ok());
        assert!(matches!(core.release_slot(st.tid), Err(Error::Usage(_))));
        assert!(core.release_slot(7).is_err());
    }
}
