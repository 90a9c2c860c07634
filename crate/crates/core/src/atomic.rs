//! Hardware primitives the trackers are built on: wait-free fetch-and-add,
//! a global era clock and double-width compare-and-swap over two adjacent
//! 64-bit words.
//!
//! Every access in this module is `SeqCst`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering::SeqCst};

use crossbeam_utils::CachePadded;

use crate::Error;

/// A value of the global era clock.
pub type Era = u64;

/// Reserved era meaning "no reservation".
pub const NONE_ERA: Era = u64::MAX;

/// First value of every era clock.
pub const FIRST_ERA: Era = 1;

/// Adds `delta` to `counter` and returns the previous value.
#[inline]
pub fn faa(counter: &AtomicU64, delta: u64) -> u64 {
    counter.fetch_add(delta, SeqCst)
}

/// Two adjacent 64-bit words, compared and replaced as a unit.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct WidePair {
    pub lo: u64,
    pub hi: u64,
}

impl WidePair {
    #[inline]
    pub const fn new(lo: u64, hi: u64) -> Self {
        Self { lo, hi }
    }

    #[inline]
    fn to_bits(self) -> u128 {
        (self.lo as u128) | ((self.hi as u128) << 64)
    }

    #[inline]
    fn from_bits(bits: u128) -> Self {
        Self { lo: bits as u64, hi: (bits >> 64) as u64 }
    }
}

impl fmt::Debug for WidePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{:#x}, {:#x}}}", self.lo, self.hi)
    }
}

/// Returns `Ok(())` when the running CPU can execute a native 128-bit CAS.
pub fn wide_cas_supported() -> Result<(), Error> {
    if imp::supported() {
        Ok(())
    } else {
        Err(Error::Unsupported("native 128-bit compare-and-swap (cmpxchg16b)"))
    }
}

/// A 16-byte aligned pair of atomic words.
///
/// Each word can be loaded or stored on its own; the pair can be replaced
/// atomically with [`compare_exchange`](Self::compare_exchange). A value of
/// this type can only be built on a CPU with native wide CAS, so holding one
/// is proof that the wide operations are available.
#[repr(C, align(16))]
pub struct AtomicWidePair {
    lo: AtomicU64,
    hi: AtomicU64,
}

impl AtomicWidePair {
    pub fn new(init: WidePair) -> Result<Self, Error> {
        wide_cas_supported()?;
        Ok(Self { lo: AtomicU64::new(init.lo), hi: AtomicU64::new(init.hi) })
    }

    #[inline]
    pub fn load_lo(&self) -> u64 {
        self.lo.load(SeqCst)
    }

    #[inline]
    pub fn load_hi(&self) -> u64 {
        self.hi.load(SeqCst)
    }

    #[inline]
    pub fn store_lo(&self, value: u64) {
        self.lo.store(value, SeqCst)
    }

    #[inline]
    pub fn store_hi(&self, value: u64) {
        self.hi.store(value, SeqCst)
    }

    #[inline]
    fn as_u128_ptr(&self) -> *mut u128 {
        self as *const Self as *mut u128
    }

    /// Atomically replaces `current` with `new`. Returns the value observed
    /// in the cell: `Ok(current)` on success, `Err(actual)` otherwise.
    #[inline]
    pub fn compare_exchange(&self, current: WidePair, new: WidePair) -> Result<WidePair, WidePair> {
        // SAFETY: the cell is 16-byte aligned and lives as long as `self`;
        // construction checked that the instruction exists.
        let prev = unsafe { imp::cas(self.as_u128_ptr(), current.to_bits(), new.to_bits()) };
        let prev = WidePair::from_bits(prev);
        if prev == current {
            Ok(prev)
        } else {
            Err(prev)
        }
    }

    /// Reads both words in one atomic step.
    #[inline]
    pub fn load(&self) -> WidePair {
        // A CAS of {0,0} with {0,0} never changes the cell but returns it.
        match self.compare_exchange(WidePair::default(), WidePair::default()) {
            Ok(v) | Err(v) => v,
        }
    }

    /// Replaces the pair unconditionally.
    pub fn store(&self, new: WidePair) {
        let mut cur = self.load();
        while let Err(actual) = self.compare_exchange(cur, new) {
            cur = actual;
        }
    }
}

impl fmt::Debug for AtomicWidePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.load().fmt(f)
    }
}

#[cfg(target_arch = "x86_64")]
mod imp {
    use std::arch::asm;

    pub fn supported() -> bool {
        std::arch::is_x86_feature_detected!("cmpxchg16b")
    }

    /// `lock cmpxchg16b`. Inline asm rather than the intrinsic, which lowers
    /// to a libatomic call unless the whole crate enables the feature.
    #[inline]
    pub unsafe fn cas(dst: *mut u128, old: u128, new: u128) -> u128 {
        let (mut lo, mut hi) = (old as u64, (old >> 64) as u64);
        // rbx cannot be named as an operand, so the low new word is swapped
        // in and out around the instruction. The address goes in a fixed
        // register: a `reg` operand may itself be given rbx.
        asm!(
            "xchg {new_lo}, rbx",
            "lock cmpxchg16b xmmword ptr [rdi]",
            "mov rbx, {new_lo}",
            in("rdi") dst,
            new_lo = inout(reg) new as u64 => _,
            in("rcx") (new >> 64) as u64,
            inout("rax") lo,
            inout("rdx") hi,
            options(nostack),
        );
        (lo as u128) | ((hi as u128) << 64)
    }
}

#[cfg(not(target_arch = "x86_64"))]
mod imp {
    pub fn supported() -> bool {
        false
    }

    pub unsafe fn cas(_dst: *mut u128, _old: u128, _new: u128) -> u128 {
        unreachable!("AtomicWidePair cannot be constructed without native wide CAS")
    }
}

/// The global era clock. Starts at [`FIRST_ERA`] and only moves forward by one.
pub struct EraClock {
    current: CachePadded<AtomicU64>,
}

impl EraClock {
    pub fn new() -> Self {
        Self { current: CachePadded::new(AtomicU64::new(FIRST_ERA)) }
    }

    #[inline]
    pub fn load(&self) -> Era {
        self.current.load(SeqCst)
    }

    /// Advances the clock by exactly one and returns the new era.
    #[inline]
    pub fn advance(&self) -> Era {
        faa(&self.current, 1) + 1
    }

    #[inline]
    pub(crate) fn raw(&self) -> &AtomicU64 {
        &self.current
    }
}

impl Default for EraClock {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for EraClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("EraClock").field(&self.load()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;
    use std::sync::{Arc, Barrier};
    use std::thread;

    fn cell(lo: u64, hi: u64) -> AtomicWidePair {
        AtomicWidePair::new(WidePair::new(lo, hi)).unwrap()
    }

    #[test]
    fn wcas_matching_expected() {
        let c = cell(1, 7);
        assert!(c.compare_exchange(WidePair::new(1, 7), WidePair::new(2, 7)).is_ok());
        assert_eq!(c.load(), WidePair::new(2, 7));
    }

    #[test]
    fn wcas_mismatched_expected() {
        let c = cell(1, 7);
        let r = c.compare_exchange(WidePair::new(1, 6), WidePair::new(2, 7));
        assert_eq!(r, Err(WidePair::new(1, 7)));
        assert_eq!(c.load(), WidePair::new(1, 7));
    }

    #[test]
    fn words_are_individually_addressable() {
        let c = cell(3, 4);
        c.store_lo(10);
        assert_eq!(c.load(), WidePair::new(10, 4));
        c.store_hi(11);
        assert_eq!((c.load_lo(), c.load_hi()), (10, 11));
        assert_eq!(std::mem::align_of::<AtomicWidePair>(), 16);
    }

    #[test]
    fn wcas_exactly_one_winner() {
        const ROUNDS: u64 = 2000;
        let c = Arc::new(cell(0, 0));
        let wins = Arc::new(AtomicUsize::new(0));
        let barrier = Arc::new(Barrier::new(2));
        let handles: Vec<_> = (0..2)
            .map(|id| {
                let (c, wins, barrier) = (c.clone(), wins.clone(), barrier.clone());
                thread::spawn(move || {
                    let mut mine = 0;
                    for round in 0..ROUNDS {
                        barrier.wait();
                        let expected = WidePair::new(round, round);
                        if c.compare_exchange(expected, WidePair::new(round + 1, round + 1)).is_ok() {
                            mine += 1;
                        }
                        barrier.wait();
                    }
                    wins.fetch_add(mine, SeqCst);
                    id
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        // Each round both threads race on the same expected value; the cell
        // advancing exactly ROUNDS times means exactly one winner per round.
        assert_eq!(wins.load(SeqCst), ROUNDS as usize);
        assert_eq!(c.load(), WidePair::new(ROUNDS, ROUNDS));
    }

    #[test]
    fn faa_returns_previous() {
        let c = AtomicU64::new(0);
        assert_eq!(faa(&c, 1), 0);
        assert_eq!(c.load(SeqCst), 1);
        let c = AtomicU64::new(41);
        assert_eq!(faa(&c, 1), 41);
        assert_eq!(c.load(SeqCst), 42);
    }

    #[test]
    fn concurrent_faa_yields_permutation() {
        let c = Arc::new(AtomicU64::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let c = c.clone();
                thread::spawn(move || (0..1000).map(|_| faa(&c, 1)).collect::<Vec<_>>())
            })
            .collect();
        let mut seen: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        seen.sort_unstable();
        assert_eq!(c.load(SeqCst), 8000);
        assert!(seen.iter().copied().eq(0..8000));
    }

    #[test]
    fn era_clock_advances_by_one() {
        let clock = EraClock::new();
        assert_eq!(clock.load(), 1);
        assert_eq!(clock.advance(), 2);
        assert_eq!(clock.load(), 2);

        let clock = EraClock::new();
        clock.raw().store(5, SeqCst);
        clock.advance();
        assert_eq!(clock.advance(), 7);
    }

    #[test]
    fn concurrent_advance_is_distinct() {
        let clock = Arc::new(EraClock::new());
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let clock = clock.clone();
                thread::spawn(move || {
                    let mut last = 0;
                    let mut mine = Vec::new();
                    for _ in 0..500 {
                        let seen = clock.load();
                        assert!(seen >= last, "era clock went backwards");
                        last = seen;
                        mine.push(clock.advance());
                    }
                    mine
                })
            })
            .collect();
        let mut all: Vec<Era> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 3000);
        assert_eq!(clock.load(), 1 + 3000);
    }
}
