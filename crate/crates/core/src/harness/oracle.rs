//! The verification suite behind `mode=oracle`.
//!
//! Every check is deterministic for a given seed. Scan decisions are compared
//! against brute force on frozen instances (reservations written directly,
//! no concurrent threads), so any mismatch is a bug in the scan itself.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering::SeqCst};
use std::sync::{Barrier, Mutex};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lincheck::{is_linearizable_queue, Call, HistoryClock, QueueOp};
use super::{drain, scenarios, Build};
use crate::atomic::{faa, AtomicWidePair, Era, WidePair, NONE_ERA};
use crate::rideables::{HarrisList, HashMap, KpQueue, TreiberStack};
use crate::tracker::{Block, Handle, Tracker, TrackerConfig, TrackerKind};
use crate::wfe::Mutation;
use crate::{with_tracker, He, Hp, Ibr, Result, Wfe};

type Verdict = std::result::Result<String, String>;

#[derive(Clone, Debug)]
pub struct OracleOptions {
    /// Frozen instances per scan oracle.
    pub instances: usize,
    /// Operations in the HE/WFE differential trace.
    pub differential_ops: u64,
    /// Random KP queue histories for the linearizability check.
    pub histories: usize,
    /// Operations per sequential model run.
    pub sequential_ops: usize,
    pub seed: u64,
    /// Protocol fault injected into every WFE instance.
    pub mutation: Mutation,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            instances: 10_000,
            differential_ops: 100_000,
            histories: 1_000,
            sequential_ops: 2_000,
            seed: 0x5eed,
            mutation: Mutation::None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Default)]
pub struct OracleReport {
    pub checks: Vec<Check>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict.is_ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.verdict.is_err())
    }

    fn push(&mut self, name: impl Into<String>, verdict: Verdict) {
        let name = name.into();
        match &verdict {
            Ok(d) => log::info!("PASS {name}: {d}"),
            Err(d) => log::warn!("FAIL {name}: {d}"),
        }
        self.checks.push(Check { name, verdict });
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            match &c.verdict {
                Ok(d) => writeln!(f, "PASS {}: {d}", c.name)?,
                Err(d) => writeln!(f, "FAIL {}: {d}", c.name)?,
            }
        }
        Ok(())
    }
}

fn err(e: impl fmt::Display) -> String {
    e.to_string()
}

/// Runs every check. Never panics on a failed check; see [`OracleReport::passed`].
pub fn run_oracle_suite(opts: &OracleOptions) -> OracleReport {
    let mut report = OracleReport::default();
    report.push("scan: wfe vs brute-force overlap", wfe_scan(opts));
    report.push("scan: he vs brute-force overlap", he_scan(opts));
    report.push("scan: hp vs brute-force membership", hp_scan(opts));
    report.push("scan: ibr vs brute-force intersection", ibr_scan(opts));
    report.push("atomics: one winner per wide cas round", wide_cas_winners());
    report.push("atomics: faa hands out a permutation", faa_permutation());
    report.push("differential: he and wfe reservation traces", differential(opts));
    for kind in TrackerKind::ALL {
        report.push(format!("sequential: stack/{kind}"), with_tracker!(kind, T => seq_stack::<T>(opts)));
        report.push(format!("sequential: kpqueue/{kind}"), with_tracker!(kind, T => seq_queue::<T>(opts)));
        report.push(format!("sequential: list/{kind}"), with_tracker!(kind, T => seq_map::<HarrisList<T>>(opts)));
        report.push(format!("sequential: hashmap/{kind}"), with_tracker!(kind, T => seq_map::<HashMap<T>>(opts)));
    }
    report.push("linearizability: kpqueue histories", kp_histories(opts));
    for (name, verdict) in scenarios::check_all(opts.mutation) {
        report.push(name, verdict);
    }
    report
}

// ---- frozen scan instances ----

// Short lifespans over a wide era range keep roughly half the records
// covered, so both decisions get exercised.
const ERAS: Era = 64;
const MAX_SPAN: Era = 10;
const RECORDS: usize = 8;

fn random_era(rng: &mut ChaCha8Rng) -> Era {
    if rng.gen_bool(0.5) {
        NONE_ERA
    } else {
        rng.gen_range(1..=ERAS + MAX_SPAN)
    }
}

struct Rec {
    block: *mut Block<u64>,
    alloc: Era,
    retire: Era,
}

fn make_records<Tr: Tracker>(h: &mut Handle<'_, Tr>, rng: &mut ChaCha8Rng) -> Vec<Rec> {
    (0..rng.gen_range(1..=RECORDS))
        .map(|i| {
            let alloc = rng.gen_range(1..=ERAS);
            let retire = alloc + rng.gen_range(0..=MAX_SPAN);
            Rec { block: h.alloc(i as u64), alloc, retire }
        })
        .collect()
}

/// Retires `recs`, runs one scan, and compares the survivors with `keep`.
fn scan_matches<Tr: Tracker>(
    h: &mut Handle<'_, Tr>,
    recs: &[Rec],
    keep: impl Fn(&Rec) -> bool,
) -> std::result::Result<usize, String> {
    let mut expected: Vec<usize> = recs.iter().filter(|r| keep(r)).map(|r| r.block as usize).collect();
    for r in recs {
        unsafe { h.retire_with_lifespan(r.block, r.alloc, r.retire) };
    }
    h.cleanup();
    let mut got: Vec<usize> = h.state().retired.iter().map(|r| r.addr()).collect();
    expected.sort_unstable();
    got.sort_unstable();
    if got != expected {
        let lifespans: Vec<_> = recs.iter().map(|r| (r.alloc, r.retire)).collect();
        return Err(format!("kept {} of {:?}, brute force keeps {}", got.len(), lifespans, expected.len()));
    }
    Ok(expected.len())
}

/// Empties the retired list after reservations were withdrawn.
fn flush<Tr: Tracker>(h: &mut Handle<'_, Tr>) -> std::result::Result<(), String> {
    h.cleanup();
    match h.state().retired_len() {
        0 => Ok(()),
        n => Err(format!("{n} records survived with no reservations")),
    }
}

fn summary(instances: usize, kept: usize, total: usize) -> String {
    format!("{instances} instances, {kept} of {total} records kept")
}

fn wfe_scan(opts: &OracleOptions) -> Verdict {
    let (n, hes) = (4, 2);
    let mut cfg = TrackerConfig::new(n).with_max_hes(hes);
    cfg.mutation = opts.mutation;
    let w = Wfe::new(cfg).map_err(err)?;
    let mut h = w.register().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 1);
    let (mut kept, mut total) = (0, 0);
    for _ in 0..opts.instances {
        let recs = make_records(&mut h, &mut rng);
        // Normal and both special reservations of every thread.
        let res: Vec<Era> = (0..n * (hes + 2)).map(|_| random_era(&mut rng)).collect();
        for (k, &e) in res.iter().enumerate() {
            w.set_reservation(k / (hes + 2), k % (hes + 2), e);
        }
        total += recs.len();
        kept += scan_matches(&mut h, &recs, |r| res.iter().any(|&e| e != NONE_ERA && r.alloc <= e && e <= r.retire))?;
        for k in 0..res.len() {
            w.set_reservation(k / (hes + 2), k % (hes + 2), NONE_ERA);
        }
        flush(&mut h)?;
    }
    Ok(summary(opts.instances, kept, total))
}

fn he_scan(opts: &OracleOptions) -> Verdict {
    let (n, hes) = (4, 3);
    let he = He::new(TrackerConfig::new(n).with_max_hes(hes)).map_err(err)?;
    let mut h = he.register().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 2);
    let (mut kept, mut total) = (0, 0);
    for _ in 0..opts.instances {
        let recs = make_records(&mut h, &mut rng);
        let res: Vec<Era> = (0..n * hes).map(|_| random_era(&mut rng)).collect();
        for (k, &e) in res.iter().enumerate() {
            he.set_reservation(k / hes, k % hes, e);
        }
        total += recs.len();
        kept += scan_matches(&mut h, &recs, |r| res.iter().any(|&e| e != NONE_ERA && r.alloc <= e && e <= r.retire))?;
        for k in 0..res.len() {
            he.set_reservation(k / hes, k % hes, NONE_ERA);
        }
        flush(&mut h)?;
    }
    Ok(summary(opts.instances, kept, total))
}

fn hp_scan(opts: &OracleOptions) -> Verdict {
    let (n, hes) = (4, 3);
    let hp = Hp::new(TrackerConfig::new(n).with_max_hes(hes)).map_err(err)?;
    let mut h = hp.register().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 3);
    let (mut kept, mut total) = (0, 0);
    for _ in 0..opts.instances {
        let recs = make_records(&mut h, &mut rng);
        // Each slot: empty, a record's address, or an unrelated address.
        let hazards: Vec<usize> = (0..n * hes)
            .map(|_| match rng.gen_range(0..3) {
                0 => 0,
                1 => recs[rng.gen_range(0..recs.len())].block as usize,
                _ => rng.gen_range(1..1usize << 20) << 4,
            })
            .collect();
        for (k, &a) in hazards.iter().enumerate() {
            hp.set_hazard(k / hes, k % hes, a);
        }
        total += recs.len();
        kept += scan_matches(&mut h, &recs, |r| hazards.iter().any(|&a| a == r.block as usize))?;
        for k in 0..hazards.len() {
            hp.set_hazard(k / hes, k % hes, 0);
        }
        flush(&mut h)?;
    }
    Ok(summary(opts.instances, kept, total))
}

fn ibr_scan(opts: &OracleOptions) -> Verdict {
    let n = 6;
    let ibr = Ibr::new(TrackerConfig::new(n)).map_err(err)?;
    let mut h = ibr.register().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 4);
    let (mut kept, mut total) = (0, 0);
    for _ in 0..opts.instances {
        let recs = make_records(&mut h, &mut rng);
        let intervals: Vec<Option<(Era, Era)>> = (0..n)
            .map(|_| {
                rng.gen_ratio(2, 3).then(|| {
                    let lo = rng.gen_range(1..=ERAS + MAX_SPAN);
                    (lo, lo + rng.gen_range(0..=MAX_SPAN))
                })
            })
            .collect();
        for (t, &iv) in intervals.iter().enumerate() {
            ibr.set_interval(t, iv);
        }
        total += recs.len();
        kept += scan_matches(&mut h, &recs, |r| {
            intervals.iter().flatten().any(|&(lo, hi)| lo <= r.retire && r.alloc <= hi)
        })?;
        for t in 0..n {
            ibr.set_interval(t, None);
        }
        flush(&mut h)?;
    }
    Ok(summary(opts.instances, kept, total))
}

// ---- atomics ----

fn wide_cas_winners() -> Verdict {
    const THREADS: usize = 4;
    const ROUNDS: usize = 2_000;
    let cell = AtomicWidePair::new(WidePair::new(0, 0)).map_err(err)?;
    let wins: Vec<AtomicUsize> = (0..ROUNDS).map(|_| AtomicUsize::new(0)).collect();
    let barrier = Barrier::new(THREADS);
    thread::scope(|s| {
        for t in 0..THREADS {
            let (cell, wins, barrier) = (&cell, &wins, &barrier);
            s.spawn(move || {
                for (round, w) in wins.iter().enumerate() {
                    barrier.wait();
                    let cur = cell.load();
                    if cur.lo == round as u64 && cell.compare_exchange(cur, WidePair::new(cur.lo + 1, t as u64)).is_ok() {
                        w.fetch_add(1, SeqCst);
                    }
                    barrier.wait();
                }
            });
        }
    });
    match wins.iter().position(|w| w.load(SeqCst) != 1) {
        None => Ok(format!("{ROUNDS} rounds x {THREADS} threads")),
        Some(r) => Err(format!("round {r} had {} winners", wins[r].load(SeqCst))),
    }
}

fn faa_permutation() -> Verdict {
    const THREADS: usize = 4;
    const PER: usize = 10_000;
    let counter = AtomicU64::new(0);
    let seen = Mutex::new(Vec::with_capacity(THREADS * PER));
    thread::scope(|s| {
        for _ in 0..THREADS {
            s.spawn(|| {
                let mine: Vec<u64> = (0..PER).map(|_| faa(&counter, 1)).collect();
                seen.lock().unwrap().extend(mine);
            });
        }
    });
    let mut seen = seen.into_inner().unwrap();
    seen.sort_unstable();
    if seen.iter().copied().eq(0..(THREADS * PER) as u64) {
        Ok(format!("{} increments", THREADS * PER))
    } else {
        Err("returned values are not 0..n".into())
    }
}

// ---- differential ----

/// Single-thread `(index, era)` trace of every protected read on a small
/// hashmap (long bucket chains, so many reads per operation).
pub fn protection_trace<Tr: Build>(ops: u64, seed: u64, config: TrackerConfig) -> Result<Vec<(usize, Era)>> {
    let map = HashMap::with_buckets(Tr::build(config)?, 64)?;
    let mut h = map.register()?;
    h.enable_trace();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..ops {
        let k = rng.gen_range(0..2_048);
        match rng.gen_range(0..4) {
            0 => drop(map.insert(&mut h, k, k)),
            1 => drop(map.remove(&mut h, k)),
            2 => drop(map.get(&mut h, k)),
            _ => drop(map.put(&mut h, k, k + 1)),
        }
    }
    Ok(h.take_trace())
}

fn differential(opts: &OracleOptions) -> Verdict {
    let mut cfg = TrackerConfig::new(1);
    cfg.fastpath_attempts = usize::MAX;
    cfg.mutation = opts.mutation;
    let he = protection_trace::<He>(opts.differential_ops, opts.seed, cfg.clone()).map_err(err)?;
    let wfe = protection_trace::<Wfe>(opts.differential_ops, opts.seed, cfg).map_err(err)?;
    if he.is_empty() {
        return Err("empty trace".into());
    }
    match he.iter().zip(&wfe).position(|(a, b)| a != b) {
        None if he.len() == wfe.len() => Ok(format!("{} ops, {} protected reads", opts.differential_ops, he.len())),
        None => Err(format!("trace lengths differ: he {} wfe {}", he.len(), wfe.len())),
        Some(i) => Err(format!("first difference at read {i}: he {:?} wfe {:?}", he[i], wfe[i])),
    }
}

// ---- sequential models ----

fn oracle_config<Tr: Build>(opts: &OracleOptions) -> TrackerConfig {
    let mut cfg = TrackerConfig::new(2).with_canaries(true);
    if Tr::KIND == TrackerKind::Wfe {
        cfg.mutation = opts.mutation;
    }
    // Small scan threshold so reclamation runs during the sequence.
    cfg.scan_threshold = 4;
    cfg
}

fn finish<Tr: Tracker>(tracker: &Tr, ops: usize) -> Verdict {
    let residual = drain(tracker).map_err(err)?;
    if tracker.violations() != 0 {
        return Err(format!("{} safety violations", tracker.violations()));
    }
    if Tr::KIND != TrackerKind::Nil && residual != 0 {
        return Err(format!("{residual} blocks unreclaimed after drain"));
    }
    Ok(format!("{ops} ops"))
}

fn seq_stack<Tr: Build>(opts: &OracleOptions) -> Verdict {
    let stack = TreiberStack::new(Tr::build(oracle_config::<Tr>(opts)).map_err(err)?);
    let mut model = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 5);
    {
        let mut h = stack.register().map_err(err)?;
        for i in 0..opts.sequential_ops {
            if rng.gen_bool(0.5) {
                let v = rng.gen();
                stack.push(&mut h, v);
                model.push(v);
            } else {
                let (got, want) = (stack.pop(&mut h), model.pop());
                if got != want {
                    return Err(format!("op {i}: pop returned {got:?}, model {want:?}"));
                }
            }
        }
        while let Some(want) = model.pop() {
            if stack.pop(&mut h) != Some(want) {
                return Err("final drain differs".into());
            }
        }
    }
    finish(stack.tracker(), opts.sequential_ops)
}

fn seq_queue<Tr: Build>(opts: &OracleOptions) -> Verdict {
    let queue = KpQueue::new(Tr::build(oracle_config::<Tr>(opts)).map_err(err)?).map_err(err)?;
    let mut model = VecDeque::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 6);
    {
        let mut h = queue.register().map_err(err)?;
        for i in 0..opts.sequential_ops {
            if rng.gen_bool(0.5) {
                let v = rng.gen();
                queue.enqueue(&mut h, v);
                model.push_back(v);
            } else {
                let (got, want) = (queue.dequeue(&mut h), model.pop_front());
                if got != want {
                    return Err(format!("op {i}: dequeue returned {got:?}, model {want:?}"));
                }
            }
        }
        while let Some(want) = model.pop_front() {
            if queue.dequeue(&mut h) != Some(want) {
                return Err("final drain differs".into());
            }
        }
    }
    finish(queue.tracker(), opts.sequential_ops)
}

/// Keyed structures share one model.
trait SeqMap: Sized {
    type Tr: Build;
    fn make(tr: Self::Tr) -> Result<Self>;
    fn tracker_ref(&self) -> &Self::Tr;
    fn handle(&self) -> Result<Handle<'_, Self::Tr>>;
    fn insert(&self, h: &mut Handle<'_, Self::Tr>, k: u64, v: u64) -> bool;
    fn remove(&self, h: &mut Handle<'_, Self::Tr>, k: u64) -> Option<u64>;
    fn get(&self, h: &mut Handle<'_, Self::Tr>, k: u64) -> Option<u64>;
    fn put(&self, h: &mut Handle<'_, Self::Tr>, k: u64, v: u64) -> Option<u64>;
    fn all(&mut self) -> Vec<(u64, u64)>;
}

macro_rules! seq_map_impl {
    ($ty:ident, $make:expr) => {
        impl<Tr: Build> SeqMap for $ty<Tr> {
            type Tr = Tr;
            fn make(tr: Tr) -> Result<Self> {
                $make(tr)
            }
            fn tracker_ref(&self) -> &Tr {
                self.tracker()
            }
            fn handle(&self) -> Result<Handle<'_, Tr>> {
                self.register()
            }
            fn insert(&self, h: &mut Handle<'_, Tr>, k: u64, v: u64) -> bool {
                $ty::insert(self, h, k, v)
            }
            fn remove(&self, h: &mut Handle<'_, Tr>, k: u64) -> Option<u64> {
                $ty::remove(self, h, k)
            }
            fn get(&self, h: &mut Handle<'_, Tr>, k: u64) -> Option<u64> {
                $ty::get(self, h, k)
            }
            fn put(&self, h: &mut Handle<'_, Tr>, k: u64, v: u64) -> Option<u64> {
                $ty::put(self, h, k, v)
            }
            fn all(&mut self) -> Vec<(u64, u64)> {
                self.entries()
            }
        }
    };
}

seq_map_impl!(HarrisList, |tr| Ok(HarrisList::new(tr)));
seq_map_impl!(HashMap, |tr| HashMap::with_buckets(tr, 7));

fn seq_map<M: SeqMap>(opts: &OracleOptions) -> Verdict {
    let mut map = M::make(M::Tr::build(oracle_config::<M::Tr>(opts)).map_err(err)?).map_err(err)?;
    let mut model = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 7);
    {
        let mut h = map.handle().map_err(err)?;
        for i in 0..opts.sequential_ops {
            let k = rng.gen_range(0..64);
            let v = rng.gen_range(0..1_000);
            let (got, want) = match rng.gen_range(0..4) {
                0 => {
                    let fresh = !model.contains_key(&k);
                    if fresh {
                        model.insert(k, v);
                    }
                    (map.insert(&mut h, k, v).then_some(0), fresh.then_some(0))
                }
                1 => (map.remove(&mut h, k), model.remove(&k)),
                2 => (map.get(&mut h, k), model.get(&k).copied()),
                _ => (map.put(&mut h, k, v), model.insert(k, v)),
            };
            if got != want {
                return Err(format!("op {i} on key {k}: got {got:?}, model {want:?}"));
            }
        }
    }
    let entries = map.all();
    if !entries.iter().copied().eq(model.into_iter()) {
        return Err("final contents differ from the model".into());
    }
    finish(map.tracker_ref(), opts.sequential_ops)
}

// ---- linearizability ----

/// One random history: `threads` threads, each issuing up to `ops` calls.
pub fn queue_history<Tr: Build>(threads: usize, ops: usize, seed: u64, config: TrackerConfig) -> Result<Vec<Call>> {
    let queue = KpQueue::new(Tr::build(config)?)?;
    let clock = HistoryClock::new();
    let calls = Mutex::new(Vec::new());
    let handles = (0..threads).map(|_| queue.register()).collect::<Result<Vec<_>>>()?;
    thread::scope(|s| {
        for (t, mut h) in handles.into_iter().enumerate() {
            let (queue, clock, calls) = (&queue, &clock, &calls);
            s.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let mut mine = Vec::new();
                for i in 0..rng.gen_range(1..=ops) {
                    if rng.gen_bool(0.3) {
                        thread::yield_now();
                    }
                    let invoke = clock.tick();
                    let op = if rng.gen_bool(0.5) {
                        let v = (t * 1_000 + i) as u64;
                        queue.enqueue(&mut h, v);
                        QueueOp::Enqueue(v)
                    } else {
                        QueueOp::Dequeue(queue.dequeue(&mut h))
                    };
                    mine.push(Call { thread: t, op, invoke, response: clock.tick() });
                }
                calls.lock().unwrap().extend(mine);
            });
        }
    });
    Ok(calls.into_inner().unwrap())
}

fn kp_histories(opts: &OracleOptions) -> Verdict {
    let mut calls = 0;
    for i in 0..opts.histories {
        let mut cfg = TrackerConfig::new(3).with_canaries(true);
        cfg.mutation = opts.mutation;
        // Every other history runs entirely on the slow path.
        cfg.force_slow_path = i % 2 == 1;
        let h = queue_history::<Wfe>(3, 6, opts.seed.wrapping_add(i as u64), cfg).map_err(err)?;
        calls += h.len();
        if !is_linearizable_queue(&h) {
            return Err(format!("history {i} rejected: {h:?}"));
        }
    }
    Ok(format!("{} histories, {calls} calls", opts.histories))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> OracleOptions {
        OracleOptions { instances: 300, differential_ops: 2_000, histories: 30, sequential_ops: 500, ..Default::default() }
    }

    #[test]
    fn small_suite_passes() {
        let r = run_oracle_suite(&small());
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn scan_order_mutation_is_caught() {
        let r = run_oracle_suite(&OracleOptions { mutation: Mutation::ScanNormalsFirst, ..small() });
        assert!(r.failures().any(|c| c.name.contains("hand-over")), "{r}");
    }

    #[test]
    fn tag_check_mutation_is_caught() {
        let r = run_oracle_suite(&OracleOptions { mutation: Mutation::SkipHelperTagCheck, ..small() });
        assert!(r.failures().any(|c| c.name.contains("stale helper")), "{r}");
    }
}
