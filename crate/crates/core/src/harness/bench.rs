use std::sync::atomic::{AtomicBool, Ordering::Relaxed};
use std::sync::Barrier;
use std::thread;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BenchConfig, BenchResult, Build};
use crate::rideables::{HarrisList, HashMap, KpQueue, Op, Rideable, RideableKind, TreiberStack};
use crate::tracker::{Handle, Tracker};
use crate::{with_tracker, Result};

/// Runs every repeat of `cfg` and returns one result per repeat.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchResult>> {
    cfg.validate()?;
    (0..cfg.repeats).map(|r| run_repeat(cfg, r)).collect()
}

/// Runs repeat number `repeat` of `cfg` on a fresh tracker and structure.
/// The repeat's seed is `cfg.seed + repeat`.
pub fn run_repeat(cfg: &BenchConfig, repeat: usize) -> Result<BenchResult> {
    cfg.validate()?;
    with_tracker!(cfg.tracker, T => match cfg.rideable {
        RideableKind::Stack => measure::<TreiberStack<T>>(cfg, repeat),
        RideableKind::List => measure::<HarrisList<T>>(cfg, repeat),
        RideableKind::KpQueue => measure::<KpQueue<T>>(cfg, repeat),
        RideableKind::HashMap => measure::<HashMap<T>>(cfg, repeat),
    })
}

/// Reclaims everything the tracker can once no thread holds protection.
/// Returns the unreclaimed count left over (0 for every reclaiming tracker).
pub fn drain<Tr: Tracker>(tracker: &Tr) -> Result<i64> {
    let mut h = tracker.register()?;
    for _ in 0..8 {
        h.quiesce();
        if tracker.unreclaimed() == 0 {
            break;
        }
    }
    drop(h);
    Ok(tracker.unreclaimed())
}

#[derive(Default)]
struct Tally {
    ops: u64,
    counts: [u64; 4],
    hits: [u64; 4],
    unreclaimed_sum: f64,
    samples: u64,
    // The worker's own run window; the main thread may be descheduled
    // when the barrier opens.
    span: Option<(Instant, Instant)>,
}

fn op_index(op: Op) -> usize {
    match op {
        Op::Insert(..) => 0,
        Op::Remove(_) => 1,
        Op::Get(_) => 2,
        Op::Put(..) => 3,
    }
}

fn thread_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn measure<R: Rideable>(cfg: &BenchConfig, repeat: usize) -> Result<BenchResult>
where
    R::Tr: Build,
{
    let seed = cfg.seed.wrapping_add(repeat as u64);
    let ds = R::build(<R::Tr as Build>::build(cfg.tracker_config())?)?;
    prefill(&ds, cfg, seed)?;

    let handles = (0..cfg.threads).map(|_| ds.register()).collect::<Result<Vec<_>>>()?;
    let advancer = if cfg.era_advancer { Some(ds.register()?) } else { None };
    let stop = AtomicBool::new(false);
    let barrier = Barrier::new(cfg.total_threads() + 1);

    let (tallies, elapsed) = thread::scope(|s| {
        let workers: Vec<_> = handles
            .into_iter()
            .enumerate()
            .map(|(i, h)| {
                let (ds, stop, barrier) = (&ds, &stop, &barrier);
                s.spawn(move || worker(ds, h, cfg, seed, i, stop, barrier))
            })
            .collect();
        let adv = advancer.map(|mut h| {
            let (stop, barrier) = (&stop, &barrier);
            s.spawn(move || {
                barrier.wait();
                let mut n = 0u64;
                while !stop.load(Relaxed) {
                    h.increment_era();
                    n += 1;
                    if n % 64 == 0 {
                        thread::yield_now();
                    }
                }
            })
        });
        barrier.wait();
        if cfg.ops_per_thread.is_none() {
            thread::sleep(cfg.interval);
            stop.store(true, Relaxed);
        }
        let tallies: Vec<Tally> = workers.into_iter().map(|w| w.join().expect("worker panicked")).collect();
        stop.store(true, Relaxed);
        let first = tallies.iter().filter_map(|t| t.span).map(|s| s.0).min();
        let last = tallies.iter().filter_map(|t| t.span).map(|s| s.1).max();
        let elapsed = match (first, last) {
            (Some(a), Some(b)) => b - a,
            _ => Default::default(),
        };
        if let Some(a) = adv {
            a.join().expect("era advancer panicked");
        }
        (tallies, elapsed)
    });

    let tracker = ds.tracker();
    let residual = drain(tracker)?;
    let mut total = Tally::default();
    for t in &tallies {
        total.ops += t.ops;
        total.unreclaimed_sum += t.unreclaimed_sum;
        total.samples += t.samples;
        for k in 0..4 {
            total.counts[k] += t.counts[k];
            total.hits[k] += t.hits[k];
        }
    }
    let result = BenchResult {
        tracker: cfg.tracker,
        rideable: cfg.rideable,
        workload: cfg.workload,
        threads: cfg.threads,
        repeat,
        seed,
        ops_total: total.ops,
        op_counts: total.counts,
        op_hits: total.hits,
        elapsed,
        throughput: total.ops as f64 / elapsed.as_secs_f64().max(f64::MIN_POSITIVE),
        unreclaimed_avg_per_op: if total.samples == 0 { 0.0 } else { total.unreclaimed_sum / total.samples as f64 },
        stats: tracker.core().stats(),
        violations: tracker.violations(),
        residual,
    };
    log::info!(
        "{} {} {} t={} repeat {}: {} ops, {:.0} ops/s, unreclaimed/op {:.1}, slow fraction {:.2e}",
        result.tracker,
        result.rideable,
        result.workload,
        result.threads,
        repeat,
        result.ops_total,
        result.throughput,
        result.unreclaimed_avg_per_op,
        result.stats.slow_path_fraction()
    );
    Ok(result)
}

fn prefill<R: Rideable>(ds: &R, cfg: &BenchConfig, seed: u64) -> Result<()> {
    if cfg.prefill == 0 {
        return Ok(());
    }
    let mut rng = thread_rng(seed, 0);
    let mut keys: Vec<u64> = if cfg.rideable.is_map() {
        index::sample(&mut rng, cfg.key_range as usize, cfg.prefill).into_iter().map(|k| k as u64).collect()
    } else {
        (0..cfg.prefill).map(|_| rng.gen_range(0..cfg.key_range)).collect()
    };
    // Descending keys make every sorted-list insert land at the front.
    keys.sort_unstable_by(|a, b| b.cmp(a));
    let mut h = ds.register()?;
    ds.prefill(&mut h, &keys);
    Ok(())
}

fn worker<R: Rideable>(
    ds: &R,
    mut h: Handle<'_, R::Tr>,
    cfg: &BenchConfig,
    seed: u64,
    index: usize,
    stop: &AtomicBool,
    barrier: &Barrier,
) -> Tally {
    if cfg.pin_threads {
        pin_current_thread(index);
    }
    let mut rng = thread_rng(seed, 1 + index as u64);
    let mut t = Tally::default();
    barrier.wait();
    let start = Instant::now();
    loop {
        match cfg.ops_per_thread {
            Some(n) if t.ops >= n => break,
            None if stop.load(Relaxed) => break,
            _ => {}
        }
        let op = cfg.workload.sample(&mut rng, cfg.key_range);
        let hit = ds.apply(&mut h, op);
        let k = op_index(op);
        t.counts[k] += 1;
        t.hits[k] += u64::from(hit);
        t.ops += 1;
        if t.ops % 32 == 0 {
            t.unreclaimed_sum += ds.tracker().unreclaimed() as f64;
            t.samples += 1;
        }
    }
    t.span = Some((start, Instant::now()));
    t
}

/// Best effort: pins the calling thread to CPU `index % cpus`.
pub(crate) fn pin_current_thread(index: usize) {
    #[cfg(target_os = "linux")]
    {
        let cpus = thread::available_parallelism().map_or(1, |n| n.get());
        let cpu = index % cpus;
        // SAFETY: plain libc calls on a zeroed, correctly sized cpu set.
        let rc = unsafe {
            let mut set: libc::cpu_set_t = std::mem::zeroed();
            libc::CPU_SET(cpu, &mut set);
            libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set)
        };
        if rc == 0 {
            log::debug!("worker {index} pinned to cpu {cpu}");
        } else {
            log::debug!("pinning worker {index} failed: {}", std::io::Error::last_os_error());
        }
    }
    #[cfg(not(target_os = "linux"))]
    log::debug!("thread pinning unsupported here; worker {index} left unpinned");
}

