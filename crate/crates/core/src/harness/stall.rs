use std::sync::atomic::{AtomicBool, AtomicPtr, Ordering::Relaxed, Ordering::SeqCst};
use std::thread;
use std::time::{Duration, Instant};

use super::Build;
use crate::tracker::{Block, TrackerConfig, TrackerKind};
use crate::{with_tracker, Error, Result};

#[derive(Clone, Debug)]
pub struct StallConfig {
    pub tracker: TrackerKind,
    /// Total threads: one staller, the rest churn.
    pub threads: usize,
    pub duration: Duration,
    /// Normal operation before the staller takes its protection.
    pub warmup: Duration,
    /// Sampling window; each sample is the maximum seen in its window.
    pub window: Duration,
    /// Retirements per second per churn thread.
    pub churn_rate: u64,
    pub tracker_config: TrackerConfig,
}

impl StallConfig {
    pub fn new(tracker: TrackerKind, duration: Duration) -> Self {
        Self {
            tracker,
            threads: 4,
            duration,
            warmup: Duration::from_secs(1),
            window: Duration::from_millis(100),
            churn_rate: 20_000,
            tracker_config: TrackerConfig::new(1),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StallReport {
    pub tracker: TrackerKind,
    pub window: Duration,
    pub stall_started: Duration,
    /// Window maxima of the unreclaimed count; entry `i` ends at `(i + 1) * window`.
    pub samples: Vec<i64>,
    pub retired: u64,
    pub violations: u64,
    pub residual: i64,
}

impl StallReport {
    /// The sample of the window ending closest to `t`.
    pub fn at(&self, t: Duration) -> i64 {
        let i = (t.as_secs_f64() / self.window.as_secs_f64()).round() as usize;
        self.samples[i.clamp(1, self.samples.len()) - 1]
    }

    /// `(seconds, unreclaimed)` pairs.
    pub fn series(&self) -> impl Iterator<Item = (f64, i64)> + '_ {
        let w = self.window.as_secs_f64();
        self.samples.iter().enumerate().map(move |(i, &v)| ((i + 1) as f64 * w, v))
    }
}

/// One thread protects a block and then sleeps; the others keep swapping
/// fresh blocks into a shared cell and retiring the old ones.
pub fn run_stall_experiment(cfg: &StallConfig) -> Result<StallReport> {
    if cfg.threads < 2 {
        return Err(Error::Usage("the stall experiment needs at least 2 threads".into()));
    }
    if cfg.window.is_zero() || cfg.duration < cfg.window {
        return Err(Error::Usage("stall duration must cover at least one sampling window".into()));
    }
    with_tracker!(cfg.tracker, T => stall::<T>(cfg))
}

fn stall<Tr: Build>(cfg: &StallConfig) -> Result<StallReport> {
    let mut tc = cfg.tracker_config.clone();
    tc.max_threads = cfg.threads;
    let tracker = Tr::build(tc)?;
    let cell: AtomicPtr<Block<u64>> = AtomicPtr::default();
    {
        let mut h = tracker.register()?;
        cell.store(h.alloc(0), SeqCst);
    }
    let mut handles = (0..cfg.threads).map(|_| tracker.register()).collect::<Result<Vec<_>>>()?;
    let mut staller = handles.remove(0);
    let stop = AtomicBool::new(false);
    let start = Instant::now();

    let (samples, retired) = thread::scope(|s| {
        let churners: Vec<_> = handles
            .into_iter()
            .map(|mut h| {
                let (cell, stop) = (&cell, &stop);
                s.spawn(move || {
                    let mut n = 0u64;
                    let began = Instant::now();
                    while !stop.load(Relaxed) {
                        h.start_op();
                        // SAFETY: `cell` outlives every handle.
                        let cur = unsafe { h.get_protected(0, cell, None) };
                        h.check(cur);
                        let fresh = h.alloc(n);
                        let old = cell.swap(fresh, SeqCst);
                        // SAFETY: swapped out by this thread alone.
                        unsafe { h.retire(old) };
                        h.end_op();
                        n += 1;
                        if n % 64 == 0 {
                            let due = Duration::from_secs_f64(n as f64 / cfg.churn_rate as f64);
                            if let Some(ahead) = due.checked_sub(began.elapsed()) {
                                thread::sleep(ahead);
                            }
                        }
                    }
                    n
                })
            })
            .collect();
        let stall_thread = {
            let (cell, stop) = (&cell, &stop);
            s.spawn(move || {
                thread::sleep(cfg.warmup);
                staller.start_op();
                // SAFETY: `cell` outlives every handle.
                let held = unsafe { staller.get_protected(0, cell, None) };
                log::info!("staller holds {:p} from t={:?}", held, start.elapsed());
                while !stop.load(Relaxed) {
                    thread::sleep(Duration::from_millis(5));
                }
                staller.check(held);
                staller.end_op();
            })
        };

        let mut samples = Vec::new();
        let mut window_max = 0i64;
        let mut window_end = cfg.window;
        loop {
            let now = start.elapsed();
            window_max = window_max.max(tracker.unreclaimed());
            if now >= window_end {
                samples.push(window_max);
                window_max = tracker.unreclaimed();
                window_end += cfg.window;
                if window_end > cfg.duration + cfg.window / 2 {
                    break;
                }
            }
            thread::sleep(Duration::from_millis(2));
        }
        stop.store(true, Relaxed);
        let retired: u64 = churners.into_iter().map(|c| c.join().expect("churn thread panicked")).sum();
        stall_thread.join().expect("stalled thread panicked");
        (samples, retired)
    });

    {
        let mut h = tracker.register()?;
        let last = cell.swap(std::ptr::null_mut(), SeqCst);
        // SAFETY: unlinked; every other handle is gone.
        unsafe { h.retire(last) };
    }
    let residual = super::drain(&tracker)?;
    Ok(StallReport {
        tracker: cfg.tracker,
        window: cfg.window,
        stall_started: cfg.warmup,
        samples,
        retired,
        violations: tracker.violations(),
        residual,
    })
}
