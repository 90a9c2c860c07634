//! Benchmark, stress and verification harness.
//!
//! * [`run_benchmark`]: timed (or fixed-count) mixed workloads, one
//!   [`BenchResult`] per repeat, optionally appended to a CSV file.
//! * [`run_stall_experiment`]: one thread stalls while holding protection,
//!   the rest churn; reports the unreclaimed count over time.
//! * [`run_oracle_suite`]: brute-force oracles, differential traces,
//!   sequential models, linearizability and schedule-controlled scenarios.
//! * [`schedule`]: a deterministic interleaving driver for the WFE pause points.

mod bench;
pub mod cli;
pub mod lincheck;
pub mod oracle;
mod report;
pub mod scenarios;
pub mod schedule;
mod stall;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::Rng;

use crate::rideables::{Op, RideableKind};
use crate::tracker::{Tracker, TrackerConfig, TrackerKind, TrackerStats};
use crate::{Ebr, Error, He, Hp, Ibr, Leak, Result, Wfe};

pub use bench::{drain, run_benchmark, run_repeat};
pub use oracle::{run_oracle_suite, OracleReport};
pub use report::{append_csv, CSV_COLUMNS};
pub use stall::{run_stall_experiment, StallConfig, StallReport};

/// Trackers the harness can build from a bare configuration.
pub trait Build: Tracker {
    fn build(config: TrackerConfig) -> Result<Self>;
}

macro_rules! impl_build {
    ($($t:ty),*) => {$(
        impl Build for $t {
            fn build(config: TrackerConfig) -> Result<Self> {
                <$t>::new(config)
            }
        }
    )*};
}

impl_build!(Wfe, He, Hp, Ebr, Ibr, Leak);

/// Runs `$body` with the type alias `$t` bound to the tracker type for `$kind`.
#[macro_export]
#[doc(hidden)]
macro_rules! with_tracker {
    ($kind:expr, $t:ident => $body:expr) => {
        match $kind {
            $crate::TrackerKind::Wfe => {
                type $t = $crate::Wfe;
                $body
            }
            $crate::TrackerKind::He => {
                type $t = $crate::He;
                $body
            }
            $crate::TrackerKind::Hp => {
                type $t = $crate::Hp;
                $body
            }
            $crate::TrackerKind::Ebr => {
                type $t = $crate::Ebr;
                $body
            }
            $crate::TrackerKind::Ibr => {
                type $t = $crate::Ibr;
                $body
            }
            $crate::TrackerKind::Nil => {
                type $t = $crate::Leak;
                $body
            }
        }
    };
}

/// Operation mix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Workload {
    /// 50% insert, 50% delete (push/pop, enqueue/dequeue for pools).
    WriteHeavy,
    /// 90% get, 10% put. Maps only.
    ReadMostly,
}

impl Workload {
    pub fn name(self) -> &'static str {
        match self {
            Self::WriteHeavy => "50-50",
            Self::ReadMostly => "90-10",
        }
    }

    /// Draws one operation on a key from `0..range`.
    #[inline]
    pub fn sample<R: Rng>(self, rng: &mut R, range: u64) -> Op {
        let key = rng.gen_range(0..range);
        let roll = rng.gen_range(0..100u32);
        match self {
            Self::WriteHeavy if roll < 50 => Op::Insert(key, key),
            Self::WriteHeavy => Op::Remove(key),
            Self::ReadMostly if roll < 90 => Op::Get(key),
            Self::ReadMostly => Op::Put(key, key),
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Workload {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "50-50" | "50/50" | "write" | "write-heavy" => Ok(Self::WriteHeavy),
            "90-10" | "90/10" | "read" | "read-mostly" => Ok(Self::ReadMostly),
            _ => Err(Error::Usage(format!("unknown workload `{s}` (50-50 or 90-10)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub interval: Duration,
    pub rideable: RideableKind,
    pub threads: usize,
    pub repeats: usize,
    pub tracker: TrackerKind,
    pub workload: Workload,
    pub prefill: usize,
    pub key_range: u64,
    pub seed: u64,
    /// Run exactly this many operations per thread instead of a timed interval.
    pub ops_per_thread: Option<u64>,
    /// Adds a thread that does nothing but advance the era (with helping).
    pub era_advancer: bool,
    pub pin_threads: bool,
    /// Template for the tracker; `max_threads` is derived from the thread count.
    pub tracker_config: TrackerConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            interval: Duration::from_secs(10),
            rideable: RideableKind::HashMap,
            threads: 4,
            repeats: 1,
            tracker: TrackerKind::Wfe,
            workload: Workload::WriteHeavy,
            prefill: 50_000,
            key_range: 100_000,
            seed: 0,
            ops_per_thread: None,
            era_advancer: false,
            pin_threads: true,
            tracker_config: TrackerConfig::new(1),
        }
    }
}

impl BenchConfig {
    /// All threads that register with the tracker during measurement.
    pub fn total_threads(&self) -> usize {
        self.threads + usize::from(self.era_advancer)
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        let mut c = self.tracker_config.clone();
        c.max_threads = self.total_threads();
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Usage("thread count must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Usage("repeat count must be at least 1".into()));
        }
        if self.key_range == 0 {
            return Err(Error::Usage("key range must be at least 1".into()));
        }
        if self.rideable.is_map() && self.prefill as u64 > self.key_range {
            return Err(Error::Usage("prefill exceeds the key range".into()));
        }
        if self.workload == Workload::ReadMostly && !self.rideable.is_map() {
            return Err(Error::Usage(format!("{} has no read-mostly mix", self.rideable)));
        }
        self.tracker_config().validate()
    }
}

/// One measured repeat.
#[derive(Clone, Debug)]
pub struct BenchResult {
    pub tracker: TrackerKind,
    pub rideable: RideableKind,
    pub workload: Workload,
    pub threads: usize,
    pub repeat: usize,
    pub seed: u64,
    pub ops_total: u64,
    /// Per kind: insert, remove, get, put.
    pub op_counts: [u64; 4],
    /// Operations that found or changed something, same order.
    pub op_hits: [u64; 4],
    pub elapsed: Duration,
    pub throughput: f64,
    pub unreclaimed_avg_per_op: f64,
    pub stats: TrackerStats,
    pub violations: u64,
    /// Unreclaimed count after the quiescent drain; 0 unless the tracker leaks.
    pub residual: i64,
}

impl BenchResult {
    /// `(slow loop, helper outer, helper inner)` maxima.
    pub fn loop_maxima(&self) -> (u64, u64, u64) {
        (self.stats.slow_loop_max, self.stats.helper_outer_max, self.stats.helper_inner_max)
    }
}
