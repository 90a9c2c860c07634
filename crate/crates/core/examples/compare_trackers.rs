//! The same short hashmap workload under every tracker.
//!
//! `cargo run --release --example compare_trackers`

use std::time::Duration;

use wfe_reclaim::harness::{run_benchmark, BenchConfig, Workload};
use wfe_reclaim::rideables::RideableKind;
use wfe_reclaim::TrackerKind;

fn main() -> wfe_reclaim::Result<()> {
    println!("{:<5} {:>12} {:>14} {:>9}", "", "ops/s", "unreclaimed", "residual");
    for tracker in TrackerKind::ALL {
        let cfg = BenchConfig {
            interval: Duration::from_millis(500),
            rideable: RideableKind::HashMap,
            workload: Workload::WriteHeavy,
            threads: 4,
            tracker,
            ..BenchConfig::default()
        };
        for r in run_benchmark(&cfg)? {
            println!("{:<5} {:>12.0} {:>14.1} {:>9}", tracker, r.throughput, r.unreclaimed_avg_per_op, r.residual);
        }
    }
    Ok(())
}
