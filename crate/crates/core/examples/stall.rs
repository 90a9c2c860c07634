//! One thread stalls while protected; compare how EBR, HE and WFE cope.
//!
//! `cargo run --release --example stall`

use std::time::Duration;

use wfe_reclaim::harness::{run_stall_experiment, StallConfig};
use wfe_reclaim::TrackerKind;

fn main() -> wfe_reclaim::Result<()> {
    for tracker in [TrackerKind::Ebr, TrackerKind::He, TrackerKind::Wfe] {
        let mut cfg = StallConfig::new(tracker, Duration::from_secs(4));
        cfg.warmup = Duration::from_millis(500);
        let r = run_stall_experiment(&cfg)?;
        let at = |s: f64| r.at(Duration::from_secs_f64(s));
        println!(
            "{tracker:<4} unreclaimed at 1s {:>7}  2s {:>7}  4s {:>7}",
            at(1.0),
            at(2.0),
            at(4.0)
        );
    }
    Ok(())
}
