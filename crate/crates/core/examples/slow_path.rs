//! Every protected read on the slow path while a dedicated thread keeps
//! advancing the era and helping. Prints the loop maxima next to their bounds.

use wfe_reclaim::harness::{run_benchmark, BenchConfig};
use wfe_reclaim::rideables::RideableKind;

fn main() -> wfe_reclaim::Result<()> {
    let mut cfg = BenchConfig {
        rideable: RideableKind::List,
        threads: 3,
        prefill: 200,
        key_range: 400,
        ops_per_thread: Some(20_000),
        era_advancer: true,
        ..BenchConfig::default()
    };
    cfg.tracker_config.force_slow_path = true;
    cfg.tracker_config.canaries = true;

    let r = &run_benchmark(&cfg)?[0];
    let n = cfg.total_threads();
    let (slow, outer, inner) = r.loop_maxima();
    println!("slow-path cycles   {}", r.stats.slow_path_cycles);
    println!("helps              {}", r.stats.helps);
    println!("slow loop max      {slow} (bound {n})");
    println!("helper outer max   {outer} (bound {n})");
    println!("helper inner max   {inner} (bound 2)");
    println!("violations         {}", r.violations);
    Ok(())
}
