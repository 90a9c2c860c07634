//! Appends benchmark rows to a CSV file in the column order the plotting
//! tool expects, then prints the file.

use wfe_reclaim::harness::{append_csv, run_benchmark, BenchConfig};
use wfe_reclaim::TrackerKind;

fn main() -> wfe_reclaim::Result<()> {
    let path = std::env::temp_dir().join("wfe_reclaim_example.csv");
    let _ = std::fs::remove_file(&path);
    for tracker in [TrackerKind::He, TrackerKind::Wfe] {
        let cfg = BenchConfig {
            tracker,
            threads: 2,
            repeats: 2,
            prefill: 1_000,
            key_range: 2_000,
            ops_per_thread: Some(20_000),
            ..BenchConfig::default()
        };
        append_csv(&path, &run_benchmark(&cfg)?)?;
    }
    print!("{}", std::fs::read_to_string(&path)?);
    Ok(())
}
