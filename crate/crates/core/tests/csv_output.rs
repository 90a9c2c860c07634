use std::time::Duration;

use wfe_reclaim::harness::{append_csv, run_benchmark, BenchConfig, CSV_COLUMNS};
use wfe_reclaim::rideables::RideableKind;
use wfe_reclaim::TrackerKind;

fn fixed(tracker: TrackerKind, seed: u64) -> BenchConfig {
    BenchConfig {
        interval: Duration::from_secs(1),
        rideable: RideableKind::HashMap,
        threads: 1,
        tracker,
        prefill: 500,
        key_range: 1000,
        seed,
        ops_per_thread: Some(5_000),
        pin_threads: false,
        ..BenchConfig::default()
    }
}

/// Every column except throughput, which depends on wall time.
fn stable_columns(path: &std::path::Path) -> Vec<Vec<String>> {
    let throughput = CSV_COLUMNS.iter().position(|c| *c == "throughput_ops_per_sec").unwrap();
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().enumerate().filter(|(i, _)| *i != throughput).map(|(_, f)| f.to_string()).collect())
        .collect()
}

#[test]
fn header_written_once_and_rows_appended() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let rows = run_benchmark(&fixed(TrackerKind::Wfe, 1)).unwrap();
    append_csv(&path, &rows).unwrap();
    append_csv(&path, &rows).unwrap();
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CSV_COLUMNS);
    let records: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(&records[0][0], "WFE");
    assert_eq!(&records[0][6], "5000");
}

#[test]
fn foreign_header_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("other.csv");
    std::fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
    let rows = run_benchmark(&fixed(TrackerKind::He, 1)).unwrap();
    assert!(append_csv(&path, &rows).is_err());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b,c\n1,2,3\n");
}

#[test]
fn single_thread_fixed_ops_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for tracker in [TrackerKind::Wfe, TrackerKind::Ebr] {
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        let _ = std::fs::remove_file(&a);
        let _ = std::fs::remove_file(&b);
        append_csv(&a, &run_benchmark(&fixed(tracker, 42)).unwrap()).unwrap();
        append_csv(&b, &run_benchmark(&fixed(tracker, 42)).unwrap()).unwrap();
        assert_eq!(stable_columns(&a), stable_columns(&b), "{tracker}");
    }
}
