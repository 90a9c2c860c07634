use std::fs::OpenOptions;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::BenchResult;
use crate::{Error, Result};

/// Column order of the benchmark CSV.
pub const CSV_COLUMNS: [&str; 13] = [
    "tracker",
    "rideable",
    "workload",
    "threads",
    "repeat",
    "seed",
    "ops_total",
    "throughput_ops_per_sec",
    "unreclaimed_avg_per_op",
    "slowpath_fraction",
    "slowpath_loop_max",
    "helper_outer_max",
    "helper_inner_max",
];

pub(crate) fn csv_record(r: &BenchResult) -> [String; 13] {
    [
        r.tracker.name().to_string(),
        r.rideable.name().to_string(),
        r.workload.name().to_string(),
        r.threads.to_string(),
        r.repeat.to_string(),
        r.seed.to_string(),
        r.ops_total.to_string(),
        format!("{:.3}", r.throughput),
        format!("{:.6}", r.unreclaimed_avg_per_op),
        format!("{:.9}", r.stats.slow_path_fraction()),
        r.stats.slow_loop_max.to_string(),
        r.stats.helper_outer_max.to_string(),
        r.stats.helper_inner_max.to_string(),
    ]
}

/// Appends `rows` to the CSV at `path`, writing the header only when the
/// file is new or empty. An existing file with a different header is refused.
pub fn append_csv(path: &Path, rows: &[BenchResult]) -> Result<()> {
    let has_content = path.metadata().map(|m| m.len() > 0).unwrap_or(false);
    if has_content {
        let mut first = String::new();
        BufReader::new(std::fs::File::open(path)?).read_line(&mut first)?;
        if first.trim_end() != CSV_COLUMNS.join(",") {
            return Err(Error::Usage(format!("{} has a different column layout", path.display())));
        }
    }
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if !has_content {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        w.write_record(csv_record(r))?;
    }
    w.flush()?;
    Ok(())
}
