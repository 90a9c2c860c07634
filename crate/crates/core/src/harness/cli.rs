//! Command line front end shared by the `bench` binary and the examples.
//!
//! ```text
//! bench -i <sec> -m <rideable> -t <threads> -r <repeats> -o <csv> -d tracker=<NAME> [-d key=value ...] [-v]
//! ```
//!
//! `-d` keys: `tracker`, `workload` (50-50 or 90-10), `prefill`, `range`,
//! `seed`, `ops` (fixed operations per thread instead of `-i`), `nu`,
//! `scan_threshold`, `fastpath_attempts`, `max_hes`, `force_slow`,
//! `canaries`, `advancer`, `pin`, `warmup` (stall mode, seconds) and
//! `mode` (`bench`, `stall` or `oracle`).
//!
//! Exit codes: 0 success, 1 usage error, 2 a safety, drain, loop-bound or
//! oracle check failed.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use clap::{ArgAction, Parser};

use super::oracle::{run_oracle_suite, OracleOptions};
use super::{append_csv, run_benchmark, run_stall_experiment, BenchConfig, BenchResult, StallConfig};
use crate::tracker::TrackerKind;
use crate::wfe::Mutation;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK: i32 = 2;

#[derive(Parser, Debug, Clone)]
#[command(name = "bench", about = "Memory reclamation benchmark, stall experiment and oracle suite")]
pub struct Args {
    /// Seconds per repeat (stall mode: total run time).
    #[arg(short = 'i', default_value_t = 10.0)]
    pub interval: f64,
    /// Rideable: 0 stack, 1 list, 2 kpqueue, 3 hashmap (or the name).
    #[arg(short = 'm', default_value = "3")]
    pub rideable: String,
    #[arg(short = 't', default_value_t = 4)]
    pub threads: usize,
    /// Repeat count.
    #[arg(short = 'r', default_value_t = 1)]
    pub repeats: usize,
    /// CSV file to append result rows to.
    #[arg(short = 'o')]
    pub output: Option<PathBuf>,
    /// key=value setting; may be repeated.
    #[arg(short = 'd', value_parser = parse_define)]
    pub defines: Vec<(String, String)>,
    /// More logging (-v info, -vv debug).
    #[arg(short = 'v', action = ArgAction::Count)]
    pub verbose: u8,
}

fn parse_define(s: &str) -> std::result::Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_ascii_lowercase(), v.trim().to_string())),
        _ => Err(format!("expected key=value, got `{s}`")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Bench,
    Stall,
    Oracle,
}

/// Everything a run needs, resolved from the flags.
#[derive(Clone, Debug)]
pub struct Plan {
    pub mode: Mode,
    pub bench: BenchConfig,
    pub stall_warmup: Option<Duration>,
    pub oracle: OracleOptions,
    pub output: Option<PathBuf>,
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Usage(format!("bad value `{v}` for -d {key}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Usage(format!("bad value `{v}` for -d {key} (expected true/false)"))),
    }
}

fn seconds(key: &str, v: f64) -> Result<Duration> {
    Duration::try_from_secs_f64(v).map_err(|_| Error::Usage(format!("bad duration {v} for {key}")))
}

impl Args {
    pub fn plan(&self) -> Result<Plan> {
        let mut b = BenchConfig {
            interval: seconds("-i", self.interval)?,
            rideable: self.rideable.parse()?,
            threads: self.threads,
            repeats: self.repeats,
            ..BenchConfig::default()
        };
        let mut oracle = OracleOptions::default();
        let mut mode = Mode::Bench;
        let mut stall_warmup = None;
        for (k, v) in &self.defines {
            let tc = &mut b.tracker_config;
            match k.as_str() {
                "mode" => {
                    mode = match v.to_ascii_lowercase().as_str() {
                        "bench" => Mode::Bench,
                        "stall" => Mode::Stall,
                        "oracle" => Mode::Oracle,
                        _ => return Err(Error::Usage(format!("unknown mode `{v}` (bench, stall, oracle)"))),
                    }
                }
                "tracker" => b.tracker = v.parse()?,
                "workload" => b.workload = v.parse()?,
                "prefill" => b.prefill = value(k, v)?,
                "range" => b.key_range = value(k, v)?,
                "seed" => {
                    b.seed = value(k, v)?;
                    oracle.seed = b.seed;
                }
                "ops" => b.ops_per_thread = Some(value(k, v)?),
                "advancer" => b.era_advancer = flag(k, v)?,
                "pin" => b.pin_threads = flag(k, v)?,
                "nu" => tc.epoch_freq = value(k, v)?,
                "scan_threshold" => tc.scan_threshold = value(k, v)?,
                "fastpath_attempts" => tc.fastpath_attempts = value(k, v)?,
                "max_hes" => tc.max_hes = value(k, v)?,
                "force_slow" => tc.force_slow_path = flag(k, v)?,
                "canaries" => tc.canaries = flag(k, v)?,
                "warmup" => stall_warmup = Some(seconds(k, value(k, v)?)?),
                "mutation" => {
                    tc.mutation = match v.as_str() {
                        "none" => Mutation::None,
                        "scan_normals_first" => Mutation::ScanNormalsFirst,
                        "skip_helper_tag_check" => Mutation::SkipHelperTagCheck,
                        _ => return Err(Error::Usage(format!("unknown mutation `{v}`"))),
                    };
                    oracle.mutation = tc.mutation;
                }
                _ => return Err(Error::Usage(format!("unknown -d key `{k}`"))),
            }
        }
        match mode {
            Mode::Bench => b.validate()?,
            Mode::Stall if self.output.is_some() => {
                return Err(Error::Usage("-o is only meaningful for benchmark rows".into()))
            }
            _ => {}
        }
        Ok(Plan { mode, bench: b, stall_warmup, oracle, output: self.output.clone() })
    }
}

/// Problems with a finished benchmark row that make the run fail.
pub fn row_problems(r: &BenchResult, total_threads: usize) -> Vec<String> {
    let mut out = Vec::new();
    if r.violations > 0 {
        out.push(format!("{} safety violations", r.violations));
    }
    if r.tracker != TrackerKind::Nil && r.residual != 0 {
        out.push(format!("{} blocks unreclaimed after drain", r.residual));
    }
    if r.tracker == TrackerKind::Wfe {
        let (slow, outer, inner) = r.loop_maxima();
        let n = total_threads as u64;
        if slow > n || outer > n || inner > 2 {
            out.push(format!("loop maxima {slow}/{outer}/{inner} exceed the bounds ({n}/{n}/2)"));
        }
    }
    out
}

/// Executes a resolved plan, writing human-readable output to `out`.
/// Returns the exit code.
pub fn execute(plan: &Plan, out: &mut dyn Write) -> Result<i32> {
    match plan.mode {
        Mode::Bench => {
            let rows = run_benchmark(&plan.bench)?;
            if let Some(path) = &plan.output {
                append_csv(path, &rows)?;
            }
            let mut code = EXIT_OK;
            for r in &rows {
                let (slow, outer, inner) = r.loop_maxima();
                writeln!(
                    out,
                    "{} {} {} t={} repeat={} ops={} {:.0} ops/s unreclaimed/op={:.3} slowpath={:.6} loops={slow}/{outer}/{inner}",
                    r.tracker,
                    r.rideable,
                    r.workload,
                    r.threads,
                    r.repeat,
                    r.ops_total,
                    r.throughput,
                    r.unreclaimed_avg_per_op,
                    r.stats.slow_path_fraction(),
                )?;
                for p in row_problems(r, plan.bench.total_threads()) {
                    writeln!(out, "FAIL repeat {}: {p}", r.repeat)?;
                    code = EXIT_CHECK;
                }
            }
            Ok(code)
        }
        Mode::Stall => {
            let mut cfg = StallConfig::new(plan.bench.tracker, plan.bench.interval);
            cfg.threads = plan.bench.threads;
            cfg.tracker_config = plan.bench.tracker_config.clone();
            if let Some(w) = plan.stall_warmup {
                cfg.warmup = w;
            }
            let report = run_stall_experiment(&cfg)?;
            writeln!(out, "seconds,unreclaimed")?;
            for (t, v) in report.series() {
                writeln!(out, "{t:.1},{v}")?;
            }
            let mut code = EXIT_OK;
            if report.violations > 0 {
                writeln!(out, "FAIL {} safety violations", report.violations)?;
                code = EXIT_CHECK;
            }
            if report.tracker != TrackerKind::Nil && report.residual != 0 {
                writeln!(out, "FAIL {} blocks unreclaimed after drain", report.residual)?;
                code = EXIT_CHECK;
            }
            Ok(code)
        }
        Mode::Oracle => {
            let report = run_oracle_suite(&plan.oracle);
            write!(out, "{report}")?;
            Ok(if report.passed() { EXIT_OK } else { EXIT_CHECK })
        }
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match args.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    let result = args.plan().and_then(|plan| execute(&plan, &mut std::io::stdout().lock()));
    match result {
        Ok(code) => code,
        Err(e @ (Error::Usage(_) | Error::Config(_))) => {
            eprintln!("bench: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("bench: {e}");
            EXIT_CHECK
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Workload;
    use crate::rideables::RideableKind;

    fn plan(args: &[&str]) -> Result<Plan> {
        let mut v = vec!["bench"];
        v.extend_from_slice(args);
        Args::try_parse_from(v).map_err(|e| Error::Usage(e.to_string()))?.plan()
    }

    #[test]
    fn artifact_command_line_parses() {
        let p = plan(&["-i", "10", "-m", "3", "-v", "-r", "1", "-o", "hashmap.csv", "-t", "4", "-d", "tracker=WFE"]).unwrap();
        assert_eq!(p.mode, Mode::Bench);
        assert_eq!(p.bench.rideable, RideableKind::HashMap);
        assert_eq!(p.bench.tracker, TrackerKind::Wfe);
        assert_eq!(p.bench.threads, 4);
        assert_eq!(p.bench.repeats, 1);
        assert_eq!(p.bench.interval, Duration::from_secs(10));
    }

    #[test]
    fn overrides_land_in_the_tracker_config() {
        let p = plan(&["-d", "nu=7", "-d", "scan_threshold=3", "-d", "force_slow=true", "-d", "workload=90-10"]).unwrap();
        assert_eq!(p.bench.tracker_config.epoch_freq, 7);
        assert_eq!(p.bench.tracker_config.scan_threshold, 3);
        assert!(p.bench.tracker_config.force_slow_path);
        assert_eq!(p.bench.workload, Workload::ReadMostly);
    }

    #[test]
    fn bad_names_are_usage_errors() {
        assert!(matches!(plan(&["-d", "tracker=RCU"]), Err(Error::Usage(_))));
        assert!(matches!(plan(&["-m", "9"]), Err(Error::Usage(_))));
        assert!(matches!(plan(&["-d", "colour=blue"]), Err(Error::Usage(_))));
        assert!(matches!(plan(&["-d", "novalue"]), Err(Error::Usage(_))));
        assert!(matches!(plan(&["-m", "0", "-d", "workload=90-10"]), Err(Error::Usage(_))));
    }

    #[test]
    fn exit_code_for_usage_error() {
        assert_eq!(main_from(["bench", "-d", "tracker=RCU"]), EXIT_USAGE);
        assert_eq!(main_from(["bench", "--bogus"]), EXIT_USAGE);
    }
}
