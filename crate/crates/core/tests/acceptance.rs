//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so the criteria execute one
//! after another on an otherwise idle machine and their lines always print.
//! Takes about a quarter of an hour.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use wfe_reclaim::harness::oracle::{run_oracle_suite, OracleOptions};
use wfe_reclaim::harness::{run_repeat, run_stall_experiment, BenchConfig, BenchResult, StallConfig, Workload};
use wfe_reclaim::rideables::RideableKind;
use wfe_reclaim::TrackerKind;

const RECLAIMING: [TrackerKind; 5] =
    [TrackerKind::Wfe, TrackerKind::He, TrackerKind::Hp, TrackerKind::Ebr, TrackerKind::Ibr];

struct Verdicts {
    failed: usize,
}

impl Verdicts {
    fn report(&mut self, name: &str, started: Instant, budget: Option<Duration>, result: Result<String, String>) {
        let took = started.elapsed();
        let result = match (result, budget) {
            (Ok(_), Some(b)) if took > b => Err(format!("took {:.0?}, budget {:.0?}", took, b)),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{:.1}s]", took.as_secs_f64()),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL {name}: {detail} [{:.1}s]", took.as_secs_f64());
            }
        }
    }
}

fn bench(tracker: TrackerKind, rideable: RideableKind, workload: Workload, threads: usize, secs: u64) -> BenchConfig {
    BenchConfig {
        interval: Duration::from_secs(secs),
        tracker,
        rideable,
        workload,
        threads,
        ..BenchConfig::default()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Loop maxima against the bounds for a WFE row with `n` registered threads.
fn within_bounds(r: &BenchResult, n: usize) -> Result<(), String> {
    let (slow, outer, inner) = r.loop_maxima();
    let n = n as u64;
    if slow > n || outer > n || inner > 2 {
        return Err(format!("{} maxima {slow}/{outer}/{inner} exceed {n}/{n}/2", r.rideable));
    }
    Ok(())
}

fn main() -> ExitCode {
    let mut v = Verdicts { failed: 0 };
    let mut wfe_rows: Vec<(BenchResult, usize)> = Vec::new();

    // Safety stress and quiescent drain share the same runs.
    let t = Instant::now();
    let mut safety = Ok(());
    let mut drain = Ok(());
    let mut runs = 0;
    for rideable in RideableKind::ALL {
        for tracker in RECLAIMING {
            let mut cfg = bench(tracker, rideable, Workload::WriteHeavy, 8, 30);
            cfg.tracker_config.canaries = true;
            match run_repeat(&cfg, 0) {
                Ok(r) => {
                    runs += 1;
                    if r.violations != 0 && safety.is_ok() {
                        safety = Err(format!("{tracker}/{rideable}: {} violations", r.violations));
                    }
                    if r.residual != 0 && drain.is_ok() {
                        drain = Err(format!("{tracker}/{rideable}: {} left after drain", r.residual));
                    }
                    if tracker == TrackerKind::Wfe {
                        wfe_rows.push((r, cfg.total_threads()));
                    }
                }
                Err(e) => safety = Err(format!("{tracker}/{rideable}: {e}")),
            }
        }
    }
    v.report(
        "safety stress (4 structures x 5 trackers, 8 threads, 30 s, canaries)",
        t,
        Some(Duration::from_secs(15 * 60)),
        safety.map(|_| format!("{runs} runs, 0 violations")),
    );
    v.report(
        "quiescent drain reaches 0 unreclaimed",
        Instant::now(),
        None,
        drain.map(|_| format!("{runs} runs drained to 0")),
    );

    // Loop bounds under a forced slow path and an era-advancing helper.
    let t = Instant::now();
    let lemma = (|| {
        let mut cycles = 0;
        let mut rows = 0;
        for rideable in RideableKind::ALL {
            let mut cfg = bench(TrackerKind::Wfe, rideable, Workload::WriteHeavy, 8, 0);
            cfg.era_advancer = true;
            cfg.prefill = 500;
            cfg.key_range = 1_000;
            cfg.ops_per_thread = Some(20_000);
            cfg.tracker_config.force_slow_path = true;
            cfg.tracker_config.canaries = true;
            let r = run_repeat(&cfg, 0).map_err(|e| e.to_string())?;
            if r.violations != 0 {
                return Err(format!("{rideable}: {} violations", r.violations));
            }
            within_bounds(&r, cfg.total_threads())?;
            cycles += r.stats.slow_path_cycles;
            rows += 1;
        }
        for (r, n) in &wfe_rows {
            within_bounds(r, *n)?;
        }
        if cycles < 1_000_000 {
            return Err(format!("only {cycles} slow-path cycles"));
        }
        let worst = wfe_rows.iter().map(|(r, _)| r.loop_maxima()).fold((0, 0, 0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)));
        Ok(format!("{cycles} forced slow-path cycles over {rows} runs, 0 violations; stress maxima {worst:?}"))
    })();
    v.report("loop bounds (slow <= n, helper outer <= n, inner <= 2)", t, Some(Duration::from_secs(5 * 60)), lemma);

    // Blocking contrast.
    let t = Instant::now();
    let stall = (|| {
        let mut details = Vec::new();
        for tracker in [TrackerKind::Ebr, TrackerKind::Wfe, TrackerKind::He] {
            let r = run_stall_experiment(&StallConfig::new(tracker, Duration::from_secs(20))).map_err(|e| e.to_string())?;
            let at = |s| r.at(Duration::from_secs(s));
            let (t2, t10, t20) = (at(2), at(10), at(20));
            details.push(format!("{tracker} t2={t2} t10={t10} t20={t20}"));
            let ok = match tracker {
                TrackerKind::Ebr => t20 >= 10 * t2,
                _ => t20 <= 2 * t10,
            };
            if !ok || r.violations != 0 {
                return Err(details.join(", "));
            }
        }
        Ok(details.join(", "))
    })();
    v.report("stall: EBR grows >= 10x, WFE/HE stay within 2x", t, Some(Duration::from_secs(2 * 60)), stall);

    // Oracles, differential trace and linearizability come from one suite run.
    let t = Instant::now();
    let suite = run_oracle_suite(&OracleOptions::default());
    let pick = |prefix: &str| -> Result<String, String> {
        let checks: Vec<_> = suite.checks.iter().filter(|c| c.name.starts_with(prefix)).collect();
        if checks.is_empty() {
            return Err(format!("no `{prefix}` checks ran"));
        }
        let mut out = Vec::new();
        for c in checks {
            match &c.verdict {
                Ok(d) => out.push(format!("{}: {d}", c.name)),
                Err(d) => return Err(format!("{}: {d}", c.name)),
            }
        }
        Ok(out.join("; "))
    };
    v.report("scan oracles, 10^4 frozen instances each", t, Some(Duration::from_secs(60)), pick("scan:"));
    v.report("differential HE/WFE trace over 10^5 ops", t, None, pick("differential:"));
    v.report("KP queue linearizability, 10^3 histories", t, None, pick("linearizability:"));

    // WFE against HE, interleaved repeats.
    let t = Instant::now();
    let mut slow_fraction = Err("no WFE hashmap rows".to_string());
    let perf = (|| {
        let (mut w, mut h) = (Vec::new(), Vec::new());
        let (mut slow, mut calls) = (0, 0);
        for rep in 0..5 {
            let rw = run_repeat(&bench(TrackerKind::Wfe, RideableKind::HashMap, Workload::WriteHeavy, 8, 10), rep)
                .map_err(|e| e.to_string())?;
            let rh = run_repeat(&bench(TrackerKind::He, RideableKind::HashMap, Workload::WriteHeavy, 8, 10), rep)
                .map_err(|e| e.to_string())?;
            slow += rw.stats.slow_path_cycles;
            calls += rw.stats.protect_calls;
            w.push(rw.throughput);
            h.push(rh.throughput);
        }
        let frac = slow as f64 / calls.max(1) as f64;
        slow_fraction = if frac < 0.001 {
            Ok(format!("{slow} slow-path entries in {calls} protected reads ({frac:.2e})"))
        } else {
            Err(format!("fraction {frac:.2e}"))
        };
        let ratio = mean(&w) / mean(&h);
        let detail = format!("WFE {:.0} ops/s, HE {:.0} ops/s, ratio {ratio:.3}", mean(&w), mean(&h));
        if ratio >= 0.8 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    v.report("WFE mean throughput >= 0.8x HE (hashmap 50/50, 8 threads, 10 s x 5)", t, Some(Duration::from_secs(2 * 60)), perf);
    v.report("slow path rarity (fraction < 0.001, default hashmap runs)", Instant::now(), None, slow_fraction);

    // HP lowest on the read-mostly list.
    let t = Instant::now();
    let hp = (|| {
        let mut sums = [0.0; 5];
        for rep in 0..3 {
            for (i, tracker) in RECLAIMING.into_iter().enumerate() {
                let r = run_repeat(&bench(tracker, RideableKind::List, Workload::ReadMostly, 8, 5), rep)
                    .map_err(|e| e.to_string())?;
                sums[i] += r.throughput / 3.0;
            }
        }
        let detail =
            RECLAIMING.iter().zip(sums).map(|(k, s)| format!("{k} {s:.0}")).collect::<Vec<_>>().join(", ");
        let hp = sums[2];
        if sums.iter().enumerate().all(|(i, &s)| i == 2 || hp < s) {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    v.report("HP slowest on list 90/10, 8 threads", t, None, hp);

    if v.failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", v.failed);
        ExitCode::FAILURE
    }
}
