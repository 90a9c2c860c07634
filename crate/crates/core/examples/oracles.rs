//! A reduced run of the verification suite (the `bench -d mode=oracle` run
//! uses the full sizes).

use wfe_reclaim::harness::oracle::{run_oracle_suite, OracleOptions};

fn main() {
    let opts = OracleOptions { instances: 1_000, differential_ops: 10_000, histories: 100, ..Default::default() };
    let report = run_oracle_suite(&opts);
    print!("{report}");
    std::process::exit(if report.passed() { 0 } else { 2 });
}
