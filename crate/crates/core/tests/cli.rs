//! The `bench` binary end to end: exit codes and CSV output.

use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench")).args(args).output().expect("spawn bench")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn short_run_succeeds_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rows.csv");
    let csv_arg = csv.to_str().unwrap();
    let small = ["-m", "0", "-t", "2", "-d", "ops=2000", "-d", "prefill=100", "-d", "canaries=true", "-o", csv_arg];
    let o = bench(&small);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("WFE stack"));
    let o = bench(&[&small[..], &["-d", "tracker=HE", "-r", "2"]].concat());
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 4, "{text}");
    assert!(lines[0].starts_with("tracker,rideable,workload,threads"));
    assert!(lines[3].starts_with("HE,stack,50-50,2,1,"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&bench(&["-m", "9"])), 1);
    assert_eq!(code(&bench(&["-d", "bogus=1"])), 1);
    assert_eq!(code(&bench(&["-d", "tracker=ARC"])), 1);
    assert_eq!(code(&bench(&["-t", "0"])), 1);
    assert_eq!(code(&bench(&["-m", "0", "-d", "workload=90-10"])), 1);
    assert_eq!(code(&bench(&["-d", "mode=stall", "-o", "x.csv"])), 1);
    assert_eq!(code(&bench(&["--no-such-flag"])), 1);
}

#[test]
fn help_exits_zero() {
    let o = bench(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("-m"));
}

#[test]
fn mutated_oracle_run_exits_two() {
    let o = bench(&["-d", "mode=oracle", "-d", "mutation=skip_helper_tag_check"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn oracle_run_passes() {
    let o = bench(&["-d", "mode=oracle"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}
