//! Scripted interleavings of the slow path, run deterministically.

use wfe_reclaim::harness::scenarios::{self, Outcome};
use wfe_reclaim::harness::schedule::ScheduleController;
use wfe_reclaim::wfe::{Mutation, PausePoint};
use wfe_reclaim::Error;

fn roles(o: &Outcome) -> Vec<String> {
    o.trace.iter().map(|e| e.to_string()).collect()
}

#[test]
fn helper_completes_follows_script() {
    let o = scenarios::helper_completes(Mutation::None).unwrap();
    let t = roles(&o);
    assert!(t[0].starts_with("owner@"), "{t:?}");
    assert_eq!(o.trace[0].point, Some(PausePoint::AfterPendingFlip));
    assert_eq!(o.owner_value, Some(41));
    assert_eq!(o.helper_stats.helps, 1);
    assert_eq!((o.violations, o.residual), (0, 0));
}

#[test]
fn cancelled_request_is_not_overwritten() {
    let o = scenarios::owner_cancels_first(Mutation::None).unwrap();
    assert_eq!(o.owner_value, Some(41));
    assert_eq!(o.helper_stats.helper_inner_max, 0);
    assert_eq!(o.violations, 0);
}

#[test]
fn hand_over_during_scan_keeps_block() {
    let o = scenarios::hand_over_during_scan(Mutation::None).unwrap();
    assert_eq!(o.owner_value, Some(77));
    assert_eq!((o.violations, o.residual), (0, 0));
}

#[test]
fn stale_parent_is_not_followed() {
    let o = scenarios::stale_parent(Mutation::None).unwrap();
    assert_eq!(o.violations, 0);
}

#[test]
fn same_script_same_trace() {
    let a = roles(&scenarios::hand_over_during_scan(Mutation::None).unwrap());
    let b = roles(&scenarios::hand_over_during_scan(Mutation::None).unwrap());
    assert_eq!(a, b);
}

#[test]
fn each_mutation_breaks_its_scenario() {
    let failing = |m| -> Vec<&str> {
        scenarios::check_all(m).into_iter().filter(|(_, r)| r.is_err()).map(|(n, _)| n).collect()
    };
    assert!(failing(Mutation::None).is_empty());
    let normals = failing(Mutation::ScanNormalsFirst);
    assert_eq!(normals.len(), 1, "{normals:?}");
    assert!(normals[0].contains("hand"));
    let tag = failing(Mutation::SkipHelperTagCheck);
    assert_eq!(tag.len(), 1, "{tag:?}");
    assert!(tag[0].contains("stale"));
}

#[test]
fn plain_roles_run_in_script_order() {
    let ctl = ScheduleController::new("b:finish; a:finish").unwrap();
    let log = std::sync::Mutex::new(Vec::new());
    ctl.run(vec![
        ("a", Box::new(|| log.lock().unwrap().push('a'))),
        ("b", Box::new(|| log.lock().unwrap().push('b'))),
    ])
    .unwrap();
    assert_eq!(*log.lock().unwrap(), ['b', 'a']);
}

#[test]
fn malformed_scripts_are_rejected() {
    assert!(ScheduleController::new("owner:nowhere").is_err());
    let ctl = ScheduleController::new("x:finish").unwrap();
    assert!(matches!(ctl.run(vec![("y", Box::new(|| {}))]), Err(Error::Usage(_))));
}
