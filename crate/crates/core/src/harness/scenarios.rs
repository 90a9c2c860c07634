//! Controlled interleavings of the WFE slow path, each run under one script.
//!
//! All scenarios use canaries so that a protection gap shows up as a
//! violation instead of silent reuse. With [`Mutation::None`] every scenario
//! must finish with zero violations; the two lemma scenarios are built so
//! that the matching mutation produces one.

use std::ptr;
use std::sync::atomic::{AtomicPtr, Ordering::SeqCst};
use std::sync::{Arc, Mutex};

use super::drain;
use super::schedule::{Event, ScheduleController};
use crate::atomic::WidePair;
use crate::rideables::deref;
use crate::tracker::{Block, Tracker, TrackerConfig, TrackerStats};
use crate::wfe::Mutation;
use crate::{Result, Wfe};

/// What one scenario observed.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub trace: Vec<Event>,
    /// Payload the owner read through its protected pointer, if the block was live.
    pub owner_value: Option<u64>,
    /// Owner's reservation right after its protected read.
    pub owner_reservation: WidePair,
    pub owner_stats: TrackerStats,
    pub helper_stats: TrackerStats,
    pub violations: u64,
    /// Unreclaimed blocks after a quiescent drain.
    pub residual: i64,
}

fn config(threads: usize, mutation: Mutation) -> TrackerConfig {
    let mut cfg = TrackerConfig::new(threads).with_canaries(true);
    cfg.force_slow_path = true;
    cfg.mutation = mutation;
    cfg
}

type Scripted = Wfe<Arc<ScheduleController>>;

fn tracker(script: &str, threads: usize, mutation: Mutation) -> Result<Scripted> {
    let ctl = Arc::new(ScheduleController::new(script)?);
    Wfe::with_hooks(config(threads, mutation), ctl)
}

/// Owner reads one top-level cell on the slow path. Only the helping thread
/// can advance the era, and it does so while the owner waits in the loop.
fn single_read(script: &str, mutation: Mutation) -> Result<Outcome> {
    let w = tracker(script, 3, mutation)?;
    let mut ho = w.register()?;
    let mut hh = w.register()?;
    let b = ho.alloc(41u64);
    let cell = AtomicPtr::new(b);
    let seen = Mutex::new((None, WidePair::new(0, 0)));
    let trace = w.hooks().run(vec![
        (
            "owner",
            Box::new(|| {
                let p = unsafe { ho.get_protected(0, &cell, None) };
                let v = (!p.is_null() && ho.check(p)).then(|| unsafe { *deref(p) });
                *seen.lock().unwrap() = (v, w.reservation(ho.tid(), 0));
                ho.clear();
            }),
        ),
        (
            "helper",
            Box::new(|| {
                hh.increment_era();
            }),
        ),
    ])?;
    let (owner_value, owner_reservation) = *seen.lock().unwrap();
    let (owner_stats, helper_stats) = (ho.stats(), hh.stats());
    cell.store(ptr::null_mut(), SeqCst);
    unsafe { ho.retire(b) };
    drop((ho, hh));
    let residual = drain(&w)?;
    Ok(Outcome {
        trace,
        owner_value,
        owner_reservation,
        owner_stats,
        helper_stats,
        violations: w.violations(),
        residual,
    })
}

/// The helper completes the whole request while the owner sits just after
/// publishing it; the owner returns the helper's output.
pub fn helper_completes(mutation: Mutation) -> Result<Outcome> {
    single_read("owner:after_pending_flip; helper:finish; owner:finish", mutation)
}

/// The helper validates an era but the owner cancels its own request before
/// the helper can install the output.
pub fn owner_cancels_first(mutation: Mutation) -> Result<Outcome> {
    single_read(
        "owner:after_pending_flip; helper:helper_before_result_cas; owner:finish; helper:finish",
        mutation,
    )
}

/// A scanner checks a block against all reservations while a helper moves
/// the block's era from its second special reservation into the owner's
/// normal one. Reading normal reservations before the second special ones
/// misses the era in both places, and the owner ends up with a freed block.
pub fn hand_over_during_scan(mutation: Mutation) -> Result<Outcome> {
    let script = "owner:after_pending_flip; helper:helper_before_hand_over; \
                  scanner:scan_between_passes; helper:finish; scanner:finish; owner:finish";
    let w = tracker(script, 4, mutation)?;
    let mut ho = w.register()?;
    let mut hh = w.register()?;
    let mut hs = w.register()?;
    let v = hs.alloc(77u64);
    let cell = AtomicPtr::new(v);
    let seen = Mutex::new((None, WidePair::new(0, 0)));
    let trace = w.hooks().run(vec![
        (
            "owner",
            Box::new(|| {
                let p = unsafe { ho.get_protected(0, &cell, None) };
                let v = (!p.is_null() && ho.check(p)).then(|| unsafe { *deref(p) });
                *seen.lock().unwrap() = (v, w.reservation(ho.tid(), 0));
                ho.clear();
            }),
        ),
        (
            "helper",
            Box::new(|| {
                hh.increment_era();
            }),
        ),
        (
            "scanner",
            Box::new(|| {
                let old = cell.swap(ptr::null_mut(), SeqCst);
                unsafe { hs.retire(old) };
                hs.cleanup();
            }),
        ),
    ])?;
    let (owner_value, owner_reservation) = *seen.lock().unwrap();
    let (owner_stats, helper_stats) = (ho.stats(), hh.stats());
    drop((ho, hh, hs));
    let residual = drain(&w)?;
    Ok(Outcome {
        trace,
        owner_value,
        owner_reservation,
        owner_stats,
        helper_stats,
        violations: w.violations(),
        residual,
    })
}

struct Link {
    next: AtomicPtr<Block<Link>>,
    value: u64,
}

/// The owner reads a field of a protected parent on the slow path and then,
/// after its request is over, retires and frees that parent. A stalled
/// helper wakes up afterwards; unless it re-checks the request tag after
/// reserving the parent, it goes on to read through the freed parent.
pub fn stale_parent(mutation: Mutation) -> Result<Outcome> {
    let script = "owner:after_pending_flip; helper:helper_before_parent_reservation; owner:finish; helper:finish";
    let w = tracker(script, 3, mutation)?;
    let mut ho = w.register()?;
    let mut hh = w.register()?;
    let q = ho.alloc(Link { next: AtomicPtr::default(), value: 2 });
    let p = ho.alloc(Link { next: AtomicPtr::new(q), value: 1 });
    let root = AtomicPtr::new(p);
    // Outside any role, so the script does not see this read.
    // Raw pointers are not Send; the address crosses into the owner thread.
    let parent = unsafe { ho.get_protected(0, &root, None) } as usize;
    let seen = Mutex::new((None, WidePair::new(0, 0)));
    let trace = w.hooks().run(vec![
        (
            "owner",
            Box::new(|| unsafe {
                let parent = parent as *mut Block<Link>;
                let pb: &Block<Link> = &*parent;
                let c = ho.get_protected(1, &pb.next, Some(pb.header()));
                let v = (!c.is_null() && ho.check(c)).then(|| deref(c).value);
                *seen.lock().unwrap() = (v, w.reservation(ho.tid(), 1));
                ho.clear();
                root.store(ptr::null_mut(), SeqCst);
                ho.retire(parent);
                ho.cleanup();
            }),
        ),
        (
            "helper",
            Box::new(|| {
                hh.increment_era();
            }),
        ),
    ])?;
    let (owner_value, owner_reservation) = *seen.lock().unwrap();
    let (owner_stats, helper_stats) = (ho.stats(), hh.stats());
    unsafe { ho.retire(q) };
    drop((ho, hh));
    let residual = drain(&w)?;
    Ok(Outcome {
        trace,
        owner_value,
        owner_reservation,
        owner_stats,
        helper_stats,
        violations: w.violations(),
        residual,
    })
}

/// Runs every scenario and checks its expected outcome. `Ok` carries a
/// one-line summary, `Err` the first deviation.
pub fn check_all(mutation: Mutation) -> Vec<(&'static str, std::result::Result<String, String>)> {
    fn clean(o: &Outcome) -> std::result::Result<(), String> {
        if o.violations != 0 {
            return Err(format!("{} safety violation(s)", o.violations));
        }
        if o.residual != 0 {
            return Err(format!("{} blocks left after drain", o.residual));
        }
        Ok(())
    }
    let run = |f: fn(Mutation) -> Result<Outcome>, check: fn(&Outcome) -> std::result::Result<String, String>| {
        match f(mutation) {
            Ok(o) => clean(&o).and_then(|_| check(&o)),
            Err(e) => Err(e.to_string()),
        }
    };
    vec![
        (
            "schedule: helper completes a pending read",
            run(helper_completes, |o| {
                if o.owner_value != Some(41) {
                    return Err(format!("owner read {:?}", o.owner_value));
                }
                if o.helper_stats.helps != 1 || o.helper_stats.helper_inner_max != 1 {
                    return Err(format!("helper stats {:?}", o.helper_stats));
                }
                if o.owner_reservation.hi != 1 {
                    return Err(format!("owner tag {} after one cycle", o.owner_reservation.hi));
                }
                Ok(format!("owner era {}", o.owner_reservation.lo))
            }),
        ),
        (
            "schedule: owner cancels before the helper installs",
            run(owner_cancels_first, |o| {
                if o.owner_value != Some(41) {
                    return Err(format!("owner read {:?}", o.owner_value));
                }
                if o.helper_stats.helper_inner_max != 0 {
                    return Err("helper installed an output into a cancelled request".into());
                }
                Ok(format!("owner era {}", o.owner_reservation.lo))
            }),
        ),
        (
            "schedule: hand-over during a scan",
            run(hand_over_during_scan, |o| match o.owner_value {
                Some(77) => Ok("block kept alive".into()),
                v => Err(format!("owner read {v:?}")),
            }),
        ),
        (
            "schedule: stale helper after the parent is freed",
            run(stale_parent, |o| match o.owner_value {
                Some(2) => Ok("helper backed off".into()),
                v => Err(format!("owner read {v:?}")),
            }),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_scenarios_pass_without_mutation() {
        for (name, r) in check_all(Mutation::None) {
            assert!(r.is_ok(), "{name}: {r:?}");
        }
    }
}
