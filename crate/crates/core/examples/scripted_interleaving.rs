//! Drives an owner and a helper through one slow-path cycle in a fixed order.
//! The owner publishes its request and stops; the helper completes it; the
//! owner resumes and picks up the helper's result.

use std::sync::atomic::AtomicPtr;
use std::sync::{Arc, Mutex};

use wfe_reclaim::harness::schedule::ScheduleController;
use wfe_reclaim::{Tracker, TrackerConfig, Wfe};

fn main() -> wfe_reclaim::Result<()> {
    let ctl = Arc::new(ScheduleController::new("owner:after_pending_flip; helper:finish; owner:finish")?);
    let mut cfg = TrackerConfig::new(2);
    cfg.force_slow_path = true;
    let wfe = Wfe::with_hooks(cfg, ctl.clone())?;

    let mut owner = wfe.register()?;
    let mut helper = wfe.register()?;
    let block = owner.alloc(42u64);
    let cell = AtomicPtr::new(block);
    let read = Mutex::new(0u64);

    let trace = ctl.run(vec![
        (
            "owner",
            Box::new(|| {
                let p = unsafe { owner.get_protected(0, &cell, None) };
                *read.lock().unwrap() = unsafe { **p };
            }),
        ),
        (
            "helper",
            Box::new(|| {
                helper.increment_era();
            }),
        ),
    ])?;

    for e in &trace {
        println!("{e}");
    }
    println!("owner read {}", read.lock().unwrap());
    println!("helps by the helper: {}", helper.stats().helps);
    owner.clear();
    unsafe { owner.retire(block) };
    Ok(())
}
