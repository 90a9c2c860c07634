//! Push and pop on a Treiber stack reclaimed by wait-free eras, from several threads.

use std::thread;

use wfe_reclaim::rideables::TreiberStack;
use wfe_reclaim::{Tracker, TrackerConfig, Wfe};

fn main() -> wfe_reclaim::Result<()> {
    let threads = 4;
    let stack = TreiberStack::new(Wfe::new(TrackerConfig::new(threads))?);

    thread::scope(|s| {
        for t in 0..threads as u64 {
            let stack = &stack;
            s.spawn(move || {
                let mut h = stack.register().expect("a free thread slot");
                for i in 0..10_000 {
                    stack.push(&mut h, t * 1_000_000 + i);
                    stack.pop(&mut h);
                }
            });
        }
    });

    let w = stack.tracker();
    println!("unreclaimed after the run: {}", w.unreclaimed());
    let mut h = stack.register()?;
    h.quiesce();
    println!("after a quiescent scan:    {}", w.unreclaimed());
    println!("violations:                {}", w.violations());
    Ok(())
}
