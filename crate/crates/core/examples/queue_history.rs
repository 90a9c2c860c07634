//! Records a concurrent Kogan-Petrank queue history and checks it for
//! linearizability.

use wfe_reclaim::harness::lincheck::{is_linearizable_queue, QueueOp};
use wfe_reclaim::harness::oracle::queue_history;
use wfe_reclaim::{TrackerConfig, Wfe};

fn main() -> wfe_reclaim::Result<()> {
    let history = queue_history::<Wfe>(3, 6, 7, TrackerConfig::new(3))?;
    let mut sorted = history.clone();
    sorted.sort_by_key(|c| c.invoke);
    for c in &sorted {
        let op = match c.op {
            QueueOp::Enqueue(v) => format!("enq({v})"),
            QueueOp::Dequeue(r) => format!("deq() -> {r:?}"),
        };
        println!("t{} [{:>2}, {:>2}] {op}", c.thread, c.invoke, c.response);
    }
    println!("linearizable: {}", is_linearizable_queue(&history));
    Ok(())
}
