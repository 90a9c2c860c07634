//! Concurrent data structures written against [`Tracker`].
//!
//! Each structure owns its tracker; threads borrow it through a
//! [`Handle`] obtained from `register`. Every operation brackets itself with
//! `start_op`/`end_op`, so any tracker can be plugged in.

use std::fmt;
use std::str::FromStr;

use crate::tracker::{Block, Handle, Tracker};
use crate::{Error, Result};

mod hashmap;
mod kpqueue;
mod list;
mod stack;

pub use hashmap::{HashMap, DEFAULT_BUCKETS};
pub use kpqueue::KpQueue;
pub use list::HarrisList;
pub use stack::TreiberStack;

/// Payload of a block the caller keeps alive.
#[inline(always)]
pub(crate) unsafe fn deref<'a, T>(p: *const Block<T>) -> &'a T {
    let block: &'a Block<T> = &*p;
    block
}

/// Low pointer bits used as marks by the structures.
pub const MARK_MASK: usize = 3;

/// Benchmark ids, as selected with `-m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RideableKind {
    Stack = 0,
    List = 1,
    KpQueue = 2,
    HashMap = 3,
}

impl RideableKind {
    pub const ALL: [RideableKind; 4] = [Self::Stack, Self::List, Self::KpQueue, Self::HashMap];

    pub fn from_id(id: u32) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| *k as u32 == id)
            .ok_or_else(|| Error::Usage(format!("unknown rideable id {id} (0 stack, 1 list, 2 kpqueue, 3 hashmap)")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Stack => "stack",
            Self::List => "list",
            Self::KpQueue => "kpqueue",
            Self::HashMap => "hashmap",
        }
    }

    /// Whether the structure has keyed lookups (and so a read-mostly mix).
    pub fn is_map(self) -> bool {
        matches!(self, Self::List | Self::HashMap)
    }
}

impl fmt::Display for RideableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RideableKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(id) = s.parse::<u32>() {
            return Self::from_id(id);
        }
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Usage(format!("unknown rideable `{s}`")))
    }
}

/// The abstract operations the benchmark issues. Pools (stack, queue) map
/// `Insert` to push/enqueue and `Remove` to pop/dequeue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Insert(u64, u64),
    Remove(u64),
    Get(u64),
    Put(u64, u64),
}

/// A benchmarkable structure.
pub trait Rideable: Send + Sync + Sized {
    type Tr: Tracker;
    const KIND: RideableKind;

    fn build(tracker: Self::Tr) -> Result<Self>;

    fn tracker(&self) -> &Self::Tr;

    fn register(&self) -> Result<Handle<'_, Self::Tr>> {
        self.tracker().register()
    }

    /// Runs one operation; `true` when it found or changed something.
    fn apply(&self, h: &mut Handle<'_, Self::Tr>, op: Op) -> bool;

    /// Loads the structure before measurement. `keys` are distinct.
    fn prefill(&self, h: &mut Handle<'_, Self::Tr>, keys: &[u64]) {
        for &k in keys {
            self.apply(h, Op::Insert(k, k));
        }
    }
}
