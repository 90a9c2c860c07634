//! Safe memory reclamation for non-blocking data structures.
//!
//! The centerpiece is [`Wfe`], a wait-free eras tracker: hazard-eras style
//! reservations on the fast path and a collaborative slow path that bounds
//! every `get_protected` call. Next to it live the comparison schemes
//! ([`He`], [`Hp`], [`Ebr`], [`Ibr`], [`Leak`]), a set of concurrent data
//! structures generic over the [`Tracker`] trait, and a benchmark / stress
//! harness.
//!
//! ```
//! use wfe_reclaim::{rideables::TreiberStack, TrackerConfig, Wfe};
//!
//! let stack = TreiberStack::new(Wfe::new(TrackerConfig::new(2)).unwrap());
//! let mut h = stack.register().unwrap();
//! stack.push(&mut h, 7);
//! assert_eq!(stack.pop(&mut h), Some(7));
//! ```

pub mod atomic;
pub mod baseline;
pub mod harness;
pub mod rideables;
pub mod tracker;
pub mod wfe;

pub use atomic::{Era, NONE_ERA};
pub use baseline::{Ebr, He, Hp, Ibr, Leak};
pub use tracker::{Block, BlockHeader, Handle, Tracker, TrackerConfig, TrackerKind, TrackerStats};
pub use wfe::Wfe;

/// Errors surfaced by trackers and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("all {0} thread slots are in use")]
    Capacity(usize),
    #[error("platform lacks {0}")]
    Unsupported(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("schedule failed: {0}")]
    Schedule(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
