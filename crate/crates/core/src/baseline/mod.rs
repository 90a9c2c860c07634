//! Comparison schemes behind the same [`Tracker`](crate::Tracker) interface.

mod ebr;
mod he;
mod hp;
mod ibr;
mod leak;

pub use ebr::Ebr;
pub use he::He;
pub use hp::Hp;
pub use ibr::{intervals_intersect, Ibr};
pub use leak::Leak;
