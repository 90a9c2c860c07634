//! Fixed-size hash map: an array of [`HarrisList`](super::HarrisList) buckets.

use std::fmt;
use std::sync::atomic::AtomicPtr;

use super::list::{self, Link};
use super::{Op, Rideable, RideableKind};
use crate::tracker::{Handle, Tracker};
use crate::{Error, Result};

/// A prime near 10^4: short chains at a 50K prefill, still real list walks.
pub const DEFAULT_BUCKETS: usize = 10007;

pub struct HashMap<Tr: Tracker> {
    tracker: Tr,
    buckets: Box<[Link]>,
}

unsafe impl<Tr: Tracker> Send for HashMap<Tr> {}
unsafe impl<Tr: Tracker> Sync for HashMap<Tr> {}

impl<Tr: Tracker> HashMap<Tr> {
    pub fn new(tracker: Tr) -> Self {
        Self::with_buckets(tracker, DEFAULT_BUCKETS).expect("nonzero bucket count")
    }

    pub fn with_buckets(tracker: Tr, buckets: usize) -> Result<Self> {
        if buckets == 0 {
            return Err(Error::Config("bucket count must be at least 1".into()));
        }
        Ok(Self { tracker, buckets: (0..buckets).map(|_| AtomicPtr::default()).collect() })
    }

    pub fn tracker(&self) -> &Tr {
        &self.tracker
    }

    pub fn register(&self) -> Result<Handle<'_, Tr>> {
        self.tracker.register()
    }

    #[inline]
    fn bucket(&self, key: u64) -> &Link {
        &self.buckets[(key % self.buckets.len() as u64) as usize]
    }

    pub fn insert(&self, h: &mut Handle<'_, Tr>, key: u64, value: u64) -> bool {
        list::insert(h, self.bucket(key), key, value)
    }

    pub fn remove(&self, h: &mut Handle<'_, Tr>, key: u64) -> Option<u64> {
        list::remove(h, self.bucket(key), key)
    }

    pub fn get(&self, h: &mut Handle<'_, Tr>, key: u64) -> Option<u64> {
        list::get(h, self.bucket(key), key)
    }

    pub fn put(&self, h: &mut Handle<'_, Tr>, key: u64, value: u64) -> Option<u64> {
        list::put(h, self.bucket(key), key, value)
    }

    /// All entries sorted by key. Requires that no other thread is mutating.
    pub fn entries(&mut self) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        for b in self.buckets.iter() {
            list::snapshot(b, &mut out);
        }
        out.sort_unstable();
        out
    }
}

impl<Tr: Tracker> Drop for HashMap<Tr> {
    fn drop(&mut self) {
        for b in self.buckets.iter_mut() {
            unsafe { list::free_all(&self.tracker, b) }
        }
    }
}

impl<Tr: Tracker> fmt::Debug for HashMap<Tr> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HashMap").field("tracker", &Tr::KIND).field("buckets", &self.buckets.len()).finish()
    }
}

impl<Tr: Tracker> Rideable for HashMap<Tr> {
    type Tr = Tr;
    const KIND: RideableKind = RideableKind::HashMap;

    fn build(tracker: Tr) -> Result<Self> {
        Ok(Self::new(tracker))
    }

    fn tracker(&self) -> &Tr {
        &self.tracker
    }

    fn apply(&self, h: &mut Handle<'_, Tr>, op: Op) -> bool {
        match op {
            Op::Insert(k, v) => self.insert(h, k, v),
            Op::Remove(k) => self.remove(h, k).is_some(),
            Op::Get(k) => self.get(h, k).is_some(),
            Op::Put(k, v) => self.put(h, k, v).is_some(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Ebr, TrackerConfig};

    #[test]
    fn put_get_roundtrip_and_missing_delete() {
        let m = HashMap::new(Ebr::new(TrackerConfig::new(1)).unwrap());
        let mut h = m.register().unwrap();
        assert_eq!(m.put(&mut h, 42, 1), None);
        assert_eq!(m.get(&mut h, 42), Some(1));
        assert_eq!(m.put(&mut h, 42 + DEFAULT_BUCKETS as u64, 2), None);
        assert_eq!(m.get(&mut h, 42 + DEFAULT_BUCKETS as u64), Some(2));
        assert_eq!(m.remove(&mut h, 7), None);
        assert!(HashMap::with_buckets(Ebr::new(TrackerConfig::new(1)).unwrap(), 0).is_err());
    }
}
