//! In-memory write cache with in-place updates and group-batched draining.
//!
//! Recently written pairs are updated in place without touching the device;
//! reads are served from here first. When the cache reaches capacity the
//! whole cache is flushed (no partial eviction).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::record::{encoded_len, GroupId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CacheValue {
    Value(Vec<u8>),
    Tombstone,
}

impl CacheValue {
    fn charged_bytes(&self, key: &[u8]) -> usize {
        match self {
            CacheValue::Value(v) => encoded_len(key, v),
            CacheValue::Tombstone => encoded_len(key, &[]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Absorbed,
    /// The entry does not fit; flush the cache and retry the put.
    FlushNeeded,
}

#[derive(Debug)]
pub struct WriteCache {
    map: BTreeMap<Vec<u8>, CacheValue>,
    bytes: usize,
    capacity: usize,
}

impl WriteCache {
    pub fn new(capacity: usize) -> WriteCache {
        WriteCache { map: BTreeMap::new(), bytes: 0, capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn bytes(&self) -> usize {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Inserts or overwrites in place. Returns `FlushNeeded` without
    /// inserting when the addition would exceed capacity.
    pub fn put(&mut self, key: &[u8], value: CacheValue) -> Result<PutOutcome> {
        let new_size = value.charged_bytes(key);
        if new_size > self.capacity {
            return Err(Error::InvalidArgument(format!(
                "pair of {new_size} bytes exceeds write cache capacity {}",
                self.capacity
            )));
        }
        let old_size = self.map.get(key).map(|v| v.charged_bytes(key));
        let projected = self.bytes - old_size.unwrap_or(0) + new_size;
        if projected > self.capacity {
            return Ok(PutOutcome::FlushNeeded);
        }
        self.bytes = projected;
        self.map.insert(key.to_vec(), value);
        Ok(PutOutcome::Absorbed)
    }

    /// Exact-match lookup; `None` means the caller must consult the index.
    pub fn get(&self, key: &[u8]) -> Option<&CacheValue> {
        self.map.get(key)
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.map.contains_key(key)
    }

    /// Sorted iteration from `start`, for merging into scans.
    pub fn range_from<'a>(
        &'a self,
        start: &[u8],
    ) -> impl Iterator<Item = (&'a Vec<u8>, &'a CacheValue)> {
        self.map.range::<[u8], _>((std::ops::Bound::Included(start), std::ops::Bound::Unbounded))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<u8>, &CacheValue)> {
        self.map.iter()
    }

    pub fn clear(&mut self) {
        self.map.clear();
        self.bytes = 0;
    }
}

/// One batch of encoded records bound for a single segment group.
#[derive(Debug, Clone)]
pub struct FlushBatch {
    pub group: GroupId,
    /// Encoded records, in key order.
    pub records: Vec<Vec<u8>>,
    pub total_bytes: usize,
}

/// Packs per-group encoded records into batches of at least
/// `batch_threshold` bytes. A batch is closed as soon as adding a record
/// reaches or exceeds the threshold, so a record larger than the threshold
/// is flushed alone. The final batch per group may be smaller.
pub fn pack_batches(
    group: GroupId,
    records: Vec<Vec<u8>>,
    batch_threshold: usize,
) -> Vec<FlushBatch> {
    let mut batches = Vec::new();
    let mut current: Vec<Vec<u8>> = Vec::new();
    let mut bytes = 0usize;
    for rec in records {
        bytes += rec.len();
        current.push(rec);
        if bytes >= batch_threshold {
            batches.push(FlushBatch { group, records: std::mem::take(&mut current), total_bytes: bytes });
            bytes = 0;
        }
    }
    if !current.is_empty() {
        batches.push(FlushBatch { group, records: current, total_bytes: bytes });
    }
    batches
}
