//! In-memory sorted buffer of index entries.

use std::collections::BTreeMap;
use std::ops::Bound;

use crate::record::{Area, ValueLocation};

/// Index payload for one key: a small value stored inline, a location in one
/// of the value areas, or a tombstone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexEntry {
    Inline(Vec<u8>),
    Location(ValueLocation),
    Tombstone,
}

impl IndexEntry {
    /// Encoded size of (key, seq, entry) in the SSTable format; also used for
    /// memtable capacity accounting.
    pub fn encoded_len(&self, key: &[u8]) -> usize {
        2 + key.len()
            + 8
            + 1
            + match self {
                IndexEntry::Inline(v) => 4 + v.len(),
                IndexEntry::Location(_) => 13,
                IndexEntry::Tombstone => 0,
            }
    }

    pub fn encode_payload(&self, out: &mut Vec<u8>) {
        match self {
            IndexEntry::Inline(v) => {
                out.push(0);
                out.extend_from_slice(&(v.len() as u32).to_le_bytes());
                out.extend_from_slice(v);
            }
            IndexEntry::Location(loc) => {
                out.push(1);
                out.push(loc.area.as_u8());
                out.extend_from_slice(&loc.offset.to_le_bytes());
                out.extend_from_slice(&loc.length.to_le_bytes());
            }
            IndexEntry::Tombstone => out.push(2),
        }
    }

    pub fn decode_payload(buf: &[u8], at: &mut usize) -> Option<IndexEntry> {
        let kind = *buf.get(*at)?;
        *at += 1;
        match kind {
            0 => {
                let len =
                    u32::from_le_bytes(buf.get(*at..*at + 4)?.try_into().ok()?) as usize;
                *at += 4;
                let v = buf.get(*at..*at + len)?.to_vec();
                *at += len;
                Some(IndexEntry::Inline(v))
            }
            1 => {
                let area = Area::from_u8(*buf.get(*at)?).ok()?;
                let offset = u64::from_le_bytes(buf.get(*at + 1..*at + 9)?.try_into().ok()?);
                let length = u32::from_le_bytes(buf.get(*at + 9..*at + 13)?.try_into().ok()?);
                *at += 13;
                Some(IndexEntry::Location(ValueLocation { area, offset, length }))
            }
            2 => Some(IndexEntry::Tombstone),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequencedEntry {
    pub seq: u64,
    pub entry: IndexEntry,
}

#[derive(Debug, Default)]
pub struct MemTable {
    map: BTreeMap<Vec<u8>, SequencedEntry>,
    bytes: usize,
}

impl MemTable {
    pub fn new() -> MemTable {
        MemTable::default()
    }

    pub fn insert(&mut self, key: Vec<u8>, entry: SequencedEntry) {
        let new_size = entry.entry.encoded_len(&key);
        match self.map.entry(key) {
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let old_size = o.get().entry.encoded_len(o.key());
                self.bytes = self.bytes - old_size + new_size;
                o.insert(entry);
            }
            std::collections::btree_map::Entry::Vacant(v) => {
                self.bytes += new_size;
                v.insert(entry);
            }
        }
    }

    pub fn get(&self, key: &[u8]) -> Option<&SequencedEntry> {
        self.map.get(key)
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

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<u8>, &SequencedEntry)> {
        self.map.iter()
    }

    pub fn range_from<'a>(
        &'a self,
        start: &[u8],
    ) -> impl Iterator<Item = (&'a Vec<u8>, &'a SequencedEntry)> {
        self.map.range::<[u8], _>((Bound::Included(start), Bound::Unbounded))
    }

    pub fn take(&mut self) -> BTreeMap<Vec<u8>, SequencedEntry> {
        self.bytes = 0;
        std::mem::take(&mut self.map)
    }
}
