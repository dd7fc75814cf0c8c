//! Immutable sorted table file.
//!
//! Layout: `[entry block][bloom filter][fence index][footer]`. The entry
//! block holds sorted `(key, seq, payload)` entries; the fence index stores
//! every Nth key with its file offset so a point lookup reads at most one
//! small region of the entry block. See FORMAT.md for the exact byte layout.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::io::{Component, IoCounters, TrackedFile};
use crate::lsm::bloom;
use crate::lsm::memtable::{IndexEntry, SequencedEntry};

const MAGIC: u32 = 0x5348_4b56; // "VKHS" little-endian, reads as HKVS on disk
const VERSION: u32 = 1;
const FOOTER_LEN: usize = 8 * 6 + 4 + 4;
pub const FENCE_INTERVAL: usize = 16;

#[derive(Debug, Clone)]
pub struct SsTableMeta {
    pub id: u64,
    pub level: usize,
    pub entry_count: u64,
    pub min_key: Vec<u8>,
    pub max_key: Vec<u8>,
}

impl SsTableMeta {
    pub fn overlaps(&self, min: &[u8], max: &[u8]) -> bool {
        self.min_key.as_slice() <= max && min <= self.max_key.as_slice()
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.min_key.as_slice() <= key && key <= self.max_key.as_slice()
    }
}

struct Fence {
    key: Vec<u8>,
    offset: u64,
}

/// An open SSTable: file handle plus in-memory bloom bits and fence keys.
pub struct SsTable {
    pub meta: SsTableMeta,
    file: TrackedFile,
    entries_len: u64,
    bloom: Vec<u8>,
    fences: Vec<Fence>,
    pub file_len: u64,
}

pub fn table_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("sst_{id:08}.sst"))
}

fn encode_entry(out: &mut Vec<u8>, key: &[u8], se: &SequencedEntry) {
    out.extend_from_slice(&(key.len() as u16).to_le_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(&se.seq.to_le_bytes());
    se.entry.encode_payload(out);
}

fn decode_entry(buf: &[u8], at: &mut usize) -> Option<(Vec<u8>, SequencedEntry)> {
    let klen = u16::from_le_bytes(buf.get(*at..*at + 2)?.try_into().ok()?) as usize;
    *at += 2;
    let key = buf.get(*at..*at + klen)?.to_vec();
    *at += klen;
    let seq = u64::from_le_bytes(buf.get(*at..*at + 8)?.try_into().ok()?);
    *at += 8;
    let entry = IndexEntry::decode_payload(buf, at)?;
    Some((key, SequencedEntry { seq, entry }))
}

/// Writes a table from an iterator of entries already sorted by key.
/// Returns the metadata for the new table.
pub fn write_table(
    dir: &Path,
    id: u64,
    level: usize,
    entries: impl Iterator<Item = (Vec<u8>, SequencedEntry)>,
    counters: Arc<IoCounters>,
    fault: Option<Arc<crate::io::FaultPlan>>,
) -> Result<SsTableMeta> {
    let mut block = Vec::new();
    let mut keys: Vec<Vec<u8>> = Vec::new();
    let mut fences: Vec<Fence> = Vec::new();
    let mut min_key = Vec::new();
    let mut max_key = Vec::new();
    for (i, (key, se)) in entries.enumerate() {
        if i == 0 {
            min_key = key.clone();
        }
        if i % FENCE_INTERVAL == 0 {
            fences.push(Fence { key: key.clone(), offset: block.len() as u64 });
        }
        max_key = key.clone();
        encode_entry(&mut block, &key, &se);
        keys.push(key);
    }
    if keys.is_empty() {
        return Err(Error::InvalidArgument("cannot write an empty sstable".into()));
    }

    let bloom_bits = bloom::build(keys.iter(), keys.len());
    let mut fence_block = Vec::new();
    fence_block.extend_from_slice(&(fences.len() as u32).to_le_bytes());
    for f in &fences {
        fence_block.extend_from_slice(&(f.key.len() as u16).to_le_bytes());
        fence_block.extend_from_slice(&f.key);
        fence_block.extend_from_slice(&f.offset.to_le_bytes());
    }

    let entries_len = block.len() as u64;
    let bloom_off = entries_len;
    let fence_off = bloom_off + bloom_bits.len() as u64;
    let mut footer = Vec::with_capacity(FOOTER_LEN);
    footer.extend_from_slice(&entries_len.to_le_bytes());
    footer.extend_from_slice(&(keys.len() as u64).to_le_bytes());
    footer.extend_from_slice(&bloom_off.to_le_bytes());
    footer.extend_from_slice(&(bloom_bits.len() as u64).to_le_bytes());
    footer.extend_from_slice(&fence_off.to_le_bytes());
    footer.extend_from_slice(&(fence_block.len() as u64).to_le_bytes());
    footer.extend_from_slice(&VERSION.to_le_bytes());
    footer.extend_from_slice(&MAGIC.to_le_bytes());

    let path = table_path(dir, id);
    let file = TrackedFile::open(&path, Component::Lsm, counters, fault)?;
    file.write_at(0, &block)?;
    file.write_at(bloom_off, &bloom_bits)?;
    file.write_at(fence_off, &fence_block)?;
    file.write_at(fence_off + fence_block.len() as u64, &footer)?;
    file.sync()?;

    Ok(SsTableMeta { id, level, entry_count: keys.len() as u64, min_key, max_key })
}

impl SsTable {
    pub fn open(
        dir: &Path,
        meta: SsTableMeta,
        counters: Arc<IoCounters>,
        fault: Option<Arc<crate::io::FaultPlan>>,
    ) -> Result<SsTable> {
        let path = table_path(dir, meta.id);
        let file = TrackedFile::open(&path, Component::Lsm, counters, fault)?;
        let file_len = file.len();
        if file_len < FOOTER_LEN as u64 {
            return Err(Error::CorruptRecord(format!("sstable {} too short", meta.id)));
        }
        let mut footer = [0u8; FOOTER_LEN];
        file.read_exact_at(file_len - FOOTER_LEN as u64, &mut footer)?;
        let magic = u32::from_le_bytes(footer[52..56].try_into().unwrap());
        if magic != MAGIC {
            return Err(Error::IncompatibleStore(format!("sstable {} bad magic", meta.id)));
        }
        let version = u32::from_le_bytes(footer[48..52].try_into().unwrap());
        if version != VERSION {
            return Err(Error::IncompatibleStore(format!(
                "sstable {} format version {version}",
                meta.id
            )));
        }
        let entries_len = u64::from_le_bytes(footer[0..8].try_into().unwrap());
        let bloom_off = u64::from_le_bytes(footer[16..24].try_into().unwrap());
        let bloom_len = u64::from_le_bytes(footer[24..32].try_into().unwrap());
        let fence_off = u64::from_le_bytes(footer[32..40].try_into().unwrap());

        let mut bloom = vec![0u8; bloom_len as usize];
        file.read_exact_at(bloom_off, &mut bloom)?;

        let fence_len = (file_len - FOOTER_LEN as u64 - fence_off) as usize;
        let mut fence_block = vec![0u8; fence_len];
        file.read_exact_at(fence_off, &mut fence_block)?;
        let n = u32::from_le_bytes(
            fence_block
                .get(0..4)
                .ok_or_else(|| Error::CorruptRecord("fence block truncated".into()))?
                .try_into()
                .unwrap(),
        ) as usize;
        let mut fences = Vec::with_capacity(n);
        let mut at = 4usize;
        for _ in 0..n {
            let klen = u16::from_le_bytes(
                fence_block
                    .get(at..at + 2)
                    .ok_or_else(|| Error::CorruptRecord("fence truncated".into()))?
                    .try_into()
                    .unwrap(),
            ) as usize;
            at += 2;
            let key = fence_block
                .get(at..at + klen)
                .ok_or_else(|| Error::CorruptRecord("fence key truncated".into()))?
                .to_vec();
            at += klen;
            let offset = u64::from_le_bytes(
                fence_block
                    .get(at..at + 8)
                    .ok_or_else(|| Error::CorruptRecord("fence offset truncated".into()))?
                    .try_into()
                    .unwrap(),
            );
            at += 8;
            fences.push(Fence { key, offset });
        }

        Ok(SsTable { meta, file, entries_len, bloom, fences, file_len })
    }

    pub fn maybe_contains(&self, key: &[u8]) -> bool {
        bloom::contains(&self.bloom, key)
    }

    /// Point lookup. The bloom filter must be consulted by the caller (so
    /// lookups can count filter hits separately) or via [`Self::get`].
    pub fn get(&self, key: &[u8]) -> Result<Option<SequencedEntry>> {
        if !self.meta.contains(key) || !self.maybe_contains(key) {
            return Ok(None);
        }
        // Greatest fence whose key <= lookup key.
        let idx = match self.fences.binary_search_by(|f| f.key.as_slice().cmp(key)) {
            Ok(i) => i,
            Err(0) => return Ok(None),
            Err(i) => i - 1,
        };
        let start = self.fences[idx].offset;
        let end = self.fences.get(idx + 1).map(|f| f.offset).unwrap_or(self.entries_len);
        let mut buf = vec![0u8; (end - start) as usize];
        self.file.read_exact_at(start, &mut buf)?;
        let mut at = 0usize;
        while at < buf.len() {
            match decode_entry(&buf, &mut at) {
                Some((k, se)) => match k.as_slice().cmp(key) {
                    std::cmp::Ordering::Equal => return Ok(Some(se)),
                    std::cmp::Ordering::Greater => return Ok(None),
                    std::cmp::Ordering::Less => {}
                },
                None => return Err(Error::CorruptRecord(format!("sstable {}", self.meta.id))),
            }
        }
        Ok(None)
    }

    /// Sequential iterator over all entries, reading the entry block in
    /// chunks. Starts at the first key >= `start` when given.
    pub fn iter_from(&self, start: Option<&[u8]>) -> TableIter<'_> {
        let offset = match start {
            None => 0,
            Some(key) => match self.fences.binary_search_by(|f| f.key.as_slice().cmp(key)) {
                Ok(i) => self.fences[i].offset,
                Err(0) => 0,
                Err(i) => self.fences[i - 1].offset,
            },
        };
        TableIter {
            table: self,
            buf: Vec::new(),
            buf_base: offset,
            at: 0,
            file_pos: offset,
            skip_until: start.map(|s| s.to_vec()),
        }
    }

    pub fn remove_file(&self, dir: &Path) -> Result<()> {
        std::fs::remove_file(table_path(dir, self.meta.id))?;
        Ok(())
    }
}

const ITER_CHUNK: usize = 64 * 1024;

pub struct TableIter<'a> {
    table: &'a SsTable,
    buf: Vec<u8>,
    buf_base: u64,
    at: usize,
    file_pos: u64,
    skip_until: Option<Vec<u8>>,
}

impl TableIter<'_> {
    fn fill(&mut self) -> Result<bool> {
        let remaining = self.table.entries_len - self.file_pos;
        if remaining == 0 {
            return Ok(false);
        }
        let take = remaining.min(ITER_CHUNK as u64) as usize;
        let keep = self.buf.len() - self.at;
        let mut next = Vec::with_capacity(keep + take);
        next.extend_from_slice(&self.buf[self.at..]);
        let old_len = next.len();
        next.resize(old_len + take, 0);
        self.table.file.read_exact_at(self.file_pos, &mut next[old_len..])?;
        self.buf_base = self.buf_base + self.at as u64;
        self.buf = next;
        self.at = 0;
        self.file_pos += take as u64;
        Ok(true)
    }

    fn next_entry(&mut self) -> Result<Option<(Vec<u8>, SequencedEntry)>> {
        loop {
            let mut at = self.at;
            if let Some(entry) = decode_entry(&self.buf, &mut at) {
                self.at = at;
                return Ok(Some(entry));
            }
            let consumed_everything =
                self.buf_base + self.buf.len() as u64 >= self.table.entries_len
                    || self.file_pos >= self.table.entries_len;
            if self.at >= self.buf.len() && consumed_everything {
                return Ok(None);
            }
            if !self.fill()? {
                if self.at >= self.buf.len() {
                    return Ok(None);
                }
                return Err(Error::CorruptRecord(format!(
                    "sstable {} truncated entry",
                    self.table.meta.id
                )));
            }
        }
    }
}

impl Iterator for TableIter<'_> {
    type Item = Result<(Vec<u8>, SequencedEntry)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.next_entry() {
                Err(e) => return Some(Err(e)),
                Ok(None) => return None,
                Ok(Some((k, se))) => {
                    if let Some(skip) = &self.skip_until {
                        if k.as_slice() < skip.as_slice() {
                            continue;
                        }
                        self.skip_until = None;
                    }
                    return Some(Ok((k, se)));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{Area, ValueLocation};

    fn sample_entries(n: u32) -> Vec<(Vec<u8>, SequencedEntry)> {
        (0..n)
            .map(|i| {
                let key = format!("key{i:06}").into_bytes();
                let entry = if i % 3 == 0 {
                    IndexEntry::Inline(vec![i as u8; 10])
                } else if i % 3 == 1 {
                    IndexEntry::Location(ValueLocation::new(Area::SegmentStore, i as u64 * 100, 64))
                } else {
                    IndexEntry::Tombstone
                };
                (key, SequencedEntry { seq: i as u64, entry })
            })
            .collect()
    }

    #[test]
    fn write_open_get_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let counters = IoCounters::new();
        let entries = sample_entries(1000);
        let meta =
            write_table(dir.path(), 1, 0, entries.clone().into_iter(), counters.clone(), None)
                .unwrap();
        assert_eq!(meta.entry_count, 1000);
        assert_eq!(meta.min_key, b"key000000");
        assert_eq!(meta.max_key, b"key000999");

        let table = SsTable::open(dir.path(), meta, counters, None).unwrap();
        for (k, se) in &entries {
            let got = table.get(k).unwrap().unwrap();
            assert_eq!(&got, se);
        }
        assert!(table.get(b"missing").unwrap().is_none());
        assert!(table.get(b"key0005000").unwrap().is_none());
    }

    #[test]
    fn iterator_yields_all_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let counters = IoCounters::new();
        let entries = sample_entries(5000);
        let meta =
            write_table(dir.path(), 2, 0, entries.clone().into_iter(), counters.clone(), None)
                .unwrap();
        let table = SsTable::open(dir.path(), meta, counters, None).unwrap();
        let got: Vec<_> = table.iter_from(None).map(|r| r.unwrap()).collect();
        assert_eq!(got.len(), entries.len());
        assert_eq!(got, entries);

        let from: Vec<_> = table.iter_from(Some(b"key004990")).map(|r| r.unwrap()).collect();
        assert_eq!(from.len(), 10);
        assert_eq!(from[0].0, b"key004990");
    }
}
