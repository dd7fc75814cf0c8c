//! Minimal leveled LSM-tree holding keys and their index entries.
//!
//! Writes go to an in-memory memtable; when it reaches capacity it is flushed
//! as one SSTable into level 0 (tables there may overlap). Deeper levels hold
//! tables with pairwise-disjoint key ranges, each level ten times the
//! capacity of the one above (configurable). Lookups consult the memtable,
//! then level 0 newest-first, then each deeper level through its Bloom
//! filter. Durability of unflushed entries is the write journal's job, so the
//! memtable itself has no log.

pub mod bloom;
pub mod memtable;
pub mod sstable;

use std::cmp::Ordering as CmpOrdering;
use std::collections::BinaryHeap;
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::io::{Component, FaultPlan, IoCounters, TrackedFile};
use crate::metrics::StoreMetrics;
pub use memtable::{IndexEntry, MemTable, SequencedEntry};
pub use sstable::{SsTable, SsTableMeta};

#[derive(Debug, Clone)]
pub struct LsmConfig {
    pub memtable_bytes: usize,
    pub sstable_target_bytes: usize,
    pub l0_max_tables: usize,
    pub level1_max_bytes: u64,
    pub fanout: u64,
}

impl Default for LsmConfig {
    fn default() -> Self {
        LsmConfig {
            memtable_bytes: 2 << 20,
            sstable_target_bytes: 2 << 20,
            l0_max_tables: 4,
            level1_max_bytes: 10 << 20,
            fanout: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CompactionStats {
    pub bytes_read: u64,
    pub bytes_written: u64,
}

pub struct LsmIndex {
    dir: PathBuf,
    config: LsmConfig,
    counters: Arc<IoCounters>,
    fault: Option<Arc<FaultPlan>>,
    metrics: Arc<StoreMetrics>,
    memtable: MemTable,
    levels: Vec<Vec<Arc<SsTable>>>,
    next_id: u64,
    last_seq: u64,
    compact_cursor: Vec<Vec<u8>>,
}

const MANIFEST: &str = "MANIFEST";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<Vec<u8>> {
    if s.len() % 2 != 0 {
        return Err(Error::CorruptRecord("manifest: odd hex length".into()));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&s[i..i + 2], 16)
                .map_err(|_| Error::CorruptRecord("manifest: bad hex".into()))
        })
        .collect()
}

impl LsmIndex {
    pub fn open(
        dir: &Path,
        config: LsmConfig,
        metrics: Arc<StoreMetrics>,
        fault: Option<Arc<FaultPlan>>,
    ) -> Result<LsmIndex> {
        std::fs::create_dir_all(dir)?;
        let counters = metrics.io.clone();
        let mut index = LsmIndex {
            dir: dir.to_path_buf(),
            config,
            counters,
            fault,
            metrics,
            memtable: MemTable::new(),
            levels: Vec::new(),
            next_id: 1,
            last_seq: 0,
            compact_cursor: Vec::new(),
        };
        let manifest_path = dir.join(MANIFEST);
        if manifest_path.exists() {
            index.load_manifest(&manifest_path)?;
        }
        index.remove_orphans()?;
        Ok(index)
    }

    fn load_manifest(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some("hashkv-manifest v1") => {}
            other => {
                return Err(Error::IncompatibleStore(format!(
                    "manifest header {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut metas: Vec<SsTableMeta> = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["next_id", v] => {
                    self.next_id = v
                        .parse()
                        .map_err(|_| Error::CorruptRecord("manifest next_id".into()))?
                }
                ["last_seq", v] => {
                    self.last_seq = v
                        .parse()
                        .map_err(|_| Error::CorruptRecord("manifest last_seq".into()))?
                }
                ["table", id, level, count, min, max] => {
                    metas.push(SsTableMeta {
                        id: id.parse().map_err(|_| Error::CorruptRecord("manifest id".into()))?,
                        level: level
                            .parse()
                            .map_err(|_| Error::CorruptRecord("manifest level".into()))?,
                        entry_count: count
                            .parse()
                            .map_err(|_| Error::CorruptRecord("manifest count".into()))?,
                        min_key: unhex(min)?,
                        max_key: unhex(max)?,
                    });
                }
                [] => {}
                _ => return Err(Error::CorruptRecord(format!("manifest line: {line}"))),
            }
        }
        for meta in metas {
            let level = meta.level;
            while self.levels.len() <= level {
                self.levels.push(Vec::new());
            }
            let table =
                SsTable::open(&self.dir, meta, self.counters.clone(), self.fault.clone())?;
            self.levels[level].push(Arc::new(table));
        }
        for (i, level) in self.levels.iter_mut().enumerate() {
            if i == 0 {
                level.sort_by_key(|t| t.meta.id);
            } else {
                level.sort_by(|a, b| a.meta.min_key.cmp(&b.meta.min_key));
            }
        }
        Ok(())
    }

    fn remove_orphans(&self) -> Result<()> {
        let live: std::collections::HashSet<u64> =
            self.levels.iter().flatten().map(|t| t.meta.id).collect();
        for entry in std::fs::read_dir(&self.dir)? {
            let entry = entry?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(idpart) = name.strip_prefix("sst_").and_then(|n| n.strip_suffix(".sst")) {
                if let Ok(id) = idpart.parse::<u64>() {
                    if !live.contains(&id) {
                        std::fs::remove_file(entry.path())?;
                    }
                }
            }
        }
        Ok(())
    }

    fn write_manifest(&self) -> Result<()> {
        let mut text = String::from("hashkv-manifest v1\n");
        text.push_str(&format!("next_id {}\n", self.next_id));
        text.push_str(&format!("last_seq {}\n", self.last_seq));
        for level in &self.levels {
            for t in level {
                text.push_str(&format!(
                    "table {} {} {} {} {}\n",
                    t.meta.id,
                    t.meta.level,
                    t.meta.entry_count,
                    hex(&t.meta.min_key),
                    hex(&t.meta.max_key)
                ));
            }
        }
        let tmp_path = self.dir.join("MANIFEST.tmp");
        let tmp = TrackedFile::open(&tmp_path, Component::Lsm, self.counters.clone(), self.fault.clone())?;
        tmp.set_len(0)?;
        tmp.write_at(0, text.as_bytes())?;
        tmp.sync()?;
        std::fs::rename(&tmp_path, self.dir.join(MANIFEST))?;
        if let Ok(d) = std::fs::File::open(&self.dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }

    pub fn next_seq(&mut self) -> u64 {
        self.last_seq += 1;
        self.last_seq
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn memtable_bytes(&self) -> usize {
        self.memtable.bytes()
    }

    /// Inserts an entry. Flushes the memtable (and compacts if needed) when
    /// the configured capacity is reached. Returns the assigned sequence.
    pub fn put(&mut self, key: &[u8], entry: IndexEntry) -> Result<u64> {
        let seq = self.next_seq();
        self.memtable.insert(key.to_vec(), SequencedEntry { seq, entry });
        if self.memtable.bytes() >= self.config.memtable_bytes {
            self.flush_memtable()?;
            self.maybe_compact()?;
        }
        Ok(seq)
    }

    /// Point lookup. Tombstones are returned so callers can distinguish
    /// deleted keys from never-written keys.
    pub fn get(&self, key: &[u8]) -> Result<Option<SequencedEntry>> {
        self.metrics.lsm_lookups.fetch_add(1, Ordering::Relaxed);
        if let Some(se) = self.memtable.get(key) {
            return Ok(Some(se.clone()));
        }
        if let Some(l0) = self.levels.first() {
            for table in l0.iter().rev() {
                if let Some(se) = table.get(key)? {
                    return Ok(Some(se));
                }
            }
        }
        for level in self.levels.iter().skip(1) {
            let idx = level.partition_point(|t| t.meta.max_key.as_slice() < key);
            if let Some(table) = level.get(idx) {
                if table.meta.contains(key) {
                    if let Some(se) = table.get(key)? {
                        return Ok(Some(se));
                    }
                }
            }
        }
        Ok(None)
    }

    /// Iterator sources for a merged scan starting at `start`, newest source
    /// first is not required; sequence numbers decide winners.
    pub fn scan_sources<'a>(&'a self, start: &[u8]) -> Vec<SourceIter<'a>> {
        let mut sources: Vec<SourceIter<'a>> = Vec::new();
        let mem = self
            .memtable
            .range_from(start)
            .map(|(k, se)| Ok((k.clone(), se.clone())));
        sources.push(Box::new(mem));
        for (i, level) in self.levels.iter().enumerate() {
            if i == 0 {
                for table in level {
                    sources.push(Box::new(table.iter_from(Some(start))));
                }
            } else if !level.is_empty() {
                sources.push(Box::new(LevelIter::new(level, start)));
            }
        }
        sources
    }

    /// Merged scan: ascending keys, newest version per key, tombstones
    /// excluded. Stops after `limit` entries or at `end_key` (exclusive).
    pub fn scan(
        &self,
        start: &[u8],
        limit: ScanLimit<'_>,
    ) -> Result<Vec<(Vec<u8>, SequencedEntry)>> {
        let sources = self.scan_sources(start);
        let mut merge = MergeIter::new(sources)?;
        let mut out = Vec::new();
        while let Some((key, se)) = merge.next_newest()? {
            match &limit {
                ScanLimit::Count(n) => {
                    if out.len() >= *n {
                        break;
                    }
                }
                ScanLimit::EndKey(end) => {
                    if key.as_slice() >= end {
                        break;
                    }
                }
            }
            if !matches!(se.entry, IndexEntry::Tombstone) {
                out.push((key, se));
            }
        }
        Ok(out)
    }

    /// Flushes the memtable to a new level-0 SSTable. No-op when empty.
    pub fn flush_memtable(&mut self) -> Result<()> {
        if self.memtable.is_empty() {
            return Ok(());
        }
        let id = self.next_id;
        self.next_id += 1;
        let entries = self.memtable.take();
        let meta = sstable::write_table(
            &self.dir,
            id,
            0,
            entries.into_iter(),
            self.counters.clone(),
            self.fault.clone(),
        )?;
        let table = SsTable::open(&self.dir, meta, self.counters.clone(), self.fault.clone())?;
        if self.levels.is_empty() {
            self.levels.push(Vec::new());
        }
        self.levels[0].push(Arc::new(table));
        self.write_manifest()
    }

    fn level_bytes(&self, level: usize) -> u64 {
        self.levels.get(level).map(|l| l.iter().map(|t| t.file_len).sum()).unwrap_or(0)
    }

    fn level_capacity(&self, level: usize) -> u64 {
        debug_assert!(level >= 1);
        self.config.level1_max_bytes * self.config.fanout.pow(level as u32 - 1)
    }

    fn over_capacity_level(&self) -> Option<usize> {
        if self.levels.first().map(|l| l.len()).unwrap_or(0) > self.config.l0_max_tables {
            return Some(0);
        }
        for level in 1..self.levels.len() {
            if self.level_bytes(level) > self.level_capacity(level) {
                return Some(level);
            }
        }
        None
    }

    pub fn maybe_compact(&mut self) -> Result<CompactionStats> {
        let mut total = CompactionStats::default();
        while let Some(level) = self.over_capacity_level() {
            let stats = self.compact(level)?;
            total.bytes_read += stats.bytes_read;
            total.bytes_written += stats.bytes_written;
        }
        Ok(total)
    }

    /// True if any table deeper than `below` could contain `key`; used to
    /// decide whether a tombstone can be dropped during compaction.
    fn key_may_exist_at_or_below(&self, key: &[u8], below: usize) -> bool {
        for level in self.levels.iter().skip(below) {
            for t in level {
                if t.meta.contains(key) {
                    return true;
                }
            }
        }
        false
    }

    /// Merges `level` into `level + 1`.
    pub fn compact(&mut self, level: usize) -> Result<CompactionStats> {
        while self.levels.len() <= level + 1 {
            self.levels.push(Vec::new());
        }
        let upper: Vec<Arc<SsTable>> = if level == 0 {
            self.levels[0].clone()
        } else {
            if self.levels[level].is_empty() {
                return Ok(CompactionStats::default());
            }
            let cursor = self.compact_cursor.get(level).cloned().unwrap_or_default();
            let pick = self.levels[level]
                .iter()
                .find(|t| t.meta.min_key > cursor)
                .or_else(|| self.levels[level].first())
                .unwrap()
                .clone();
            vec![pick]
        };
        if upper.is_empty() {
            return Ok(CompactionStats::default());
        }
        let min = upper.iter().map(|t| &t.meta.min_key).min().unwrap().clone();
        let max = upper.iter().map(|t| &t.meta.max_key).max().unwrap().clone();
        let lower: Vec<Arc<SsTable>> = self.levels[level + 1]
            .iter()
            .filter(|t| t.meta.overlaps(&min, &max))
            .cloned()
            .collect();

        let inputs: Vec<Arc<SsTable>> = upper.iter().chain(lower.iter()).cloned().collect();
        let stats = self.merge_tables(&inputs, level + 1, level + 2)?;

        while self.compact_cursor.len() <= level {
            self.compact_cursor.push(Vec::new());
        }
        self.compact_cursor[level] = max;
        Ok(stats)
    }

    /// Merges `inputs` into new tables at `target_level`, dropping superseded
    /// versions, and dropping tombstones when no level at or below
    /// `tombstone_check_level` may contain the key.
    fn merge_tables(
        &mut self,
        inputs: &[Arc<SsTable>],
        target_level: usize,
        tombstone_check_level: usize,
    ) -> Result<CompactionStats> {
        let mut stats = CompactionStats::default();
        let input_ids: std::collections::HashSet<u64> = inputs.iter().map(|t| t.meta.id).collect();
        for t in inputs {
            stats.bytes_read += t.file_len;
        }

        let mut outputs: Vec<SsTableMeta> = Vec::new();
        {
            let sources: Vec<SourceIter<'_>> =
                inputs.iter().map(|t| Box::new(t.iter_from(None)) as SourceIter<'_>).collect();
            let mut merge = MergeIter::new(sources)?;
            let mut pending: Vec<(Vec<u8>, SequencedEntry)> = Vec::new();
            let mut pending_bytes = 0usize;
            let mut ids = Vec::new();

            while let Some((key, se)) = merge.next_newest()? {
                if matches!(se.entry, IndexEntry::Tombstone)
                    && !self.key_may_exist_at_or_below(&key, tombstone_check_level)
                {
                    continue;
                }
                pending_bytes += se.entry.encoded_len(&key);
                pending.push((key, se));
                if pending_bytes >= self.config.sstable_target_bytes {
                    let id = self.next_id;
                    self.next_id += 1;
                    ids.push(id);
                    let meta = sstable::write_table(
                        &self.dir,
                        id,
                        target_level,
                        pending.drain(..),
                        self.counters.clone(),
                        self.fault.clone(),
                    )?;
                    outputs.push(meta);
                    pending_bytes = 0;
                }
            }
            if !pending.is_empty() {
                let id = self.next_id;
                self.next_id += 1;
                let meta = sstable::write_table(
                    &self.dir,
                    id,
                    target_level,
                    pending.drain(..),
                    self.counters.clone(),
                    self.fault.clone(),
                )?;
                outputs.push(meta);
            }
        }

        // Swap inputs for outputs in the level structure.
        for level in self.levels.iter_mut() {
            level.retain(|t| !input_ids.contains(&t.meta.id));
        }
        while self.levels.len() <= target_level {
            self.levels.push(Vec::new());
        }
        for meta in outputs {
            let table =
                SsTable::open(&self.dir, meta, self.counters.clone(), self.fault.clone())?;
            stats.bytes_written += table.file_len;
            self.levels[target_level].push(Arc::new(table));
        }
        self.levels[target_level].sort_by(|a, b| a.meta.min_key.cmp(&b.meta.min_key));
        self.write_manifest()?;
        for t in inputs {
            t.remove_file(&self.dir)?;
        }

        self.metrics.compactions.fetch_add(1, Ordering::Relaxed);
        self.metrics.compaction_bytes_read.fetch_add(stats.bytes_read, Ordering::Relaxed);
        self.metrics.compaction_bytes_written.fetch_add(stats.bytes_written, Ordering::Relaxed);
        Ok(stats)
    }

    /// Manual full compaction: merges every table into a single sorted run.
    pub fn compact_all(&mut self) -> Result<CompactionStats> {
        self.flush_memtable()?;
        let inputs: Vec<Arc<SsTable>> = self.levels.iter().flatten().cloned().collect();
        if inputs.is_empty() {
            return Ok(CompactionStats::default());
        }
        let target = self.levels.len().max(2) - 1;
        self.merge_tables(&inputs, target.max(1), usize::MAX)
    }

    /// Per-level table metadata, for invariant checks and reporting.
    pub fn level_metas(&self) -> Vec<Vec<SsTableMeta>> {
        self.levels.iter().map(|l| l.iter().map(|t| t.meta.clone()).collect()).collect()
    }

    pub fn table_count(&self) -> usize {
        self.levels.iter().map(|l| l.len()).sum()
    }
}

pub type SourceIter<'a> = Box<dyn Iterator<Item = Result<(Vec<u8>, SequencedEntry)>> + 'a>;

/// Concatenated iterator over one level's disjoint, sorted tables.
struct LevelIter<'a> {
    tables: &'a [Arc<SsTable>],
    idx: usize,
    current: Option<sstable::TableIter<'a>>,
    start: Vec<u8>,
}

impl<'a> LevelIter<'a> {
    fn new(tables: &'a [Arc<SsTable>], start: &[u8]) -> LevelIter<'a> {
        let idx = tables.partition_point(|t| t.meta.max_key.as_slice() < start);
        LevelIter { tables, idx, current: None, start: start.to_vec() }
    }
}

impl<'a> Iterator for LevelIter<'a> {
    type Item = Result<(Vec<u8>, SequencedEntry)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(iter) = &mut self.current {
                if let Some(item) = iter.next() {
                    return Some(item);
                }
                self.current = None;
                self.idx += 1;
            }
            let table = self.tables.get(self.idx)?;
            self.current = Some(table.iter_from(Some(&self.start)));
        }
    }
}

struct HeapEntry {
    key: Vec<u8>,
    se: SequencedEntry,
    source: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key && self.se.seq == other.se.seq
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        // BinaryHeap is a max-heap; invert so the smallest key (then the
        // highest sequence) pops first.
        other
            .key
            .cmp(&self.key)
            .then_with(|| self.se.seq.cmp(&other.se.seq))
    }
}

/// K-way merge over sorted sources yielding the newest version per key.
pub struct MergeIter<'a> {
    sources: Vec<SourceIter<'a>>,
    heap: BinaryHeap<HeapEntry>,
}

impl<'a> MergeIter<'a> {
    pub fn new(sources: Vec<SourceIter<'a>>) -> Result<MergeIter<'a>> {
        let mut merge = MergeIter { sources, heap: BinaryHeap::new() };
        for i in 0..merge.sources.len() {
            merge.advance(i)?;
        }
        Ok(merge)
    }

    fn advance(&mut self, source: usize) -> Result<()> {
        if let Some(item) = self.sources[source].next() {
            let (key, se) = item?;
            self.heap.push(HeapEntry { key, se, source });
        }
        Ok(())
    }

    /// Next key in ascending order with its newest entry; older versions of
    /// the same key are consumed and discarded.
    pub fn next_newest(&mut self) -> Result<Option<(Vec<u8>, SequencedEntry)>> {
        let top = match self.heap.pop() {
            Some(t) => t,
            None => return Ok(None),
        };
        self.advance(top.source)?;
        while let Some(peek) = self.heap.peek() {
            if peek.key != top.key {
                break;
            }
            let dup = self.heap.pop().unwrap();
            self.advance(dup.source)?;
        }
        Ok(Some((top.key, top.se)))
    }
}

pub enum ScanLimit<'a> {
    Count(usize),
    EndKey(&'a [u8]),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{Area, ValueLocation};
    use std::collections::BTreeMap;

    fn test_index(dir: &Path, memtable_bytes: usize) -> LsmIndex {
        let metrics = StoreMetrics::new(IoCounters::new());
        let config = LsmConfig {
            memtable_bytes,
            sstable_target_bytes: 16 << 10,
            l0_max_tables: 4,
            level1_max_bytes: 64 << 10,
            fanout: 10,
        };
        LsmIndex::open(dir, config, metrics, None).unwrap()
    }

    fn loc(offset: u64) -> IndexEntry {
        IndexEntry::Location(ValueLocation::new(Area::SegmentStore, offset, 64))
    }

    #[test]
    fn read_your_writes_and_last_writer_wins() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = test_index(dir.path(), 1 << 20);
        idx.put(b"k", IndexEntry::Inline(b"v".to_vec())).unwrap();
        assert_eq!(
            idx.get(b"k").unwrap().unwrap().entry,
            IndexEntry::Inline(b"v".to_vec())
        );
        idx.put(b"k", loc(100)).unwrap();
        idx.put(b"k", loc(200)).unwrap();
        assert_eq!(idx.get(b"k").unwrap().unwrap().entry, loc(200));
        assert!(idx.get(b"missing").unwrap().is_none());
    }

    #[test]
    fn memtable_capacity_triggers_single_flush() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = test_index(dir.path(), 64 << 10);
        let mut i = 0u32;
        while idx.table_count() == 0 {
            idx.put(format!("key{i:08}").as_bytes(), IndexEntry::Inline(vec![0u8; 100]))
                .unwrap();
            i += 1;
            assert!(i < 10_000);
        }
        assert_eq!(idx.table_count(), 1);
        assert_eq!(idx.level_metas()[0].len(), 1);
        assert_eq!(idx.memtable_bytes(), 0);
    }

    #[test]
    fn newer_level_wins_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = test_index(dir.path(), 1 << 20);
        idx.put(b"dup", loc(1)).unwrap();
        idx.flush_memtable().unwrap();
        idx.compact(0).unwrap(); // move to L1
        idx.put(b"dup", loc(2)).unwrap();
        idx.flush_memtable().unwrap();
        // Now L0 has the newer version, L1 the older.
        assert_eq!(idx.get(b"dup").unwrap().unwrap().entry, loc(2));
    }

    #[test]
    fn compaction_moves_and_dedupes() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = test_index(dir.path(), 1 << 20);
        idx.put(b"a", loc(1)).unwrap();
        idx.put(b"b", loc(2)).unwrap();
        idx.flush_memtable().unwrap();
        let stats = idx.compact(0).unwrap();
        assert!(stats.bytes_written > 0);
        assert!(idx.level_metas()[0].is_empty());
        assert_eq!(idx.level_metas()[1].len(), 1);

        idx.put(b"a", loc(10)).unwrap();
        idx.flush_memtable().unwrap();
        idx.compact(0).unwrap();
        // One entry per key after merging both versions.
        let metas = idx.level_metas();
        let total: u64 = metas[1].iter().map(|m| m.entry_count).sum();
        assert_eq!(total, 2);
        assert_eq!(idx.get(b"a").unwrap().unwrap().entry, loc(10));
    }

    #[test]
    fn scan_excludes_tombstones_and_orders() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = test_index(dir.path(), 1 << 20);
        assert!(idx.scan(b"", ScanLimit::Count(10)).unwrap().is_empty());
        idx.put(b"a", IndexEntry::Inline(b"1".to_vec())).unwrap();
        idx.put(b"b", IndexEntry::Inline(b"2".to_vec())).unwrap();
        idx.put(b"c", IndexEntry::Inline(b"3".to_vec())).unwrap();
        let all = idx.scan(b"a", ScanLimit::Count(3)).unwrap();
        assert_eq!(all.iter().map(|(k, _)| k.clone()).collect::<Vec<_>>(), vec![
            b"a".to_vec(),
            b"b".to_vec(),
            b"c".to_vec()
        ]);
        idx.put(b"b", IndexEntry::Tombstone).unwrap();
        let got = idx.scan(b"a", ScanLimit::Count(3)).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].0, b"a");
        assert_eq!(got[1].0, b"c");
    }

    #[test]
    fn levels_stay_disjoint_after_compactions() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = test_index(dir.path(), 8 << 10);
        let mut rng = 1u64;
        for _ in 0..20_000 {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let k = format!("key{:06}", rng % 3000);
            idx.put(k.as_bytes(), loc(rng)).unwrap();
        }
        for (i, level) in idx.level_metas().iter().enumerate().skip(1) {
            let mut sorted = level.clone();
            sorted.sort_by(|a, b| a.min_key.cmp(&b.min_key));
            for pair in sorted.windows(2) {
                assert!(
                    pair[0].max_key < pair[1].min_key,
                    "level {i} ranges overlap: {:?} vs {:?}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn randomized_model_equivalence() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = test_index(dir.path(), 8 << 10);
        let mut model: BTreeMap<Vec<u8>, Option<u64>> = BTreeMap::new();
        let mut rng = 7u64;
        for i in 0..30_000u64 {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let key = format!("key{:05}", rng % 2000).into_bytes();
            match rng % 10 {
                0..=5 => {
                    idx.put(&key, loc(i)).unwrap();
                    model.insert(key, Some(i));
                }
                6 | 7 => {
                    idx.put(&key, IndexEntry::Tombstone).unwrap();
                    model.insert(key, None);
                }
                8 => {
                    let got = idx.get(&key).unwrap();
                    let want = model.get(&key).cloned().flatten();
                    match want {
                        None => assert!(
                            got.is_none() || matches!(got.unwrap().entry, IndexEntry::Tombstone)
                        ),
                        Some(off) => assert_eq!(got.unwrap().entry, loc(off)),
                    }
                }
                _ => {
                    let got = idx.scan(&key, ScanLimit::Count(5)).unwrap();
                    let want: Vec<(Vec<u8>, u64)> = model
                        .range(key.clone()..)
                        .filter_map(|(k, v)| v.map(|off| (k.clone(), off)))
                        .take(5)
                        .collect();
                    assert_eq!(got.len(), want.len());
                    for ((gk, gse), (wk, woff)) in got.iter().zip(want.iter()) {
                        assert_eq!(gk, wk);
                        assert_eq!(gse.entry, loc(*woff));
                    }
                }
            }
        }
    }

    #[test]
    fn reopen_recovers_flushed_state() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut idx = test_index(dir.path(), 1 << 20);
            for i in 0..100u32 {
                idx.put(format!("key{i:04}").as_bytes(), loc(i as u64)).unwrap();
            }
            idx.flush_memtable().unwrap();
        }
        let idx = test_index(dir.path(), 1 << 20);
        for i in 0..100u32 {
            assert_eq!(
                idx.get(format!("key{i:04}").as_bytes()).unwrap().unwrap().entry,
                loc(i as u64)
            );
        }
        assert!(idx.last_seq() >= 100);
    }

    #[test]
    fn full_compaction_collapses_to_one_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = test_index(dir.path(), 4 << 10);
        for i in 0..2000u32 {
            idx.put(format!("key{:04}", i % 700).as_bytes(), loc(i as u64)).unwrap();
        }
        idx.put(b"key0000", IndexEntry::Tombstone).unwrap();
        idx.compact_all().unwrap();
        let metas = idx.level_metas();
        let populated: Vec<usize> =
            metas.iter().enumerate().filter(|(_, l)| !l.is_empty()).map(|(i, _)| i).collect();
        assert_eq!(populated.len(), 1);
        let total: u64 = metas[populated[0]].iter().map(|m| m.entry_count).sum();
        // 700 distinct keys, one tombstoned and dropped by the full merge.
        assert_eq!(total, 699);
        assert!(idx.get(b"key0000").unwrap().is_none());
    }
}
