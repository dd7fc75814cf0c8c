//! The public store: PUT/GET/DELETE/SCAN over a write cache, the LSM index,
//! and one of three value backends (hash-grouped segment store, vLog, or
//! whole pairs inline in the LSM).
//!
//! All mutations funnel through one writer gate; reads run concurrently
//! against published state. Flushes and GC block mutations, matching the
//! blocking model the measurements assume.

use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cache::{self, CacheValue, WriteCache};
use crate::config::{StoreConfig, ValueBackend};
use crate::error::{Error, Result};
use crate::gc::{self, CircularGcPlan, GcPlan, GcPolicy, GreedyHeap, LiteEntry, PlannedWrite, WriteSrc};
use crate::io::IoCounters;
use crate::journal::{
    FlushGroupDelta, FlushRecord, Journal, ReplayBody, ReplayOp, UpdateEntry, WriteRef,
};
use crate::lsm::{IndexEntry, LsmIndex, MergeIter, ScanLimit, SequencedEntry, SourceIter};
use crate::metrics::{GcStats, Phase, StoreMetrics};
use crate::record::{
    self, encode_record, encoded_len, hash_group, Area, GroupId, ValueLocation, FLAG_TOMBSTONE,
};
use crate::segment::{SegmentStore, SENTINEL_LEN};
use crate::vlog::VLog;

const CLEAN_MARKER: &str = "CLEAN";
const META_FILE: &str = "STORE_META";
const META_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default)]
pub struct RecoveryReport {
    pub replayed_flushes: u64,
    pub replayed_gcs: u64,
}

#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub keys_checked: u64,
    pub groups_checked: u64,
    pub separated_keys: u64,
    pub inline_keys: u64,
    pub cold_keys: u64,
}

enum Backend {
    Seg(SegmentStore),
    Vlog(VLog),
    Inline,
}

struct Inner {
    config: StoreConfig,
    lsm: LsmIndex,
    backend: Backend,
    cache: WriteCache,
    journal: Option<Journal>,
    heap: GreedyHeap,
    rng: ChaCha8Rng,
    /// Flush operations since open; the CBA age unit.
    flush_ops: u64,
    /// Fallback op counter when journaling is off.
    local_op: u64,
    /// Ops applied to the in-memory index but not yet durable in an SSTable.
    applied_ops: Vec<u64>,
    ever_separated: bool,
    recovery: RecoveryReport,
    closed: bool,
}

pub struct Store {
    inner: RwLock<Inner>,
    metrics: Arc<StoreMetrics>,
    dir: PathBuf,
}

/// What a cached entry turns into at flush time.
enum Destiny {
    Inline(Vec<u8>),
    Tombstone,
    Separated,
}

struct PendingOp {
    key: Vec<u8>,
    destiny: Destiny,
    /// Encoded record bound for the value backend (separated value, or a
    /// tombstone record that must kill older group versions).
    record: Option<Vec<u8>>,
    location: Option<ValueLocation>,
}

/// One coalesced device write produced by flush planning.
struct WriteJob {
    offset: u64,
    bytes: Vec<u8>,
}

#[derive(Default)]
struct FlushPlan {
    jobs: Vec<WriteJob>,
    gap_stamps: Vec<u64>,
    sentinels: Vec<u64>,
    group_deltas: Vec<FlushGroupDelta>,
    vlog_head_after: u64,
    batches: u64,
    separated_bytes: u64,
    groups_touched: Vec<(GroupId, u64)>,
}

impl Store {
    pub fn open(config: StoreConfig) -> Result<Store> {
        std::fs::create_dir_all(&config.dir)?;
        check_meta(&config)?;
        let counters = IoCounters::new();
        let metrics = StoreMetrics::new(counters.clone());

        let lsm = LsmIndex::open(
            &config.dir.join("lsm"),
            config.lsm_config(),
            metrics.clone(),
            config.fault.clone(),
        )?;
        let backend = match config.backend {
            ValueBackend::HashKv => Backend::Seg(SegmentStore::open(
                &config.dir,
                config.geometry(),
                counters.clone(),
                config.fault.clone(),
            )?),
            ValueBackend::Vlog => Backend::Vlog(VLog::open(
                &config.dir,
                config.vlog_capacity(),
                config.vlog_chunk_bytes,
                counters.clone(),
                config.fault.clone(),
            )?),
            ValueBackend::Inline => Backend::Inline,
        };
        let (journal, replay) = if config.journaling {
            let (j, r) = Journal::open(&config.dir, counters.clone(), config.fault.clone())?;
            (Some(j), r)
        } else {
            (None, Vec::new())
        };

        let cache = WriteCache::new(config.write_cache_bytes.max(1));
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let ever_separated = match &backend {
            Backend::Seg(seg) => (0..seg.geometry.n_main)
                .any(|g| seg.table.extent_consumed(&seg.geometry, GroupId(g)) > 0),
            Backend::Vlog(v) => v.head > 0,
            Backend::Inline => false,
        };
        let mut inner = Inner {
            config,
            lsm,
            backend,
            cache,
            journal,
            heap: GreedyHeap::default(),
            rng,
            flush_ops: 0,
            local_op: 0,
            applied_ops: Vec::new(),
            ever_separated,
            recovery: RecoveryReport::default(),
            closed: false,
        };

        let clean_path = inner.config.dir.join(CLEAN_MARKER);
        let was_clean = clean_path.exists();
        if was_clean {
            std::fs::remove_file(&clean_path)?;
        } else {
            inner.recover(&metrics, replay)?;
        }
        if let Backend::Seg(seg) = &inner.backend {
            inner.heap.rebuild(&seg.table);
        }

        let dir = inner.config.dir.clone();
        Ok(Store { inner: RwLock::new(inner), metrics, dir })
    }

    pub fn metrics(&self) -> &Arc<StoreMetrics> {
        &self.metrics
    }

    pub fn recovery_report(&self) -> RecoveryReport {
        self.inner.read().unwrap().recovery
    }

    pub fn config(&self) -> StoreConfig {
        self.inner.read().unwrap().config.clone()
    }

    pub fn put(&self, key: &[u8], value: &[u8]) -> Result<()> {
        self.metrics.puts.fetch_add(1, Ordering::Relaxed);
        let mut inner = self.inner.write().unwrap();
        inner.check_open()?;
        inner.validate_pair(key, Some(value))?;
        inner.cache_insert(&self.metrics, key, CacheValue::Value(value.to_vec()))
    }

    pub fn delete(&self, key: &[u8]) -> Result<()> {
        self.metrics.deletes.fetch_add(1, Ordering::Relaxed);
        let mut inner = self.inner.write().unwrap();
        inner.check_open()?;
        inner.validate_pair(key, None)?;
        inner.cache_insert(&self.metrics, key, CacheValue::Tombstone)
    }

    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        self.metrics.gets.fetch_add(1, Ordering::Relaxed);
        let inner = self.inner.read().unwrap();
        inner.check_open()?;
        match inner.cache.get(key) {
            Some(CacheValue::Value(v)) => return Ok(Some(v.clone())),
            Some(CacheValue::Tombstone) => return Ok(None),
            None => {}
        }
        match inner.lsm.get(key)? {
            None => Ok(None),
            Some(se) => match se.entry {
                IndexEntry::Tombstone => Ok(None),
                IndexEntry::Inline(v) => Ok(Some(v)),
                IndexEntry::Location(loc) => {
                    let rec = inner.read_location(loc)?;
                    if rec.key != key {
                        return Err(Error::CorruptRecord(format!(
                            "location {loc:?} holds a record for a different key"
                        )));
                    }
                    Ok(Some(rec.value))
                }
            },
        }
    }

    /// Range scan: ascending keys from `start`, at most `count` pairs (or up
    /// to an exclusive end key). Merges the write cache with the index; when
    /// read-ahead is enabled, a first pass issues prefetch advisories for
    /// every separated value before the read pass.
    pub fn scan(&self, start: &[u8], limit: ScanLimit<'_>) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.metrics.scans.fetch_add(1, Ordering::Relaxed);
        let inner = self.inner.read().unwrap();
        inner.check_open()?;

        let mut sources: Vec<SourceIter<'_>> = Vec::new();
        let cache_src = inner.cache.range_from(start).map(|(k, v)| {
            let entry = match v {
                CacheValue::Value(bytes) => IndexEntry::Inline(bytes.clone()),
                CacheValue::Tombstone => IndexEntry::Tombstone,
            };
            Ok((k.clone(), SequencedEntry { seq: u64::MAX, entry }))
        });
        sources.push(Box::new(cache_src));
        sources.extend(inner.lsm.scan_sources(start));
        let mut merge = MergeIter::new(sources)?;

        let mut picked: Vec<(Vec<u8>, IndexEntry)> = Vec::new();
        while let Some((key, se)) = merge.next_newest()? {
            match &limit {
                ScanLimit::Count(n) => {
                    if picked.len() >= *n {
                        break;
                    }
                }
                ScanLimit::EndKey(end) => {
                    if key.as_slice() >= *end {
                        break;
                    }
                }
            }
            if !matches!(se.entry, IndexEntry::Tombstone) {
                picked.push((key, se.entry));
            }
        }

        if inner.config.scan_read_ahead {
            for (_, entry) in &picked {
                if let IndexEntry::Location(loc) = entry {
                    inner.advise_location(*loc);
                }
            }
        }

        let mut out = Vec::with_capacity(picked.len());
        for (key, entry) in picked {
            let value = match entry {
                IndexEntry::Inline(v) => v,
                IndexEntry::Location(loc) => {
                    let rec = inner.read_location(loc)?;
                    if rec.key != key {
                        return Err(Error::CorruptRecord(format!(
                            "location {loc:?} holds a record for a different key"
                        )));
                    }
                    rec.value
                }
                IndexEntry::Tombstone => unreachable!(),
            };
            out.push((key, value));
        }
        Ok(out)
    }

    /// Flushes the write cache through the journaled flush sequence.
    pub fn flush(&self) -> Result<()> {
        let mut inner = self.inner.write().unwrap();
        inner.check_open()?;
        inner.flush_cache(&self.metrics)
    }

    /// Runs one GC cycle (candidate selection + collection) regardless of
    /// free-space pressure. Returns the stats of the collected group.
    pub fn force_gc(&self) -> Result<GcStats> {
        let mut inner = self.inner.write().unwrap();
        inner.check_open()?;
        match &inner.backend {
            Backend::Seg(_) => inner.collect_space(&self.metrics),
            Backend::Vlog(_) => inner.vlog_gc(&self.metrics),
            Backend::Inline => Err(Error::NothingToCollect),
        }
    }

    /// Toggles scan read-ahead advisories at runtime (the scan benchmark
    /// compares both settings on one store).
    pub fn set_scan_read_ahead(&self, on: bool) {
        self.inner.write().unwrap().config.scan_read_ahead = on;
    }

    /// Manual full LSM compaction (used before scan benchmarks).
    pub fn compact_all(&self) -> Result<()> {
        let mut inner = self.inner.write().unwrap();
        inner.check_open()?;
        inner.lsm.compact_all()?;
        Ok(())
    }

    /// Per-group record counts, for distribution reporting. `None` for
    /// non-hash backends.
    pub fn group_record_counts(&self) -> Option<Vec<u64>> {
        let inner = self.inner.read().unwrap();
        match &inner.backend {
            Backend::Seg(seg) => Some(seg.table.groups.iter().map(|g| g.records).collect()),
            _ => None,
        }
    }

    /// Fraction of provisioned value-store space (main + reserved regions)
    /// holding data, live or stale. `None` for non-hash backends.
    pub fn utilization(&self) -> Option<f64> {
        let inner = self.inner.read().unwrap();
        match &inner.backend {
            Backend::Seg(seg) => {
                let occupied: u64 = (0..seg.geometry.n_main)
                    .map(|g| seg.table.occupied_bytes(&seg.geometry, GroupId(g)))
                    .sum();
                Some(occupied as f64 / seg.geometry.provisioned_bytes() as f64)
            }
            _ => None,
        }
    }

    /// Total store footprint on disk: value store, LSM tables, journals.
    pub fn store_size_bytes(&self) -> u64 {
        fn dir_size(dir: &std::path::Path) -> u64 {
            let mut total = 0;
            if let Ok(entries) = std::fs::read_dir(dir) {
                for e in entries.flatten() {
                    if let Ok(meta) = e.metadata() {
                        if meta.is_file() {
                            total += meta.len();
                        } else if meta.is_dir() {
                            total += dir_size(&e.path());
                        }
                    }
                }
            }
            total
        }
        dir_size(&self.dir)
    }

    /// Drops the value-store pages from the page cache (best effort). The
    /// scan benchmark uses this to compare read-ahead on a cold cache.
    pub fn evict_page_cache(&self) {
        let inner = self.inner.read().unwrap();
        match &inner.backend {
            Backend::Seg(seg) => seg.file().advise_dontneed(0, 0),
            Backend::Vlog(v) => v.file().advise_dontneed(0, 0),
            Backend::Inline => {}
        }
        // LSM tables too, so inline-backend comparisons start equally cold.
        if let Ok(entries) = std::fs::read_dir(self.dir.join("lsm")) {
            for entry in entries.flatten() {
                if let Ok(f) = std::fs::File::open(entry.path()) {
                    use std::os::unix::io::AsRawFd;
                    unsafe {
                        libc::posix_fadvise(f.as_raw_fd(), 0, 0, libc::POSIX_FADV_DONTNEED);
                    }
                }
            }
        }
    }

    /// Flushes, persists the index, checkpoints, recycles journals, and
    /// writes the clean-shutdown marker. The store is unusable afterwards.
    pub fn close(&self) -> Result<()> {
        let mut inner = self.inner.write().unwrap();
        if inner.closed {
            return Ok(());
        }
        inner.flush_cache(&self.metrics)?;
        inner.persist(&self.metrics)?;
        let clean = inner.config.dir.join(CLEAN_MARKER);
        std::fs::write(&clean, b"clean\n")?;
        let f = std::fs::File::open(&clean)?;
        f.sync_all()?;
        inner.closed = true;
        Ok(())
    }

    /// Full-store consistency audit: segment-table exclusivity, decode-scan
    /// of every group extent against the table's accounting, and agreement
    /// between every index entry and the record it points at.
    pub fn audit(&self) -> Result<AuditReport> {
        let inner = self.inner.write().unwrap();
        let mut report = AuditReport::default();

        let io = &self.metrics.io;
        if io.total_written() != io.grown() + io.overwritten() {
            return Err(Error::CorruptRecord(format!(
                "write accounting mismatch: {} written vs {} grown + {} overwritten",
                io.total_written(),
                io.grown(),
                io.overwritten()
            )));
        }

        if let Backend::Seg(seg) = &inner.backend {
            seg.table.check_exclusivity(&seg.geometry)?;
            let empty_cache = WriteCache::new(1);
            for g in 0..seg.geometry.n_main {
                let group = GroupId(g);
                let (buf, parts) = seg.read_group_extent(group)?;
                let scan = gc::scan_group(&buf, &parts, &empty_cache)
                    .map_err(|e| Error::CorruptRecord(format!("group {g}: {e}")))?;
                let consumed = seg.table.extent_consumed(&seg.geometry, group);
                let gaps = seg.table.groups[group.index()].gap_bytes;
                if scan.scanned_bytes + gaps != consumed {
                    return Err(Error::CorruptRecord(format!(
                        "group {g}: scan found {} bytes + {gaps} gap bytes != extent {consumed}",
                        scan.scanned_bytes
                    )));
                }
                report.groups_checked += 1;
            }
        }

        // Every reachable index entry must resolve to a matching record.
        let entries = inner.lsm.scan(b"", ScanLimit::Count(usize::MAX))?;
        for (key, se) in entries {
            let resolved = match inner.cache.get(&key) {
                Some(CacheValue::Value(_)) | Some(CacheValue::Tombstone) => {
                    // Cache shadows the index; nothing to verify on disk.
                    report.keys_checked += 1;
                    continue;
                }
                None => se.entry,
            };
            match resolved {
                IndexEntry::Inline(_) => report.inline_keys += 1,
                IndexEntry::Tombstone => {}
                IndexEntry::Location(loc) => {
                    let rec = inner.read_location(loc)?;
                    if rec.key != key {
                        return Err(Error::CorruptRecord(format!(
                            "index points {loc:?} at a record for another key"
                        )));
                    }
                    match loc.area {
                        Area::SegmentStore => {
                            report.separated_keys += 1;
                            if let Backend::Seg(seg) = &inner.backend {
                                let group = hash_group(&key, seg.geometry.n_main);
                                let in_main = loc.offset >= seg.geometry.main_offset(group)
                                    && loc.offset
                                        < seg.geometry.main_offset(group) + seg.geometry.main_size;
                                let in_logs = seg.table.groups[group.index()]
                                    .log_segments
                                    .iter()
                                    .any(|&id| {
                                        loc.offset >= seg.geometry.log_offset(id)
                                            && loc.offset
                                                < seg.geometry.log_offset(id)
                                                    + seg.geometry.log_size
                                    });
                                if !in_main && !in_logs {
                                    return Err(Error::CorruptRecord(format!(
                                        "location {loc:?} outside group {} partition",
                                        group.0
                                    )));
                                }
                            }
                        }
                        Area::ColdLog => report.cold_keys += 1,
                        Area::Vlog => report.separated_keys += 1,
                    }
                }
            }
            report.keys_checked += 1;
        }
        Ok(report)
    }
}

fn check_meta(config: &StoreConfig) -> Result<()> {
    let path = config.dir.join(META_FILE);
    let geometry = config.geometry();
    let expect = format!(
        "hashkv-store v{META_VERSION}\nbackend {}\nn_main {}\nmain_size {}\nlog_size {}\nn_log {}\nvlog_capacity {}\n",
        config.backend.name(),
        geometry.n_main,
        geometry.main_size,
        geometry.log_size,
        geometry.n_log,
        config.vlog_capacity(),
    );
    if path.exists() {
        let got = std::fs::read_to_string(&path)?;
        if got != expect {
            return Err(Error::IncompatibleStore(format!(
                "store at {} was created with different parameters",
                config.dir.display()
            )));
        }
    } else {
        std::fs::write(&path, expect)?;
    }
    Ok(())
}

impl Inner {
    fn check_open(&self) -> Result<()> {
        if self.closed {
            return Err(Error::InvalidArgument("store is closed".into()));
        }
        Ok(())
    }

    fn op_id(&mut self) -> u64 {
        match &mut self.journal {
            Some(j) => j.begin_op(),
            None => {
                self.local_op += 1;
                self.local_op
            }
        }
    }

    fn validate_pair(&self, key: &[u8], value: Option<&[u8]>) -> Result<()> {
        if key.is_empty() || key.len() > record::MAX_KEY_LEN {
            return Err(Error::InvalidArgument(format!("key length {}", key.len())));
        }
        let Some(value) = value else { return Ok(()) };
        if value.len() >= u32::MAX as usize {
            return Err(Error::InvalidArgument("value too long".into()));
        }
        let encoded = encoded_len(key, value) as u64;
        let separated = !matches!(self.config.backend, ValueBackend::Inline)
            && encoded >= self.config.selective_threshold_bytes as u64;
        if separated {
            let max = match &self.backend {
                Backend::Seg(seg) => seg.geometry.max_record_bytes(),
                Backend::Vlog(v) => v.max_record_bytes(),
                Backend::Inline => u64::MAX,
            };
            if encoded > max {
                return Err(Error::InvalidArgument(format!(
                    "encoded pair of {encoded} bytes exceeds the {max}-byte record limit"
                )));
            }
        }
        Ok(())
    }

    fn cache_insert(
        &mut self,
        metrics: &StoreMetrics,
        key: &[u8],
        value: CacheValue,
    ) -> Result<()> {
        let start = Instant::now();
        let outcome = self.cache.put(key, value.clone())?;
        metrics.breakdown.add(Phase::Cache, start.elapsed().as_nanos() as u64);
        if outcome == cache::PutOutcome::Absorbed {
            return Ok(());
        }
        self.flush_cache(metrics)?;
        let start = Instant::now();
        let outcome = self.cache.put(key, value)?;
        metrics.breakdown.add(Phase::Cache, start.elapsed().as_nanos() as u64);
        debug_assert_eq!(outcome, cache::PutOutcome::Absorbed);
        Ok(())
    }

    fn read_location(&self, loc: ValueLocation) -> Result<record::KVRecord> {
        match (&self.backend, loc.area) {
            (Backend::Seg(seg), Area::SegmentStore) => seg.read_value(loc),
            (Backend::Seg(seg), Area::ColdLog) => seg.cold_read(loc),
            (Backend::Vlog(v), Area::Vlog) => v.read(loc),
            _ => Err(Error::InvalidLocation(format!(
                "location area {:?} does not belong to this backend",
                loc.area
            ))),
        }
    }

    fn advise_location(&self, loc: ValueLocation) {
        match (&self.backend, loc.area) {
            (Backend::Seg(seg), Area::SegmentStore) => {
                seg.file().advise_willneed(loc.offset, loc.length as u64)
            }
            (Backend::Seg(seg), Area::ColdLog) => {
                let base = seg.geometry.cold_base();
                match seg.geometry.cold_capacity {
                    None | Some(0) => seg.file().advise_willneed(base + loc.offset, loc.length as u64),
                    Some(cap) => {
                        let off = loc.offset % cap;
                        let first = (cap - off).min(loc.length as u64);
                        seg.file().advise_willneed(base + off, first);
                        if first < loc.length as u64 {
                            seg.file().advise_willneed(base, loc.length as u64 - first);
                        }
                    }
                }
            }
            (Backend::Vlog(v), Area::Vlog) => {
                let cap = v.capacity;
                let off = loc.offset % cap;
                let first = (cap - off).min(loc.length as u64);
                v.file().advise_willneed(off, first);
                if first < loc.length as u64 {
                    v.file().advise_willneed(0, loc.length as u64 - first);
                }
            }
            _ => {}
        }
    }

    /// True if the index currently maps `key` to a separated location, which
    /// means a flush that turns the key inline (or deletes it) must also
    /// write a tombstone record into the value store so scan-based validity
    /// sees the transition.
    fn index_has_location(&self, metrics: &StoreMetrics, key: &[u8]) -> Result<bool> {
        if !self.ever_separated {
            return Ok(false);
        }
        let _ = metrics;
        Ok(matches!(
            self.lsm.get(key)?,
            Some(SequencedEntry { entry: IndexEntry::Location(_), .. })
        ))
    }

    fn flush_cache(&mut self, metrics: &StoreMetrics) -> Result<()> {
        if self.cache.is_empty() {
            return Ok(());
        }
        let entries: Vec<(Vec<u8>, CacheValue)> =
            self.cache.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        self.flush_entries(metrics, &entries)?;
        self.cache.clear();
        Ok(())
    }

    /// The journaled flush sequence: destinies, placement planning (with GC
    /// retries), batched value writes, journal commit, index updates.
    fn flush_entries(
        &mut self,
        metrics: &StoreMetrics,
        entries: &[(Vec<u8>, CacheValue)],
    ) -> Result<()> {
        self.flush_ops += 1;
        metrics.flushes.fetch_add(1, Ordering::Relaxed);

        // Destiny per entry. Index lookups here decide whether inline puts
        // and deletes must leave a tombstone record in the value store.
        let meta_start = Instant::now();
        let mut pending: Vec<PendingOp> = Vec::with_capacity(entries.len());
        let inline_backend = matches!(self.config.backend, ValueBackend::Inline);
        let threshold = self.config.selective_threshold_bytes as u64;
        for (key, value) in entries {
            let op = match value {
                CacheValue::Value(v) => {
                    let encoded = encoded_len(key, v) as u64;
                    if inline_backend || encoded < threshold {
                        let needs_kill = !inline_backend
                            && matches!(self.config.backend, ValueBackend::HashKv)
                            && self.index_has_location(metrics, key)?;
                        PendingOp {
                            key: key.clone(),
                            destiny: Destiny::Inline(v.clone()),
                            record: needs_kill
                                .then(|| encode_record(FLAG_TOMBSTONE, key, &[]))
                                .transpose()?,
                            location: None,
                        }
                    } else {
                        PendingOp {
                            key: key.clone(),
                            destiny: Destiny::Separated,
                            record: Some(encode_record(0, key, v)?),
                            location: None,
                        }
                    }
                }
                CacheValue::Tombstone => {
                    let needs_kill = matches!(self.config.backend, ValueBackend::HashKv)
                        && self.index_has_location(metrics, key)?;
                    PendingOp {
                        key: key.clone(),
                        destiny: Destiny::Tombstone,
                        record: needs_kill
                            .then(|| encode_record(FLAG_TOMBSTONE, key, &[]))
                            .transpose()?,
                        location: None,
                    }
                }
            };
            pending.push(op);
        }
        metrics.breakdown.add(Phase::MetaFlush, meta_start.elapsed().as_nanos() as u64);

        // Plan placements, running GC between attempts when space runs out.
        let mut attempts = 0usize;
        let plan = loop {
            let flush_start = Instant::now();
            let result = self.plan_flush(&mut pending);
            metrics.breakdown.add(Phase::Flush, flush_start.elapsed().as_nanos() as u64);
            match result {
                Ok(plan) => break plan,
                Err(Error::NeedsGc) => {
                    attempts += 1;
                    let limit = match &self.backend {
                        Backend::Seg(seg) => 2 * seg.geometry.n_main as usize + 8,
                        Backend::Vlog(v) => {
                            2 * (v.capacity / v.chunk_bytes.max(1)) as usize + 8
                        }
                        Backend::Inline => 1,
                    };
                    if attempts > limit {
                        return Err(Error::OutOfSpace);
                    }
                    match &self.backend {
                        Backend::Seg(_) => match self.collect_space(metrics) {
                            Ok(_) => {}
                            Err(Error::NothingToCollect) => return Err(Error::OutOfSpace),
                            Err(e) => return Err(e),
                        },
                        Backend::Vlog(_) => match self.vlog_gc(metrics) {
                            Ok(_) => {}
                            Err(Error::NothingToCollect) => return Err(Error::OutOfSpace),
                            Err(e) => return Err(e),
                        },
                        Backend::Inline => unreachable!(),
                    }
                }
                Err(e) => return Err(e),
            }
        };

        // Write the planned batches (parallel across groups), stamp gaps and
        // sentinels, and make the value bytes durable before committing.
        let flush_start = Instant::now();
        self.execute_jobs(&plan.jobs)?;
        match &self.backend {
            Backend::Seg(seg) => {
                for &g in &plan.gap_stamps {
                    seg.stamp_sentinel(g)?;
                }
                for &s in &plan.sentinels {
                    seg.stamp_sentinel(s)?;
                }
                if self.config.journaling && !plan.jobs.is_empty() {
                    // Only this flush's ranges must be durable before the
                    // commit record; GC rewrites sync at journal recycling.
                    for job in &plan.jobs {
                        seg.file().sync_range(job.offset, job.bytes.len() as u64)?;
                    }
                }
            }
            Backend::Vlog(v) => {
                if self.config.journaling && !plan.jobs.is_empty() {
                    for job in &plan.jobs {
                        v.file().sync_range(job.offset, job.bytes.len() as u64)?;
                    }
                }
            }
            Backend::Inline => {}
        }
        metrics.breakdown.add(Phase::Flush, flush_start.elapsed().as_nanos() as u64);

        // Journal the metadata updates and commit.
        let meta_start = Instant::now();
        let updates: Vec<(Vec<u8>, UpdateEntry)> = pending
            .iter()
            .map(|op| {
                let entry = match (&op.destiny, op.location) {
                    (Destiny::Inline(v), _) => UpdateEntry::Inline(v.clone()),
                    (Destiny::Tombstone, _) => UpdateEntry::Tombstone,
                    (Destiny::Separated, Some(loc)) => UpdateEntry::Loc(loc),
                    (Destiny::Separated, None) => unreachable!("separated op without location"),
                };
                (op.key.clone(), entry)
            })
            .collect();
        let op_id = self.op_id();
        if let Some(journal) = &mut self.journal {
            let rec = FlushRecord {
                op_id,
                updates: updates.clone(),
                groups: plan.group_deltas.clone(),
                vlog_head_after: plan.vlog_head_after,
            };
            journal.append_flush(&rec)?;
            journal.commit(op_id)?;
        }

        // Apply index updates; crash from here on is redone from the journal.
        for (key, entry) in updates {
            let index_entry = match entry {
                UpdateEntry::Inline(v) => IndexEntry::Inline(v),
                UpdateEntry::Loc(loc) => IndexEntry::Location(loc),
                UpdateEntry::Tombstone => IndexEntry::Tombstone,
            };
            if matches!(index_entry, IndexEntry::Inline(_)) {
                metrics.inline_records.fetch_add(1, Ordering::Relaxed);
            }
            self.lsm.put(&key, index_entry)?;
        }
        self.applied_ops.push(op_id);
        metrics.breakdown.add(Phase::MetaFlush, meta_start.elapsed().as_nanos() as u64);

        for (group, write_bytes) in &plan.groups_touched {
            self.heap.push(*group, *write_bytes);
        }
        if plan.separated_bytes > 0 {
            self.ever_separated = true;
        }
        metrics.flush_batches.fetch_add(plan.batches, Ordering::Relaxed);
        metrics.flush_bytes.fetch_add(plan.separated_bytes, Ordering::Relaxed);
        metrics.separated_bytes.fetch_add(plan.separated_bytes, Ordering::Relaxed);

        self.maybe_rotate(metrics)?;
        Ok(())
    }

    /// Reserves placements for every record in `pending`. On `NeedsGc` the
    /// table/head state is rolled back and nothing is written.
    fn plan_flush(&mut self, pending: &mut [PendingOp]) -> Result<FlushPlan> {
        let mut plan = FlushPlan::default();
        match &mut self.backend {
            Backend::Inline => Ok(plan),
            Backend::Vlog(vlog) => {
                let head_before = vlog.head;
                let records: Vec<&Vec<u8>> =
                    pending.iter().filter_map(|op| op.record.as_ref()).collect();
                if records.is_empty() {
                    plan.vlog_head_after = vlog.head;
                    return Ok(plan);
                }
                let total: u64 = records.iter().map(|r| r.len() as u64).sum();
                if total > vlog.free_bytes() {
                    return Err(Error::NeedsGc);
                }
                let mut offsets = Vec::with_capacity(records.len());
                let mut buffer = Vec::with_capacity(total as usize);
                for rec in &records {
                    offsets.push(vlog.head + buffer.len() as u64);
                    buffer.extend_from_slice(rec);
                }
                // One contiguous append; the circular span handles the wrap.
                let cap = vlog.capacity;
                let off = head_before % cap;
                let first = ((cap - off) as usize).min(buffer.len());
                plan.jobs.push(WriteJob { offset: off, bytes: buffer[..first].to_vec() });
                if first < buffer.len() {
                    plan.jobs.push(WriteJob { offset: 0, bytes: buffer[first..].to_vec() });
                }
                let mut idx = 0;
                for op in pending.iter_mut() {
                    if let Some(rec) = &op.record {
                        op.location =
                            Some(ValueLocation::new(Area::Vlog, offsets[idx], rec.len() as u32));
                        idx += 1;
                    }
                }
                vlog.set_state(head_before + buffer.len() as u64, vlog.tail);
                plan.vlog_head_after = vlog.head;
                plan.batches = 1;
                plan.separated_bytes = total;
                Ok(plan)
            }
            Backend::Seg(seg) => {
                let snapshot = seg.table.clone();
                let threshold = self.config.batch_write_threshold_bytes;
                // Group the records by hash, preserving key order.
                let mut by_group: std::collections::BTreeMap<GroupId, Vec<usize>> =
                    std::collections::BTreeMap::new();
                for (i, op) in pending.iter().enumerate() {
                    if op.record.is_some() {
                        by_group
                            .entry(hash_group(&op.key, seg.geometry.n_main))
                            .or_default()
                            .push(i);
                    }
                }
                let result = (|| -> Result<FlushPlan> {
                    let mut plan = FlushPlan::default();
                    for (&group, op_indices) in &by_group {
                        let before_bytes = seg.table.groups[group.index()].write_bytes;
                        let before_gaps = seg.table.groups[group.index()].gap_bytes;
                        let before_records = seg.table.groups[group.index()].records;
                        let mut allocated = Vec::new();
                        let mut sentinel = None;
                        let records: Vec<Vec<u8>> = op_indices
                            .iter()
                            .map(|&i| pending[i].record.clone().unwrap())
                            .collect();
                        let batches =
                            cache::pack_batches(group, records, threshold);
                        let mut op_cursor = 0usize;
                        for batch in &batches {
                            let sizes: Vec<u32> =
                                batch.records.iter().map(|r| r.len() as u32).collect();
                            let placement = seg.place(group, &sizes)?;
                            allocated.extend_from_slice(&placement.newly_allocated);
                            plan.gap_stamps.extend_from_slice(&placement.gap_stamps);
                            sentinel = placement.sentinel;
                            // Coalesce contiguous placements into write jobs.
                            let mut run_start = 0usize;
                            while run_start < batch.records.len() {
                                let mut run_end = run_start + 1;
                                let mut bytes = batch.records[run_start].clone();
                                while run_end < batch.records.len()
                                    && placement.placed[run_end - 1].offset
                                        + placement.placed[run_end - 1].len as u64
                                        == placement.placed[run_end].offset
                                {
                                    bytes.extend_from_slice(&batch.records[run_end]);
                                    run_end += 1;
                                }
                                plan.jobs.push(WriteJob {
                                    offset: placement.placed[run_start].offset,
                                    bytes,
                                });
                                run_start = run_end;
                            }
                            for (k, placed) in placement.placed.iter().enumerate() {
                                let op = &mut pending[op_indices[op_cursor + k]];
                                op.location = Some(ValueLocation::new(
                                    Area::SegmentStore,
                                    placed.offset,
                                    placed.len,
                                ));
                                plan.separated_bytes += placed.len as u64;
                            }
                            op_cursor += batch.records.len();
                            plan.batches += 1;
                        }
                        if let Some(s) = sentinel {
                            plan.sentinels.push(s);
                        }
                        let after = &seg.table.groups[group.index()];
                        plan.group_deltas.push(FlushGroupDelta {
                            group: group.0,
                            end_after: after.end,
                            allocated,
                            bytes: after.write_bytes - before_bytes,
                            gaps: after.gap_bytes - before_gaps,
                            records: after.records - before_records,
                        });
                        plan.groups_touched.push((group, after.write_bytes));
                    }
                    Ok(plan)
                })();
                match result {
                    Ok(plan) => Ok(plan),
                    Err(e) => {
                        seg.table = snapshot;
                        Err(e)
                    }
                }
            }
        }
    }

    fn execute_jobs(&self, jobs: &[WriteJob]) -> Result<()> {
        if jobs.is_empty() {
            return Ok(());
        }
        let file = match &self.backend {
            Backend::Seg(seg) => seg.file(),
            Backend::Vlog(v) => v.file(),
            Backend::Inline => return Ok(()),
        };
        #[cfg(feature = "parallel")]
        {
            if self.config.flush_parallelism > 1 && jobs.len() > 1 {
                use rayon::prelude::*;
                return jobs.par_iter().try_for_each(|job| file.write_at(job.offset, &job.bytes));
            }
        }
        for job in jobs {
            file.write_at(job.offset, &job.bytes)?;
        }
        Ok(())
    }

    /// One GC cycle on the hash-grouped store: select a victim group by the
    /// configured policy and collect it.
    fn collect_space(&mut self, metrics: &StoreMetrics) -> Result<GcStats> {
        let Backend::Seg(seg) = &self.backend else {
            return Err(Error::NothingToCollect);
        };
        let policy = GcPolicy { kind: self.config.gc_policy, gra_d: self.config.gra_d };
        let group = gc::select_group(
            &policy,
            &seg.table,
            &seg.geometry,
            self.flush_ops,
            &mut self.heap,
            &mut self.rng,
        )?;
        self.gc_group(metrics, group)
    }

    fn gc_group(&mut self, metrics: &StoreMetrics, group: GroupId) -> Result<GcStats> {
        let hotness = self.config.hotness_awareness;
        // Relieve cold-log pressure first so the plan gets a real budget.
        if hotness {
            if let Backend::Seg(seg) = &self.backend {
                if let (Some(cap), Some(free)) =
                    (seg.geometry.cold_capacity, seg.cold_free_bytes())
                {
                    if cap > 0 && free < self.config.cold_log_chunk_bytes {
                        let mut guard = cap / self.config.cold_log_chunk_bytes.max(1) + 2;
                        while guard > 0 {
                            let Backend::Seg(seg) = &self.backend else { unreachable!() };
                            let free = seg.cold_free_bytes().unwrap_or(u64::MAX);
                            if free >= self.config.cold_log_chunk_bytes {
                                break;
                            }
                            let stats = self.cold_log_gc(metrics)?;
                            if stats.bytes_scanned == 0 {
                                break;
                            }
                            guard -= 1;
                        }
                    }
                }
            }
        }

        let lookups_before = metrics.lsm_lookups.load(Ordering::Relaxed);
        let op_id = self.op_id();
        let gc_start = Instant::now();
        let Backend::Seg(seg) = &mut self.backend else {
            return Err(Error::NothingToCollect);
        };
        let cold_budget = if hotness {
            match seg.geometry.cold_capacity {
                None => u64::MAX,
                Some(0) => 0,
                Some(_) => seg.cold_free_bytes().unwrap_or(0),
            }
        } else {
            0
        };
        let mut skipped = 0u64;
        let (mut plan, _live) = gc::build_group_plan(
            seg,
            &self.cache,
            group,
            op_id,
            hotness,
            cold_budget,
            &mut skipped,
        )?;
        metrics.cold_migrations_skipped.fetch_add(skipped, Ordering::Relaxed);
        metrics.breakdown.add(Phase::GcRw, gc_start.elapsed().as_nanos() as u64);

        if let Some(journal) = &mut self.journal {
            let meta_start = Instant::now();
            let ranges = gc::plan_overwritten_ranges(seg, &plan);
            let needs_copy = |w: &PlannedWrite| -> bool {
                if gc::self_overlapping(w) {
                    return true;
                }
                match w.src {
                    WriteSrc::Inline => true,
                    WriteSrc::GroupAt(off) => {
                        let end = off + w.bytes.len() as u64;
                        ranges.iter().any(|&(s, e)| off < e && s < end)
                    }
                    WriteSrc::CircAt(_) => true,
                }
            };
            let copy: Vec<bool> = plan.writes.iter().map(needs_copy).collect();
            let cold_copy: Vec<bool> = plan.cold_writes.iter().map(needs_copy).collect();
            journal.append_gc_group(&plan, &copy, &cold_copy)?;
            journal.commit(op_id)?;
            metrics.breakdown.add(Phase::MetaGc, meta_start.elapsed().as_nanos() as u64);
        }

        let gc_start = Instant::now();
        gc::apply_group_plan(seg, &plan)?;
        seg.table.groups[group.index()].last_gc_flush_op = self.flush_ops;
        metrics.breakdown.add(Phase::GcRw, gc_start.elapsed().as_nanos() as u64);

        let meta_start = Instant::now();
        for (key, entry) in &plan.index_updates {
            let index_entry = match entry {
                LiteEntry::Loc(loc) => IndexEntry::Location(*loc),
                LiteEntry::Tombstone => IndexEntry::Tombstone,
            };
            self.lsm.put(key, index_entry)?;
        }
        metrics.breakdown.add(Phase::MetaGc, meta_start.elapsed().as_nanos() as u64);
        if self.journal.is_some() {
            self.applied_ops.push(op_id);
        }

        let Backend::Seg(seg) = &self.backend else { unreachable!() };
        self.heap.push(group, seg.table.groups[group.index()].write_bytes);

        let lookups_after = metrics.lsm_lookups.load(Ordering::Relaxed);
        plan.stats.lsm_lookups = lookups_after - lookups_before;
        debug_assert_eq!(plan.stats.lsm_lookups, 0, "segment-group GC must not query the index");
        metrics.record_gc(&plan.stats);
        self.maybe_rotate(metrics)?;
        Ok(plan.stats)
    }

    /// Chunk GC on the cold data log: index lookups decide validity, valid
    /// records re-append at the head.
    fn cold_log_gc(&mut self, metrics: &StoreMetrics) -> Result<GcStats> {
        let op_id = self.op_id();
        let Backend::Seg(seg) = &mut self.backend else {
            return Err(Error::NothingToCollect);
        };
        let chunk = self.config.cold_log_chunk_bytes;
        let (records, consumed) = seg.cold_read_tail_chunk(chunk)?;
        if consumed == 0 {
            return Ok(GcStats::default());
        }
        let tail_before = seg.table.cold_tail;
        let head_before = seg.table.cold_head;
        let mut appends: Vec<PlannedWrite> = Vec::new();
        let mut index_updates: Vec<(Vec<u8>, LiteEntry)> = Vec::new();
        let mut head = head_before;
        let mut lookups = 0u64;
        for (logical, rec) in &records {
            let lookup_start = Instant::now();
            let entry = self.lsm.get(&rec.key)?;
            lookups += 1;
            metrics.breakdown.add(Phase::GcLookup, lookup_start.elapsed().as_nanos() as u64);
            let valid = matches!(
                entry,
                Some(SequencedEntry { entry: IndexEntry::Location(loc), .. })
                    if loc.area == Area::ColdLog && loc.offset == *logical
            );
            if !valid {
                continue;
            }
            let bytes = encode_record(rec.flags, &rec.key, &rec.value)?;
            let len = bytes.len() as u32;
            appends.push(PlannedWrite { dst: head, bytes, src: WriteSrc::CircAt(*logical) });
            index_updates
                .push((rec.key.clone(), LiteEntry::Loc(ValueLocation::new(Area::ColdLog, head, len))));
            head += len as u64;
        }
        let rewritten: u64 = appends.iter().map(|w| w.bytes.len() as u64).sum();
        let stats = GcStats {
            bytes_scanned: consumed,
            bytes_rewritten: rewritten,
            log_segments_freed: 0,
            lsm_lookups: lookups,
            index_updates: index_updates.len() as u64,
            cold_bytes_moved: 0,
        };
        let plan = CircularGcPlan {
            op_id,
            area: Area::ColdLog,
            tail_before,
            tail_after: tail_before + consumed,
            head_before,
            head_after: head,
            appends,
            index_updates,
            stats,
        };

        let Backend::Seg(seg) = &mut self.backend else { unreachable!() };
        if let Some(journal) = &mut self.journal {
            let cap = seg.geometry.cold_capacity;
            let copy: Vec<bool> = plan
                .appends
                .iter()
                .map(|w| match w.src {
                    WriteSrc::CircAt(off) => gc::circular_ranges_overlap(
                        cap,
                        (plan.head_before, plan.head_after),
                        (off, off + w.bytes.len() as u64),
                    ),
                    _ => true,
                })
                .collect();
            journal.append_gc_circ(&plan, &copy)?;
            journal.commit(op_id)?;
        }
        let gc_start = Instant::now();
        gc::apply_cold_plan(seg, &plan)?;
        metrics.breakdown.add(Phase::GcRw, gc_start.elapsed().as_nanos() as u64);
        let meta_start = Instant::now();
        for (key, entry) in &plan.index_updates {
            let index_entry = match entry {
                LiteEntry::Loc(loc) => IndexEntry::Location(*loc),
                LiteEntry::Tombstone => IndexEntry::Tombstone,
            };
            self.lsm.put(key, index_entry)?;
        }
        metrics.breakdown.add(Phase::MetaGc, meta_start.elapsed().as_nanos() as u64);
        if self.journal.is_some() {
            self.applied_ops.push(op_id);
        }
        metrics.cold_gc_ops.fetch_add(1, Ordering::Relaxed);
        metrics.cold_gc_lookups.fetch_add(stats.lsm_lookups, Ordering::Relaxed);
        metrics.cold_gc_bytes_rewritten.fetch_add(stats.bytes_rewritten, Ordering::Relaxed);
        Ok(stats)
    }

    /// Chunk GC at the vLog tail: one index lookup per scanned record.
    fn vlog_gc(&mut self, metrics: &StoreMetrics) -> Result<GcStats> {
        let op_id = self.op_id();
        let Backend::Vlog(vlog) = &mut self.backend else {
            return Err(Error::NothingToCollect);
        };
        let rw_start = Instant::now();
        let (records, consumed) = vlog.read_tail_chunk()?;
        metrics.breakdown.add(Phase::GcRw, rw_start.elapsed().as_nanos() as u64);
        if consumed == 0 {
            return Err(Error::NothingToCollect);
        }
        let tail_before = vlog.tail;
        let head_before = vlog.head;
        let mut appends: Vec<PlannedWrite> = Vec::new();
        let mut index_updates: Vec<(Vec<u8>, LiteEntry)> = Vec::new();
        let mut head = head_before;
        let mut lookups = 0u64;
        for (logical, rec) in &records {
            let lookup_start = Instant::now();
            let entry = self.lsm.get(&rec.key)?;
            lookups += 1;
            metrics.breakdown.add(Phase::GcLookup, lookup_start.elapsed().as_nanos() as u64);
            let valid = matches!(
                entry,
                Some(SequencedEntry { entry: IndexEntry::Location(loc), .. })
                    if loc.area == Area::Vlog && loc.offset == *logical
            );
            if !valid {
                continue;
            }
            let bytes = encode_record(rec.flags, &rec.key, &rec.value)?;
            let len = bytes.len() as u32;
            appends.push(PlannedWrite { dst: head, bytes, src: WriteSrc::CircAt(*logical) });
            index_updates
                .push((rec.key.clone(), LiteEntry::Loc(ValueLocation::new(Area::Vlog, head, len))));
            head += len as u64;
        }
        let rewritten: u64 = appends.iter().map(|w| w.bytes.len() as u64).sum();
        let stats = GcStats {
            bytes_scanned: consumed,
            bytes_rewritten: rewritten,
            log_segments_freed: 0,
            lsm_lookups: lookups,
            index_updates: index_updates.len() as u64,
            cold_bytes_moved: 0,
        };
        let plan = CircularGcPlan {
            op_id,
            area: Area::Vlog,
            tail_before,
            tail_after: tail_before + consumed,
            head_before,
            head_after: head,
            appends,
            index_updates,
            stats,
        };

        let Backend::Vlog(vlog) = &mut self.backend else { unreachable!() };
        if let Some(journal) = &mut self.journal {
            let cap = Some(vlog.capacity);
            let copy: Vec<bool> = plan
                .appends
                .iter()
                .map(|w| match w.src {
                    WriteSrc::CircAt(off) => gc::circular_ranges_overlap(
                        cap,
                        (plan.head_before, plan.head_after),
                        (off, off + w.bytes.len() as u64),
                    ),
                    _ => true,
                })
                .collect();
            journal.append_gc_circ(&plan, &copy)?;
            journal.commit(op_id)?;
        }
        let rw_start = Instant::now();
        gc::apply_vlog_plan(vlog, &plan)?;
        metrics.breakdown.add(Phase::GcRw, rw_start.elapsed().as_nanos() as u64);
        let meta_start = Instant::now();
        for (key, entry) in &plan.index_updates {
            let index_entry = match entry {
                LiteEntry::Loc(loc) => IndexEntry::Location(*loc),
                LiteEntry::Tombstone => IndexEntry::Tombstone,
            };
            self.lsm.put(key, index_entry)?;
        }
        metrics.breakdown.add(Phase::MetaGc, meta_start.elapsed().as_nanos() as u64);
        if self.journal.is_some() {
            self.applied_ops.push(op_id);
        }
        metrics.vlog_gc_ops.fetch_add(1, Ordering::Relaxed);
        metrics.vlog_gc_lookups.fetch_add(stats.lsm_lookups, Ordering::Relaxed);
        metrics.vlog_gc_bytes_scanned.fetch_add(stats.bytes_scanned, Ordering::Relaxed);
        metrics.vlog_gc_bytes_rewritten.fetch_add(stats.bytes_rewritten, Ordering::Relaxed);
        Ok(stats)
    }

    /// Persists the index, frees the journal records it covers, checkpoints
    /// the backend state, and recycles journal files. GC rewrites are only
    /// synced here, right before the journal records that could redo them
    /// are dropped.
    fn persist(&mut self, _metrics: &StoreMetrics) -> Result<()> {
        if self.journal.is_some() {
            match &self.backend {
                Backend::Seg(seg) => seg.file().sync()?,
                Backend::Vlog(v) => v.file().sync()?,
                Backend::Inline => {}
            }
        }
        self.lsm.flush_memtable()?;
        let applied = std::mem::take(&mut self.applied_ops);
        if let Some(journal) = &mut self.journal {
            for op in applied {
                journal.mark_free(op)?;
            }
        }
        let watermark = match &self.journal {
            Some(j) => j.last_issued_op(),
            None => self.local_op,
        };
        match &mut self.backend {
            Backend::Seg(seg) => {
                seg.table.last_op_id = watermark;
                seg.checkpoint()?;
            }
            Backend::Vlog(v) => {
                v.last_op_id = watermark;
                v.checkpoint()?;
            }
            Backend::Inline => {}
        }
        if let Some(journal) = &mut self.journal {
            journal.truncate_free()?;
        }
        Ok(())
    }

    fn maybe_rotate(&mut self, metrics: &StoreMetrics) -> Result<()> {
        let rotate = self
            .journal
            .as_ref()
            .map(|j| j.total_bytes() > self.config.journal_rotate_bytes)
            .unwrap_or(false);
        if rotate {
            self.persist(metrics)?;
        }
        Ok(())
    }

    /// Crash recovery: replays committed journal records newer than the
    /// checkpoint watermark in op order, wipes uncommitted tail bytes, and
    /// verifies free-list exclusivity.
    fn recover(&mut self, metrics: &StoreMetrics, replay: Vec<ReplayOp>) -> Result<()> {
        let watermark = match &self.backend {
            Backend::Seg(seg) => seg.table.last_op_id,
            Backend::Vlog(v) => v.last_op_id,
            Backend::Inline => 0,
        };
        let mut report = RecoveryReport::default();
        for op in replay {
            if !op.committed || op.op_id <= watermark {
                continue;
            }
            match op.body {
                ReplayBody::Flush(rec) => {
                    if let Backend::Seg(seg) = &mut self.backend {
                        for delta in &rec.groups {
                            for &id in &delta.allocated {
                                if !seg.table.free.remove(&id) {
                                    return Err(Error::RecoveryFailed(format!(
                                        "flush op {} allocated segment {id} not in free list",
                                        rec.op_id
                                    )));
                                }
                                seg.table.groups[delta.group as usize].log_segments.push(id);
                            }
                            let g = &mut seg.table.groups[delta.group as usize];
                            g.end = delta.end_after;
                            g.write_bytes += delta.bytes;
                            g.gap_bytes += delta.gaps;
                            g.records += delta.records;
                        }
                    }
                    if let Backend::Vlog(v) = &mut self.backend {
                        let head = v.head.max(rec.vlog_head_after);
                        v.set_state(head, v.tail);
                    }
                    for (key, entry) in rec.updates {
                        let index_entry = match entry {
                            UpdateEntry::Inline(v) => IndexEntry::Inline(v),
                            UpdateEntry::Loc(loc) => IndexEntry::Location(loc),
                            UpdateEntry::Tombstone => IndexEntry::Tombstone,
                        };
                        self.lsm.put(&key, index_entry)?;
                    }
                    report.replayed_flushes += 1;
                }
                ReplayBody::GcGroup(rec) => {
                    let Backend::Seg(seg) = &mut self.backend else {
                        return Err(Error::RecoveryFailed(
                            "group GC record on a non-hash backend".into(),
                        ));
                    };
                    // A referenced source is good if its checksum matches;
                    // if the crashed rewrite already clobbered it, the bytes
                    // landed at the destination, so check there next.
                    let resolve = |(dst, r): &(u64, WriteRef),
                                   seg: &SegmentStore|
                     -> Result<PlannedWrite> {
                        let bytes = match r {
                            WriteRef::Copy(b) => b.clone(),
                            WriteRef::GroupAt { offset, len, crc } => {
                                let mut buf = vec![0u8; *len as usize];
                                seg.file().read_exact_at(*offset, &mut buf)?;
                                if crc32fast::hash(&buf) != *crc {
                                    seg.file().read_exact_at(*dst, &mut buf)?;
                                    if crc32fast::hash(&buf) != *crc {
                                        return Err(Error::RecoveryFailed(format!(
                                            "GC redo source at {offset} and destination {dst} both fail checksum"
                                        )));
                                    }
                                }
                                buf
                            }
                            WriteRef::CircAt { offset, len, crc } => {
                                let span = crate::circ::CircularSpan::new(
                                    seg.geometry.cold_base(),
                                    seg.geometry.cold_capacity,
                                );
                                let buf = span.read(seg.file(), *offset, *len as usize)?;
                                if crc32fast::hash(&buf) != *crc {
                                    let buf = span.read(seg.file(), *dst, *len as usize)?;
                                    if crc32fast::hash(&buf) != *crc {
                                        return Err(Error::RecoveryFailed(format!(
                                            "cold redo source at {offset} fails checksum"
                                        )));
                                    }
                                    return Ok(PlannedWrite { dst: *dst, bytes: buf, src: WriteSrc::Inline });
                                }
                                buf
                            }
                        };
                        Ok(PlannedWrite { dst: *dst, bytes, src: WriteSrc::Inline })
                    };
                    let writes: Vec<PlannedWrite> =
                        rec.writes.iter().map(|w| resolve(w, seg)).collect::<Result<_>>()?;
                    let cold_writes: Vec<PlannedWrite> =
                        rec.cold_writes.iter().map(|w| resolve(w, seg)).collect::<Result<_>>()?;
                    let plan = GcPlan {
                        op_id: rec.op_id,
                        group: GroupId(rec.group),
                        keep_count: rec.keep_count,
                        freed: rec.freed.clone(),
                        end_after: rec.end_after,
                        gap_bytes_after: rec.gap_bytes_after,
                        write_bytes_after: rec.write_bytes_after,
                        gap_stamps: rec.gap_stamps.clone(),
                        sentinel: rec.sentinel,
                        writes,
                        cold_writes,
                        cold_head_before: rec.cold_head_before,
                        cold_head_after: rec.cold_head_after,
                        index_updates: rec.index_updates.clone(),
                        live_after: rec.stats.bytes_rewritten,
                        stats: rec.stats,
                    };
                    gc::apply_group_plan(seg, &plan)?;
                    for (key, entry) in &plan.index_updates {
                        let index_entry = match entry {
                            LiteEntry::Loc(loc) => IndexEntry::Location(*loc),
                            LiteEntry::Tombstone => IndexEntry::Tombstone,
                        };
                        self.lsm.put(key, index_entry)?;
                    }
                    report.replayed_gcs += 1;
                }
                ReplayBody::GcCirc(rec) => {
                    let resolve_bytes = |dst: u64, r: &WriteRef| -> Result<Vec<u8>> {
                        match r {
                            WriteRef::Copy(b) => Ok(b.clone()),
                            WriteRef::CircAt { offset, len, crc } => {
                                let read_at = |logical: u64| -> Result<Vec<u8>> {
                                    match &self.backend {
                                        Backend::Seg(seg) => {
                                            let span = crate::circ::CircularSpan::new(
                                                seg.geometry.cold_base(),
                                                seg.geometry.cold_capacity,
                                            );
                                            span.read(seg.file(), logical, *len as usize)
                                        }
                                        Backend::Vlog(v) => {
                                            v.read_logical(logical, *len as usize)
                                        }
                                        Backend::Inline => Err(Error::RecoveryFailed(
                                            "circular GC on inline backend".into(),
                                        )),
                                    }
                                };
                                let buf = read_at(*offset)?;
                                if crc32fast::hash(&buf) == *crc {
                                    return Ok(buf);
                                }
                                let buf = read_at(dst)?;
                                if crc32fast::hash(&buf) == *crc {
                                    return Ok(buf);
                                }
                                Err(Error::RecoveryFailed(format!(
                                    "circular redo source at {offset} fails checksum"
                                )))
                            }
                            WriteRef::GroupAt { .. } => Err(Error::RecoveryFailed(
                                "group source in circular GC record".into(),
                            )),
                        }
                    };
                    let appends: Vec<PlannedWrite> = rec
                        .appends
                        .iter()
                        .map(|(dst, r)| {
                            Ok(PlannedWrite {
                                dst: *dst,
                                bytes: resolve_bytes(*dst, r)?,
                                src: WriteSrc::Inline,
                            })
                        })
                        .collect::<Result<_>>()?;
                    let plan = CircularGcPlan {
                        op_id: rec.op_id,
                        area: rec.area,
                        tail_before: rec.tail_before,
                        tail_after: rec.tail_after,
                        head_before: rec.head_before,
                        head_after: rec.head_after,
                        appends,
                        index_updates: rec.index_updates.clone(),
                        stats: rec.stats,
                    };
                    match (&mut self.backend, rec.area) {
                        (Backend::Seg(seg), Area::ColdLog) => gc::apply_cold_plan(seg, &plan)?,
                        (Backend::Vlog(v), Area::Vlog) => gc::apply_vlog_plan(v, &plan)?,
                        _ => {
                            return Err(Error::RecoveryFailed(
                                "circular GC area does not match backend".into(),
                            ))
                        }
                    }
                    for (key, entry) in &plan.index_updates {
                        let index_entry = match entry {
                            LiteEntry::Loc(loc) => IndexEntry::Location(*loc),
                            LiteEntry::Tombstone => IndexEntry::Tombstone,
                        };
                        self.lsm.put(key, index_entry)?;
                    }
                    report.replayed_gcs += 1;
                }
            }
        }

        // Wipe uncommitted tail bytes so scans stop at the committed end, and
        // verify the rebuilt table.
        if let Backend::Seg(seg) = &mut self.backend {
            for g in 0..seg.geometry.n_main {
                if let Some(pos) = seg.sentinel_position(GroupId(g)) {
                    let current: &mut [u8] = &mut [0u8; SENTINEL_LEN as usize];
                    seg.file().read_exact_at(pos, current)?;
                    if current.iter().any(|&b| b != 0) {
                        seg.stamp_sentinel(pos)?;
                    }
                }
            }
            seg.table.check_exclusivity(&seg.geometry)?;
        }

        // Make the recovered state durable and recycle the journals outright:
        // uncommitted records are discarded with them.
        match &self.backend {
            Backend::Seg(seg) => seg.file().sync()?,
            Backend::Vlog(v) => v.file().sync()?,
            Backend::Inline => {}
        }
        self.lsm.flush_memtable()?;
        let watermark_now = match &self.journal {
            Some(j) => j.last_issued_op(),
            None => self.local_op,
        };
        match &mut self.backend {
            Backend::Seg(seg) => {
                seg.table.last_op_id = watermark_now;
                seg.checkpoint()?;
            }
            Backend::Vlog(v) => {
                v.last_op_id = watermark_now;
                v.checkpoint()?;
            }
            Backend::Inline => {}
        }
        if let Some(journal) = &mut self.journal {
            journal.reset_after_recovery()?;
        }
        self.applied_ops.clear();
        metrics.recovered_flushes.fetch_add(report.replayed_flushes, Ordering::Relaxed);
        metrics.recovered_gcs.fetch_add(report.replayed_gcs, Ordering::Relaxed);
        self.recovery = report;
        Ok(())
    }
}
