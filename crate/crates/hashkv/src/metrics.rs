//! Store-wide counters: GC statistics, flush statistics, LSM lookup counts,
//! and the six-category latency breakdown (cache, flush, metadata updates in
//! flush, GC read/write, GC lookups, metadata updates in GC).

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crate::io::IoCounters;

/// Counters produced by one GC operation (segment-group, cold-log, or vLog).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GcStats {
    pub bytes_scanned: u64,
    pub bytes_rewritten: u64,
    pub log_segments_freed: u64,
    /// Index lookups performed by this GC. Zero for segment-group GC by
    /// construction; equal to the records scanned for vLog GC.
    pub lsm_lookups: u64,
    pub index_updates: u64,
    pub cold_bytes_moved: u64,
}

impl GcStats {
    pub fn accumulate(&mut self, other: &GcStats) {
        self.bytes_scanned += other.bytes_scanned;
        self.bytes_rewritten += other.bytes_rewritten;
        self.log_segments_freed += other.log_segments_freed;
        self.lsm_lookups += other.lsm_lookups;
        self.index_updates += other.index_updates;
        self.cold_bytes_moved += other.cold_bytes_moved;
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FlushStats {
    pub batches: u64,
    pub bytes: u64,
    pub groups: u64,
}

/// Latency breakdown categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Cache,
    Flush,
    MetaFlush,
    GcRw,
    GcLookup,
    MetaGc,
}

pub const PHASE_COUNT: usize = 6;

impl Phase {
    pub fn index(self) -> usize {
        match self {
            Phase::Cache => 0,
            Phase::Flush => 1,
            Phase::MetaFlush => 2,
            Phase::GcRw => 3,
            Phase::GcLookup => 4,
            Phase::MetaGc => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Cache => "Cache",
            Phase::Flush => "Flush",
            Phase::MetaFlush => "Meta-Flush",
            Phase::GcRw => "GC-RW",
            Phase::GcLookup => "GC-Lookup",
            Phase::MetaGc => "Meta-GC",
        }
    }

    pub fn all() -> [Phase; PHASE_COUNT] {
        [Phase::Cache, Phase::Flush, Phase::MetaFlush, Phase::GcRw, Phase::GcLookup, Phase::MetaGc]
    }
}

#[derive(Debug, Default)]
pub struct Breakdown {
    nanos: [AtomicU64; PHASE_COUNT],
}

impl Breakdown {
    pub fn timed<T>(&self, phase: Phase, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.nanos[phase.index()].fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
        out
    }

    pub fn add(&self, phase: Phase, nanos: u64) {
        self.nanos[phase.index()].fetch_add(nanos, Ordering::Relaxed);
    }

    pub fn nanos(&self, phase: Phase) -> u64 {
        self.nanos[phase.index()].load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> [u64; PHASE_COUNT] {
        let mut out = [0; PHASE_COUNT];
        for (i, n) in self.nanos.iter().enumerate() {
            out[i] = n.load(Ordering::Relaxed);
        }
        out
    }
}

/// All counters for one open store.
#[derive(Debug)]
pub struct StoreMetrics {
    pub io: Arc<IoCounters>,
    pub breakdown: Breakdown,
    /// Total index point lookups (memtable + SSTable path).
    pub lsm_lookups: AtomicU64,
    pub puts: AtomicU64,
    pub gets: AtomicU64,
    pub deletes: AtomicU64,
    pub scans: AtomicU64,
    pub flushes: AtomicU64,
    pub flush_batches: AtomicU64,
    pub flush_bytes: AtomicU64,
    /// Bytes handed to the value backend by flushes (excludes inline records).
    pub separated_bytes: AtomicU64,
    /// Records stored inline in the LSM by flushes.
    pub inline_records: AtomicU64,
    pub compactions: AtomicU64,
    pub compaction_bytes_read: AtomicU64,
    pub compaction_bytes_written: AtomicU64,
    // Segment-group GC.
    pub gc_ops: AtomicU64,
    pub gc_bytes_scanned: AtomicU64,
    pub gc_bytes_rewritten: AtomicU64,
    pub gc_segments_freed: AtomicU64,
    pub gc_lsm_lookups: AtomicU64,
    pub gc_index_updates: AtomicU64,
    pub gc_cold_bytes_moved: AtomicU64,
    pub cold_migrations_skipped: AtomicU64,
    // Cold-log GC (index lookups expected here).
    pub cold_gc_ops: AtomicU64,
    pub cold_gc_lookups: AtomicU64,
    pub cold_gc_bytes_rewritten: AtomicU64,
    // vLog GC (index lookups expected here).
    pub vlog_gc_ops: AtomicU64,
    pub vlog_gc_lookups: AtomicU64,
    pub vlog_gc_bytes_scanned: AtomicU64,
    pub vlog_gc_bytes_rewritten: AtomicU64,
    pub recovered_flushes: AtomicU64,
    pub recovered_gcs: AtomicU64,
}

impl StoreMetrics {
    pub fn new(io: Arc<IoCounters>) -> Arc<StoreMetrics> {
        Arc::new(StoreMetrics {
            io,
            breakdown: Breakdown::default(),
            lsm_lookups: AtomicU64::new(0),
            puts: AtomicU64::new(0),
            gets: AtomicU64::new(0),
            deletes: AtomicU64::new(0),
            scans: AtomicU64::new(0),
            flushes: AtomicU64::new(0),
            flush_batches: AtomicU64::new(0),
            flush_bytes: AtomicU64::new(0),
            separated_bytes: AtomicU64::new(0),
            inline_records: AtomicU64::new(0),
            compactions: AtomicU64::new(0),
            compaction_bytes_read: AtomicU64::new(0),
            compaction_bytes_written: AtomicU64::new(0),
            gc_ops: AtomicU64::new(0),
            gc_bytes_scanned: AtomicU64::new(0),
            gc_bytes_rewritten: AtomicU64::new(0),
            gc_segments_freed: AtomicU64::new(0),
            gc_lsm_lookups: AtomicU64::new(0),
            gc_index_updates: AtomicU64::new(0),
            gc_cold_bytes_moved: AtomicU64::new(0),
            cold_migrations_skipped: AtomicU64::new(0),
            cold_gc_ops: AtomicU64::new(0),
            cold_gc_lookups: AtomicU64::new(0),
            cold_gc_bytes_rewritten: AtomicU64::new(0),
            vlog_gc_ops: AtomicU64::new(0),
            vlog_gc_lookups: AtomicU64::new(0),
            vlog_gc_bytes_scanned: AtomicU64::new(0),
            vlog_gc_bytes_rewritten: AtomicU64::new(0),
            recovered_flushes: AtomicU64::new(0),
            recovered_gcs: AtomicU64::new(0),
        })
    }

    pub fn record_gc(&self, stats: &GcStats) {
        self.gc_ops.fetch_add(1, Ordering::Relaxed);
        self.gc_bytes_scanned.fetch_add(stats.bytes_scanned, Ordering::Relaxed);
        self.gc_bytes_rewritten.fetch_add(stats.bytes_rewritten, Ordering::Relaxed);
        self.gc_segments_freed.fetch_add(stats.log_segments_freed, Ordering::Relaxed);
        self.gc_lsm_lookups.fetch_add(stats.lsm_lookups, Ordering::Relaxed);
        self.gc_index_updates.fetch_add(stats.index_updates, Ordering::Relaxed);
        self.gc_cold_bytes_moved.fetch_add(stats.cold_bytes_moved, Ordering::Relaxed);
    }
}

/// Log-scaled latency histogram: 64 octaves x 16 sub-buckets.
#[derive(Debug)]
pub struct LatencyHistogram {
    buckets: Vec<AtomicU64>,
    count: AtomicU64,
}

const SUB_BUCKETS: u64 = 16;

impl Default for LatencyHistogram {
    fn default() -> Self {
        Self::new()
    }
}

impl LatencyHistogram {
    pub fn new() -> LatencyHistogram {
        let mut buckets = Vec::with_capacity(64 * SUB_BUCKETS as usize);
        buckets.resize_with(64 * SUB_BUCKETS as usize, || AtomicU64::new(0));
        LatencyHistogram { buckets, count: AtomicU64::new(0) }
    }

    fn bucket_of(nanos: u64) -> usize {
        let n = nanos.max(1);
        let octave = 63 - n.leading_zeros() as u64;
        let sub = if octave == 0 { 0 } else { (n >> (octave.saturating_sub(4))) & (SUB_BUCKETS - 1) };
        (octave * SUB_BUCKETS + sub) as usize
    }

    fn bucket_value(idx: usize) -> u64 {
        let octave = (idx as u64) / SUB_BUCKETS;
        let sub = (idx as u64) % SUB_BUCKETS;
        if octave < 4 {
            1u64 << octave
        } else {
            (1u64 << octave) + (sub << (octave - 4))
        }
    }

    pub fn record(&self, nanos: u64) {
        self.buckets[Self::bucket_of(nanos)].fetch_add(1, Ordering::Relaxed);
        self.count.fetch_add(1, Ordering::Relaxed);
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    /// Approximate percentile in nanoseconds, `q` in [0, 1].
    pub fn percentile(&self, q: f64) -> u64 {
        let total = self.count();
        if total == 0 {
            return 0;
        }
        let target = ((total as f64) * q).ceil() as u64;
        let mut seen = 0;
        for (i, b) in self.buckets.iter().enumerate() {
            seen += b.load(Ordering::Relaxed);
            if seen >= target {
                return Self::bucket_value(i);
            }
        }
        Self::bucket_value(self.buckets.len() - 1)
    }

    pub fn reset(&self) {
        for b in &self.buckets {
            b.store(0, Ordering::Relaxed);
        }
        self.count.store(0, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_percentiles_are_sane() {
        let h = LatencyHistogram::new();
        for i in 1..=1000u64 {
            h.record(i * 1000);
        }
        let p50 = h.percentile(0.50);
        let p99 = h.percentile(0.99);
        assert!((400_000..700_000).contains(&p50), "p50 = {p50}");
        assert!(p99 >= 900_000, "p99 = {p99}");
        assert!(p50 <= p99);
    }

    #[test]
    fn breakdown_accumulates() {
        let b = Breakdown::default();
        b.add(Phase::GcLookup, 500);
        b.add(Phase::GcLookup, 250);
        assert_eq!(b.nanos(Phase::GcLookup), 750);
        assert_eq!(b.nanos(Phase::Cache), 0);
    }
}
