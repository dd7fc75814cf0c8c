//! Hash-partitioned value storage.
//!
//! One large file holds `n_main` fixed-size main segments, a reserved region
//! of smaller log segments, and (when hotness awareness is on) a cold data
//! log region at the end. Each group appends log-structured into its main
//! segment and spills into dynamically allocated log segments. The in-memory
//! segment table tracks every group's end position, log-segment list, and
//! write counter, and is checkpointed with a CRC via write-temp-then-rename.
//!
//! Records are never split across segments: a record that does not fit
//! leaves a dead gap and starts at the next segment. An 8-byte zero sentinel
//! is stamped after the last record of a group so recovery scans terminate
//! even in reused segments.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::io::{Component, FaultPlan, IoCounters, TrackedFile};
use crate::record::{self, Area, GroupId, KVRecord, ValueLocation, HEADER_LEN};

pub const SENTINEL_LEN: u64 = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentGeometry {
    pub n_main: u32,
    pub main_size: u64,
    pub log_size: u64,
    pub n_log: u32,
    /// Cold data log capacity; `None` means the cold region grows without
    /// bound (and cold-log GC never runs).
    pub cold_capacity: Option<u64>,
}

impl SegmentGeometry {
    /// Desk-scale defaults: 2 GiB of main segments at 4 MiB each, 30%
    /// reserved space in 64 KiB log segments.
    pub fn desk_default() -> SegmentGeometry {
        SegmentGeometry::with_store_size(2 << 30, 4 << 20, 64 << 10, 0.30)
    }

    /// Derives a geometry from a target store size and reserved fraction.
    /// The reserved segment count is rounded up so at least the requested
    /// fraction is provisioned.
    pub fn with_store_size(
        store_bytes: u64,
        main_size: u64,
        log_size: u64,
        reserved_fraction: f64,
    ) -> SegmentGeometry {
        let n_main = (store_bytes / main_size).max(1) as u32;
        let reserved_bytes = (store_bytes as f64 * reserved_fraction).ceil() as u64;
        let n_log = reserved_bytes.div_ceil(log_size) as u32;
        let cold = (n_main as u64 * main_size) / 10;
        SegmentGeometry { n_main, main_size, log_size, n_log, cold_capacity: Some(cold) }
    }

    pub fn main_region_bytes(&self) -> u64 {
        self.n_main as u64 * self.main_size
    }

    pub fn reserved_region_bytes(&self) -> u64 {
        self.n_log as u64 * self.log_size
    }

    pub fn cold_base(&self) -> u64 {
        self.main_region_bytes() + self.reserved_region_bytes()
    }

    pub fn provisioned_bytes(&self) -> u64 {
        self.main_region_bytes() + self.reserved_region_bytes()
    }

    pub fn main_offset(&self, group: GroupId) -> u64 {
        group.0 as u64 * self.main_size
    }

    pub fn log_offset(&self, log_id: u32) -> u64 {
        self.main_region_bytes() + log_id as u64 * self.log_size
    }

    /// Largest record that can ever be placed: it must fit in a single
    /// segment of either kind.
    pub fn max_record_bytes(&self) -> u64 {
        self.main_size.min(self.log_size)
    }
}

/// Where a group's next append lands: slot 0 is the main segment, slot k is
/// the (k-1)th entry of the group's log-segment list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndPosition {
    pub slot: u32,
    pub offset: u64,
}

#[derive(Debug, Clone, Default)]
pub struct GroupState {
    pub end: EndPosition,
    pub log_segments: Vec<u32>,
    /// Bytes appended to this group since its last GC (reset to the valid
    /// bytes written back when GC completes).
    pub write_bytes: u64,
    /// Records appended since load; distribution reporting only.
    pub records: u64,
    /// Dead bytes inside the extent (segment tails a record did not fit in).
    pub gap_bytes: u64,
    /// Global flush-operation counter value at this group's last GC.
    pub last_gc_flush_op: u64,
    /// Live-byte measurement from the last GC scan, if any.
    pub live_estimate: Option<u64>,
}

impl Default for EndPosition {
    fn default() -> Self {
        EndPosition { slot: 0, offset: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SegmentTable {
    pub groups: Vec<GroupState>,
    pub free: std::collections::BTreeSet<u32>,
    pub epoch: u64,
    /// Highest journal op id whose effects this table already includes.
    /// Recovery skips journal records at or below it.
    pub last_op_id: u64,
    pub cold_head: u64,
    pub cold_tail: u64,
}

impl SegmentTable {
    pub fn fresh(geometry: &SegmentGeometry) -> SegmentTable {
        SegmentTable {
            groups: vec![GroupState::default(); geometry.n_main as usize],
            free: (0..geometry.n_log).collect(),
            epoch: 0,
            last_op_id: 0,
            cold_head: 0,
            cold_tail: 0,
        }
    }

    /// Capacity consumed from the group start to the end position, gaps
    /// included: the full main segment plus whole log segments before the
    /// end slot, plus the offset within the end slot's segment.
    pub fn extent_consumed(&self, geometry: &SegmentGeometry, group: GroupId) -> u64 {
        let g = &self.groups[group.index()];
        if g.end.slot == 0 {
            g.end.offset
        } else {
            geometry.main_size + (g.end.slot as u64 - 1) * geometry.log_size + g.end.offset
        }
    }

    /// Whole-segment capacity allocated to the group.
    pub fn allocated_bytes(&self, geometry: &SegmentGeometry, group: GroupId) -> u64 {
        geometry.main_size + self.groups[group.index()].log_segments.len() as u64 * geometry.log_size
    }

    pub fn occupied_bytes(&self, geometry: &SegmentGeometry, group: GroupId) -> u64 {
        self.extent_consumed(geometry, group) - self.groups[group.index()].gap_bytes
    }

    /// Checks the free-list exclusivity invariant: every log segment appears
    /// in exactly one group's list or the free list, never both or twice.
    pub fn check_exclusivity(&self, geometry: &SegmentGeometry) -> Result<()> {
        let mut seen = vec![false; geometry.n_log as usize];
        for (gi, g) in self.groups.iter().enumerate() {
            for &id in &g.log_segments {
                let slot = seen
                    .get_mut(id as usize)
                    .ok_or_else(|| Error::CorruptRecord(format!("log id {id} out of range")))?;
                if *slot {
                    return Err(Error::CorruptRecord(format!(
                        "log segment {id} owned twice (group {gi})"
                    )));
                }
                *slot = true;
            }
        }
        for &id in &self.free {
            let slot = seen
                .get_mut(id as usize)
                .ok_or_else(|| Error::CorruptRecord(format!("free id {id} out of range")))?;
            if *slot {
                return Err(Error::CorruptRecord(format!("log segment {id} owned and free")));
            }
            *slot = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::CorruptRecord(format!("log segment {missing} unaccounted")));
        }
        Ok(())
    }
}

/// One placed record: its global file offset plus the slot it landed in.
#[derive(Debug, Clone, Copy)]
pub struct Placed {
    pub offset: u64,
    pub len: u32,
}

/// The result of planning an append: final record placements, gap stamps to
/// write, and the sentinel position (if the tail segment has room).
#[derive(Debug, Clone)]
pub struct Placement {
    pub placed: Vec<Placed>,
    pub sentinel: Option<u64>,
    /// Global offsets of dead gaps (>= 8 bytes) that must be stamped with a
    /// zero sentinel, so scans of reused segments stop at the gap.
    pub gap_stamps: Vec<u64>,
    pub newly_allocated: Vec<u32>,
}

pub struct SegmentStore {
    pub geometry: SegmentGeometry,
    pub table: SegmentTable,
    file: TrackedFile,
    counters: Arc<IoCounters>,
    checkpoint_path: std::path::PathBuf,
    checkpoint_tmp: std::path::PathBuf,
    fault: Option<Arc<FaultPlan>>,
}

const CKPT_MAGIC: u32 = 0x434b_4b48; // "HKKC"
const CKPT_VERSION: u32 = 1;

impl SegmentStore {
    pub fn open(
        dir: &Path,
        geometry: SegmentGeometry,
        counters: Arc<IoCounters>,
        fault: Option<Arc<FaultPlan>>,
    ) -> Result<SegmentStore> {
        let file = TrackedFile::open(
            &dir.join("value_store.dat"),
            Component::ValueStore,
            counters.clone(),
            fault.clone(),
        )?;
        let min_len = geometry.cold_base() + geometry.cold_capacity.unwrap_or(0);
        if file.len() < min_len {
            file.set_len(min_len)?;
        }
        let mut store = SegmentStore {
            table: SegmentTable::fresh(&geometry),
            geometry,
            file,
            counters,
            checkpoint_path: dir.join("segtable.ckpt"),
            checkpoint_tmp: dir.join("segtable.ckpt.tmp"),
            fault,
        };
        if let Some(table) = store.load_checkpoint()? {
            store.table = table;
        }
        Ok(store)
    }

    pub fn file(&self) -> &TrackedFile {
        &self.file
    }

    /// Plans placement for `sizes` encoded-record lengths in `group`,
    /// allocating log segments from the free list as needed. Nothing is
    /// mutated if the free list runs out; the caller triggers GC and retries.
    pub fn place(&mut self, group: GroupId, sizes: &[u32]) -> Result<Placement> {
        for &s in sizes {
            if s as u64 > self.geometry.max_record_bytes() {
                return Err(Error::InvalidArgument(format!(
                    "record of {s} bytes exceeds segment capacity {}",
                    self.geometry.max_record_bytes()
                )));
            }
        }
        // Dry run against copies so a needs-gc result leaves the table clean.
        let g = &self.table.groups[group.index()];
        let mut end = g.end;
        let mut extra_segments = 0usize;
        for &size in sizes {
            let size = size as u64;
            loop {
                let seg_capacity = if end.slot == 0 { self.geometry.main_size } else { self.geometry.log_size };
                if end.offset + size <= seg_capacity {
                    end.offset += size;
                    break;
                }
                end = EndPosition { slot: end.slot + 1, offset: 0 };
                let existing = g.log_segments.len();
                if (end.slot as usize) > existing + extra_segments {
                    extra_segments += 1;
                }
            }
        }
        if extra_segments > self.table.free.len() {
            return Err(Error::NeedsGc);
        }

        // Commit: replay the same walk, this time recording placements.
        let mut newly_allocated = Vec::with_capacity(extra_segments);
        for _ in 0..extra_segments {
            let id = *self.table.free.iter().next().unwrap();
            self.table.free.remove(&id);
            self.table.groups[group.index()].log_segments.push(id);
            newly_allocated.push(id);
        }
        let mut placed = Vec::with_capacity(sizes.len());
        let mut gap_stamps = Vec::new();
        let mut total = 0u64;
        for &size in sizes {
            let sz = size as u64;
            loop {
                let end = self.table.groups[group.index()].end;
                let seg_capacity =
                    if end.slot == 0 { self.geometry.main_size } else { self.geometry.log_size };
                if end.offset + sz <= seg_capacity {
                    let offset = self.global_offset(group, end);
                    self.table.groups[group.index()].end.offset += sz;
                    placed.push(Placed { offset, len: size });
                    break;
                }
                let gap = seg_capacity - end.offset;
                if gap >= SENTINEL_LEN {
                    gap_stamps.push(self.global_offset(group, end));
                }
                let g = &mut self.table.groups[group.index()];
                g.gap_bytes += gap;
                g.end = EndPosition { slot: end.slot + 1, offset: 0 };
                debug_assert!((g.end.slot as usize) <= g.log_segments.len());
            }
            total += sz;
        }
        let g = &mut self.table.groups[group.index()];
        g.write_bytes += total;
        g.records += sizes.len() as u64;
        let sentinel = self.sentinel_position(group);
        Ok(Placement { placed, sentinel, gap_stamps, newly_allocated })
    }

    fn global_offset(&self, group: GroupId, end: EndPosition) -> u64 {
        if end.slot == 0 {
            self.geometry.main_offset(group) + end.offset
        } else {
            let log_id = self.table.groups[group.index()].log_segments[end.slot as usize - 1];
            self.geometry.log_offset(log_id) + end.offset
        }
    }

    /// Global offset for stamping the end-of-data sentinel, if the end slot's
    /// segment has at least 8 bytes of room.
    pub fn sentinel_position(&self, group: GroupId) -> Option<u64> {
        let g = &self.table.groups[group.index()];
        let seg_capacity =
            if g.end.slot == 0 { self.geometry.main_size } else { self.geometry.log_size };
        if g.end.offset + SENTINEL_LEN <= seg_capacity {
            Some(self.global_offset(group, g.end))
        } else {
            None
        }
    }

    pub fn write_at(&self, offset: u64, bytes: &[u8]) -> Result<()> {
        self.file.write_at(offset, bytes)
    }

    pub fn stamp_sentinel(&self, offset: u64) -> Result<()> {
        self.file.write_at(offset, &[0u8; SENTINEL_LEN as usize])
    }

    /// Appends encoded records to the group in order and stamps the tail
    /// sentinel. Convenience path used by GC rewrites and tests; the flush
    /// path plans first and writes batches itself.
    pub fn append_group(&mut self, group: GroupId, records: &[Vec<u8>]) -> Result<Vec<ValueLocation>> {
        let sizes: Vec<u32> = records.iter().map(|r| r.len() as u32).collect();
        let placement = self.place(group, &sizes)?;
        for (rec, p) in records.iter().zip(placement.placed.iter()) {
            self.file.write_at(p.offset, rec)?;
        }
        for &pos in &placement.gap_stamps {
            self.stamp_sentinel(pos)?;
        }
        if let Some(pos) = placement.sentinel {
            self.stamp_sentinel(pos)?;
        }
        Ok(placement
            .placed
            .iter()
            .map(|p| ValueLocation::new(Area::SegmentStore, p.offset, p.len))
            .collect())
    }

    pub fn read_value(&self, loc: ValueLocation) -> Result<KVRecord> {
        if loc.area != Area::SegmentStore {
            return Err(Error::InvalidLocation(format!("expected segment store, got {:?}", loc.area)));
        }
        if loc.end() > self.geometry.provisioned_bytes() {
            return Err(Error::InvalidLocation(format!(
                "offset {} + len {} beyond provisioned bytes",
                loc.offset, loc.length
            )));
        }
        if (loc.length as usize) < HEADER_LEN + 1 {
            return Err(Error::InvalidLocation(format!("length {} too short", loc.length)));
        }
        let mut buf = vec![0u8; loc.length as usize];
        self.file.read_exact_at(loc.offset, &mut buf)?;
        let (rec, consumed) = record::decode_record(&buf, 0)?;
        if consumed != buf.len() {
            return Err(Error::CorruptRecord(format!(
                "record at {} consumed {consumed} of {} bytes",
                loc.offset,
                buf.len()
            )));
        }
        Ok(rec.to_owned())
    }

    /// Releases the group's log segments beyond `keep_count` back to the free
    /// list, stamping a free sentinel at each segment start. Returns freed ids.
    pub fn release_log_segments(&mut self, group: GroupId, keep_count: usize) -> Result<Vec<u32>> {
        let g = &mut self.table.groups[group.index()];
        debug_assert!(keep_count <= g.log_segments.len());
        debug_assert!((g.end.slot as usize) <= keep_count);
        let freed: Vec<u32> = g.log_segments.split_off(keep_count);
        for &id in &freed {
            self.table.free.insert(id);
        }
        for &id in &freed {
            let off = self.geometry.log_offset(id);
            self.file.write_at(off, &[0u8; SENTINEL_LEN as usize])?;
        }
        Ok(freed)
    }

    /// Reads a group's full extent (main segment prefix plus each listed log
    /// segment's used span) into one buffer. Returns the buffer and, for each
    /// segment in extent order, its (global offset, buffer offset, used len).
    pub fn read_group_extent(&self, group: GroupId) -> Result<(Vec<u8>, Vec<ExtentPart>)> {
        let g = &self.table.groups[group.index()];
        let mut parts = Vec::with_capacity(1 + g.log_segments.len());
        let mut total = 0u64;
        let end_slot = g.end.slot as usize;
        let main_used =
            if end_slot == 0 { g.end.offset } else { self.geometry.main_size };
        parts.push(ExtentPart {
            global: self.geometry.main_offset(group),
            buf_offset: 0,
            len: main_used,
        });
        total += main_used;
        for (i, &log_id) in g.log_segments.iter().enumerate() {
            let slot = i + 1;
            let used = match slot.cmp(&end_slot) {
                std::cmp::Ordering::Less => self.geometry.log_size,
                std::cmp::Ordering::Equal => g.end.offset,
                std::cmp::Ordering::Greater => 0,
            };
            parts.push(ExtentPart {
                global: self.geometry.log_offset(log_id),
                buf_offset: total,
                len: used,
            });
            total += used;
        }
        let mut buf = vec![0u8; total as usize];
        self.read_parts(&mut buf, &parts)?;
        Ok((buf, parts))
    }

    #[cfg(feature = "parallel")]
    fn read_parts(&self, buf: &mut [u8], parts: &[ExtentPart]) -> Result<()> {
        use rayon::prelude::*;
        let mut slices: Vec<(&ExtentPart, &mut [u8])> = Vec::with_capacity(parts.len());
        let mut rest = buf;
        let mut consumed = 0u64;
        for part in parts {
            debug_assert_eq!(part.buf_offset, consumed);
            let (head, tail) = rest.split_at_mut(part.len as usize);
            slices.push((part, head));
            rest = tail;
            consumed += part.len;
        }
        slices
            .into_par_iter()
            .try_for_each(|(part, slice)| self.file.read_exact_at(part.global, slice))
    }

    #[cfg(not(feature = "parallel"))]
    fn read_parts(&self, buf: &mut [u8], parts: &[ExtentPart]) -> Result<()> {
        for part in parts {
            let start = part.buf_offset as usize;
            self.file.read_exact_at(part.global, &mut buf[start..start + part.len as usize])?;
        }
        Ok(())
    }

    /// Maps an offset within a group's logical extent (gaps included) to the
    /// global file offset, given the group's current segment list.
    pub fn extent_to_global(&self, group: GroupId, extent_offset: u64) -> u64 {
        if extent_offset < self.geometry.main_size {
            return self.geometry.main_offset(group) + extent_offset;
        }
        let past_main = extent_offset - self.geometry.main_size;
        let idx = (past_main / self.geometry.log_size) as usize;
        let within = past_main % self.geometry.log_size;
        let log_id = self.table.groups[group.index()].log_segments[idx];
        self.geometry.log_offset(log_id) + within
    }

    pub fn checkpoint(&mut self) -> Result<u64> {
        self.table.epoch += 1;
        let mut payload = Vec::new();
        payload.extend_from_slice(&CKPT_MAGIC.to_le_bytes());
        payload.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        payload.extend_from_slice(&self.table.epoch.to_le_bytes());
        payload.extend_from_slice(&self.table.last_op_id.to_le_bytes());
        payload.extend_from_slice(&self.geometry.n_main.to_le_bytes());
        payload.extend_from_slice(&self.geometry.main_size.to_le_bytes());
        payload.extend_from_slice(&self.geometry.log_size.to_le_bytes());
        payload.extend_from_slice(&self.geometry.n_log.to_le_bytes());
        payload.extend_from_slice(&self.table.cold_head.to_le_bytes());
        payload.extend_from_slice(&self.table.cold_tail.to_le_bytes());
        for g in &self.table.groups {
            payload.extend_from_slice(&g.end.slot.to_le_bytes());
            payload.extend_from_slice(&g.end.offset.to_le_bytes());
            payload.extend_from_slice(&g.write_bytes.to_le_bytes());
            payload.extend_from_slice(&g.records.to_le_bytes());
            payload.extend_from_slice(&g.gap_bytes.to_le_bytes());
            payload.extend_from_slice(&g.last_gc_flush_op.to_le_bytes());
            payload.extend_from_slice(&(g.log_segments.len() as u32).to_le_bytes());
            for &id in &g.log_segments {
                payload.extend_from_slice(&id.to_le_bytes());
            }
        }
        payload.extend_from_slice(&(self.table.free.len() as u32).to_le_bytes());
        for &id in &self.table.free {
            payload.extend_from_slice(&id.to_le_bytes());
        }
        let crc = crc32fast::hash(&payload);
        payload.extend_from_slice(&crc.to_le_bytes());

        let tmp = TrackedFile::open(
            &self.checkpoint_tmp,
            Component::Checkpoint,
            self.counters.clone(),
            self.fault.clone(),
        )?;
        tmp.set_len(0)?;
        tmp.write_at(0, &payload)?;
        tmp.sync()?;
        std::fs::rename(&self.checkpoint_tmp, &self.checkpoint_path)?;
        Ok(self.table.epoch)
    }

    pub fn load_checkpoint(&self) -> Result<Option<SegmentTable>> {
        if !self.checkpoint_path.exists() {
            return Ok(None);
        }
        let data = std::fs::read(&self.checkpoint_path)?;
        if data.len() < 4 {
            return Err(Error::CorruptRecord("checkpoint too short".into()));
        }
        let (payload, crc_bytes) = data.split_at(data.len() - 4);
        let want = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        if crc32fast::hash(payload) != want {
            return Err(Error::CorruptRecord("checkpoint crc mismatch".into()));
        }
        let mut r = Reader { buf: payload, at: 0 };
        let magic = r.u32()?;
        if magic != CKPT_MAGIC {
            return Err(Error::IncompatibleStore("checkpoint magic".into()));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::IncompatibleStore(format!("checkpoint version {version}")));
        }
        let epoch = r.u64()?;
        let last_op_id = r.u64()?;
        let n_main = r.u32()?;
        let main_size = r.u64()?;
        let log_size = r.u64()?;
        let n_log = r.u32()?;
        if n_main != self.geometry.n_main
            || main_size != self.geometry.main_size
            || log_size != self.geometry.log_size
            || n_log != self.geometry.n_log
        {
            return Err(Error::IncompatibleStore(format!(
                "checkpoint geometry {n_main}x{main_size}+{n_log}x{log_size} differs from configured"
            )));
        }
        let cold_head = r.u64()?;
        let cold_tail = r.u64()?;
        let mut groups = Vec::with_capacity(n_main as usize);
        for _ in 0..n_main {
            let slot = r.u32()?;
            let offset = r.u64()?;
            let write_bytes = r.u64()?;
            let records = r.u64()?;
            let gap_bytes = r.u64()?;
            let last_gc_flush_op = r.u64()?;
            let n = r.u32()? as usize;
            let mut log_segments = Vec::with_capacity(n);
            for _ in 0..n {
                log_segments.push(r.u32()?);
            }
            groups.push(GroupState {
                end: EndPosition { slot, offset },
                log_segments,
                write_bytes,
                records,
                gap_bytes,
                last_gc_flush_op,
                live_estimate: None,
            });
        }
        let n_free = r.u32()? as usize;
        let mut free = std::collections::BTreeSet::new();
        for _ in 0..n_free {
            free.insert(r.u32()?);
        }
        let table = SegmentTable { groups, free, epoch, last_op_id, cold_head, cold_tail };
        table.check_exclusivity(&self.geometry)?;
        Ok(Some(table))
    }
}

impl SegmentStore {
    fn cold_span(&self) -> crate::circ::CircularSpan {
        crate::circ::CircularSpan::new(self.geometry.cold_base(), self.geometry.cold_capacity)
    }

    pub fn cold_free_bytes(&self) -> Option<u64> {
        self.geometry
            .cold_capacity
            .map(|cap| cap - (self.table.cold_head - self.table.cold_tail))
    }

    /// Appends records to the cold data log head. `NeedsGc` when a capped
    /// cold region lacks space; the caller runs cold-log GC and retries (or
    /// falls back to keeping the value in its segment group).
    pub fn cold_append(&mut self, records: &[Vec<u8>]) -> Result<Vec<ValueLocation>> {
        let total: u64 = records.iter().map(|r| r.len() as u64).sum();
        if let Some(free) = self.cold_free_bytes() {
            if total > free {
                return Err(Error::NeedsGc);
            }
        }
        let span = self.cold_span();
        let mut out = Vec::with_capacity(records.len());
        for rec in records {
            span.write(&self.file, self.table.cold_head, rec)?;
            out.push(ValueLocation::new(Area::ColdLog, self.table.cold_head, rec.len() as u32));
            self.table.cold_head += rec.len() as u64;
        }
        Ok(out)
    }

    pub fn cold_write_logical(&self, logical: u64, bytes: &[u8]) -> Result<()> {
        self.cold_span().write(&self.file, logical, bytes)
    }

    pub fn cold_read(&self, loc: ValueLocation) -> Result<KVRecord> {
        if loc.area != Area::ColdLog {
            return Err(Error::InvalidLocation(format!("expected cold log, got {:?}", loc.area)));
        }
        if loc.offset < self.table.cold_tail || loc.end() > self.table.cold_head {
            return Err(Error::InvalidLocation(format!(
                "cold offset {} outside live range [{}, {})",
                loc.offset, self.table.cold_tail, self.table.cold_head
            )));
        }
        let buf = self.cold_span().read(&self.file, loc.offset, loc.length as usize)?;
        let (rec, consumed) = record::decode_record(&buf, 0)?;
        if consumed != buf.len() {
            return Err(Error::CorruptRecord(format!("cold record at {}", loc.offset)));
        }
        Ok(rec.to_owned())
    }

    /// Decodes up to `chunk` bytes of complete records at the cold tail.
    pub fn cold_read_tail_chunk(&self, chunk: u64) -> Result<(Vec<(u64, KVRecord)>, u64)> {
        let live = self.table.cold_head - self.table.cold_tail;
        if live == 0 {
            return Ok((Vec::new(), 0));
        }
        let span = self.cold_span();
        let mut want = chunk.min(live);
        let header = span.read(&self.file, self.table.cold_tail, HEADER_LEN.min(live as usize))?;
        if header.len() == HEADER_LEN {
            let ksz = header[1] as u64;
            let vsz = u32::from_le_bytes([header[4], header[5], header[6], header[7]]) as u64;
            want = want.max(HEADER_LEN as u64 + ksz + vsz).min(live);
        }
        let buf = span.read(&self.file, self.table.cold_tail, want as usize)?;
        let mut out = Vec::new();
        let mut at = 0usize;
        while at + HEADER_LEN <= buf.len() {
            match record::decode_record(&buf, at) {
                Ok((rec, consumed)) => {
                    out.push((self.table.cold_tail + at as u64, rec.to_owned()));
                    at += consumed;
                }
                Err(_) if at > 0 => break,
                Err(e) => return Err(e),
            }
        }
        Ok((out, at as u64))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExtentPart {
    pub global: u64,
    pub buf_offset: u64,
    pub len: u64,
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> Result<u32> {
        let b = self
            .buf
            .get(self.at..self.at + 4)
            .ok_or_else(|| Error::CorruptRecord("checkpoint truncated".into()))?;
        self.at += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self
            .buf
            .get(self.at..self.at + 8)
            .ok_or_else(|| Error::CorruptRecord("checkpoint truncated".into()))?;
        self.at += 8;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{encode_record, hash_group};

    fn small_geometry() -> SegmentGeometry {
        SegmentGeometry {
            n_main: 4,
            main_size: 4096,
            log_size: 1024,
            n_log: 8,
            cold_capacity: Some(4096),
        }
    }

    fn open_store(dir: &Path) -> SegmentStore {
        SegmentStore::open(dir, small_geometry(), IoCounters::new(), None).unwrap()
    }

    #[test]
    fn first_append_lands_at_main_start() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        let rec = encode_record(0, &[7u8; 24], &vec![1u8; 992]).unwrap();
        let locs = store.append_group(GroupId(2), &[rec.clone()]).unwrap();
        assert_eq!(locs.len(), 1);
        assert_eq!(locs[0].offset, store.geometry.main_offset(GroupId(2)));
        assert_eq!(locs[0].length, 1024);
        assert_eq!(store.table.groups[2].end, EndPosition { slot: 0, offset: 1024 });
        let got = store.read_value(locs[0]).unwrap();
        assert_eq!(got.key, vec![7u8; 24]);
        assert_eq!(got.value, vec![1u8; 992]);
    }

    #[test]
    fn oversized_record_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        let rec = encode_record(0, b"k", &vec![0u8; 1100]).unwrap();
        assert!(matches!(
            store.append_group(GroupId(0), &[rec]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn spill_leaves_gap_and_allocates_log_segment() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        let g = GroupId(0);
        // Fill the 4096-byte main segment to 4000 bytes.
        let filler = encode_record(0, b"f", &vec![0u8; 991]).unwrap();
        assert_eq!(filler.len(), 1000);
        store.append_group(g, &[filler.clone(), filler.clone(), filler.clone(), filler]).unwrap();
        // A 1 KiB record does not fit in the remaining 96 bytes.
        let rec = encode_record(0, &[1u8; 24], &vec![2u8; 992]).unwrap();
        let locs = store.append_group(g, &[rec]).unwrap();
        let first_log = store.table.groups[0].log_segments[0];
        assert_eq!(locs[0].offset, store.geometry.log_offset(first_log));
        assert_eq!(store.table.groups[0].gap_bytes, 96);
        assert_eq!(store.table.free.len(), 7);
    }

    #[test]
    fn exhausted_free_list_needs_gc() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        let g = GroupId(1);
        let rec = encode_record(0, &[3u8; 24], &vec![0u8; 992]).unwrap();
        // Main 4 KiB + 8 log segments of 1 KiB each hold 12 records.
        for _ in 0..12 {
            store.append_group(g, &[rec.clone()]).unwrap();
        }
        assert_eq!(store.table.free.len(), 0);
        assert!(matches!(store.append_group(g, &[rec]), Err(Error::NeedsGc)));
        // The failed append left the table unchanged.
        store.table.check_exclusivity(&store.geometry).unwrap();
        assert_eq!(store.table.groups[1].log_segments.len(), 8);
    }

    #[test]
    fn release_returns_trailing_segments() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        let g = GroupId(1);
        let rec = encode_record(0, &[3u8; 24], &vec![0u8; 992]).unwrap();
        for _ in 0..7 {
            store.append_group(g, &[rec.clone()]).unwrap();
        }
        assert_eq!(store.table.groups[1].log_segments.len(), 3);
        // Pull the end position back into the main segment, then free all.
        store.table.groups[1].end = EndPosition { slot: 0, offset: 1024 };
        let freed = store.release_log_segments(g, 1).unwrap();
        assert_eq!(freed.len(), 2);
        assert_eq!(store.table.free.len(), 7);
        let freed = store.release_log_segments(g, 0).unwrap();
        assert_eq!(freed.len(), 1);
        assert_eq!(store.table.free.len(), 8);
        let freed = store.release_log_segments(g, 0).unwrap();
        assert!(freed.is_empty());
        store.table.check_exclusivity(&store.geometry).unwrap();
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = encode_record(0, &[9u8; 24], &vec![5u8; 992]).unwrap();
        {
            let mut store = open_store(dir.path());
            for _ in 0..6 {
                store.append_group(GroupId(3), &[rec.clone()]).unwrap();
            }
            store.table.cold_head = 777;
            let epoch = store.checkpoint().unwrap();
            assert_eq!(epoch, 1);
        }
        let store = open_store(dir.path());
        assert_eq!(store.table.epoch, 1);
        assert_eq!(store.table.cold_head, 777);
        assert_eq!(store.table.groups[3].write_bytes, 6 * 1024);
        assert_eq!(store.table.groups[3].log_segments.len(), 2);
        store.table.check_exclusivity(&store.geometry).unwrap();
    }

    #[test]
    fn fresh_store_has_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let store = open_store(dir.path());
        assert_eq!(store.table.epoch, 0);
        assert_eq!(store.table.free.len(), 8);
        assert!(store.table.groups.iter().all(|g| g.end == EndPosition::default()));
    }

    #[test]
    fn partition_isolation_by_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        let n = store.geometry.n_main;
        for i in 0..200u32 {
            let key = format!("key-{i}");
            let group = hash_group(key.as_bytes(), n);
            let rec = encode_record(0, key.as_bytes(), &[0u8; 50]).unwrap();
            let locs = store.append_group(group, &[rec]).unwrap();
            // The location must lie inside the group's main segment or one of
            // its listed log segments.
            let off = locs[0].offset;
            let in_main = off >= store.geometry.main_offset(group)
                && off < store.geometry.main_offset(group) + store.geometry.main_size;
            let in_logs = store.table.groups[group.index()].log_segments.iter().any(|&id| {
                off >= store.geometry.log_offset(id)
                    && off < store.geometry.log_offset(id) + store.geometry.log_size
            });
            assert!(in_main || in_logs);
        }
        store.table.check_exclusivity(&store.geometry).unwrap();
    }

    #[test]
    fn accounting_balances() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path());
        let rec = encode_record(0, &[1u8; 24], &vec![0u8; 467]).unwrap(); // 499 B, forces gaps
        for i in 0..40u32 {
            let g = GroupId(i % 4);
            if store.append_group(g, &[rec.clone()]).is_err() {
                break;
            }
        }
        let geom = &store.geometry;
        let mut allocated = 0u64;
        for gi in 0..geom.n_main {
            let g = GroupId(gi);
            let occupied = store.table.occupied_bytes(geom, g);
            let gaps = store.table.groups[g.index()].gap_bytes;
            let consumed = store.table.extent_consumed(geom, g);
            assert_eq!(occupied + gaps, consumed);
            allocated += store.table.allocated_bytes(geom, g);
        }
        let free_bytes = store.table.free.len() as u64 * geom.log_size;
        assert_eq!(allocated + free_bytes, geom.provisioned_bytes());
    }
}
