//! Segment-group garbage collection.
//!
//! Candidate selection (greedy by write counter, cost-benefit, greedy-random,
//! uniform random), scan-based validity without any index lookups, valid-data
//! rewrite with optional hot/cold tagging, and cold-log/vLog chunk GC.
//!
//! A GC run is split into a read-only planning step and an idempotent apply
//! step. The journal persists the plan before apply, so crash recovery can
//! rebuild the plan and re-run the same apply function.

use std::collections::BinaryHeap;
use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cache::WriteCache;
use crate::error::{Error, Result};
use crate::metrics::GcStats;
use crate::record::{self, Area, GroupId, ValueLocation, FLAG_COLD_TAG, HEADER_LEN};
use crate::segment::{EndPosition, ExtentPart, SegmentGeometry, SegmentStore, SegmentTable, SENTINEL_LEN};
use crate::vlog::VLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Greedy,
    Cba,
    Gra,
    Random,
}

#[derive(Debug, Clone, Copy)]
pub struct GcPolicy {
    pub kind: PolicyKind,
    /// Candidate pool size for GRA. `d = 1` behaves as greedy; `d` at or
    /// above the group count behaves as random.
    pub gra_d: usize,
}

impl Default for GcPolicy {
    fn default() -> Self {
        GcPolicy { kind: PolicyKind::Greedy, gra_d: 5 }
    }
}

/// Max-heap over (write_bytes, group) with lazy invalidation: stale entries
/// are discarded against the live segment table when popped.
#[derive(Debug, Default)]
pub struct GreedyHeap {
    heap: BinaryHeap<(u64, std::cmp::Reverse<u32>)>,
}

impl GreedyHeap {
    pub fn push(&mut self, group: GroupId, write_bytes: u64) {
        if write_bytes > 0 {
            self.heap.push((write_bytes, std::cmp::Reverse(group.0)));
        }
    }

    pub fn rebuild(&mut self, table: &SegmentTable) {
        self.heap.clear();
        for (i, g) in table.groups.iter().enumerate() {
            if g.write_bytes > 0 {
                self.heap.push((g.write_bytes, std::cmp::Reverse(i as u32)));
            }
        }
    }

    /// Pops the group with the largest current write counter (ties to the
    /// lowest group id). Rebuilds from the table if the heap has gone stale.
    pub fn pop_max(&mut self, table: &SegmentTable) -> Option<GroupId> {
        for _ in 0..2 {
            while let Some((bytes, std::cmp::Reverse(gid))) = self.heap.pop() {
                if table.groups[gid as usize].write_bytes == bytes && bytes > 0 {
                    return Some(GroupId(gid));
                }
            }
            self.rebuild(table);
        }
        None
    }
}

/// CBA score: (1 - u) * age / (1 + u), preferring stable groups with little
/// valid data. `u` comes from the last scan, or a main-segment-based estimate
/// before the first one.
fn cba_score(table: &SegmentTable, geometry: &SegmentGeometry, group: usize, flush_ops: u64) -> f64 {
    let g = &table.groups[group];
    let extent = table.extent_consumed(geometry, GroupId(group as u32));
    if extent == 0 {
        return f64::MIN;
    }
    let live = g.live_estimate.unwrap_or_else(|| geometry.main_size.min(extent));
    let u = (live as f64 / extent as f64).clamp(0.0, 1.0);
    let age = flush_ops.saturating_sub(g.last_gc_flush_op) as f64;
    (1.0 - u) * age / (1.0 + u)
}

pub fn select_group(
    policy: &GcPolicy,
    table: &SegmentTable,
    geometry: &SegmentGeometry,
    flush_ops: u64,
    heap: &mut GreedyHeap,
    rng: &mut ChaCha8Rng,
) -> Result<GroupId> {
    let eligible: Vec<u32> = table
        .groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.write_bytes > 0)
        .map(|(i, _)| i as u32)
        .collect();
    if eligible.is_empty() {
        return Err(Error::NothingToCollect);
    }
    match policy.kind {
        PolicyKind::Greedy => heap.pop_max(table).ok_or(Error::NothingToCollect),
        PolicyKind::Cba => {
            let mut best = eligible[0] as usize;
            let mut best_score = cba_score(table, geometry, best, flush_ops);
            for &gid in &eligible[1..] {
                let score = cba_score(table, geometry, gid as usize, flush_ops);
                if score > best_score {
                    best = gid as usize;
                    best_score = score;
                }
            }
            Ok(GroupId(best as u32))
        }
        PolicyKind::Gra => {
            let mut ranked: Vec<u32> = eligible.clone();
            ranked.sort_by_key(|&gid| {
                (std::cmp::Reverse(table.groups[gid as usize].write_bytes), gid)
            });
            let d = policy.gra_d.max(1).min(ranked.len());
            Ok(GroupId(ranked[rng.gen_range(0..d)]))
        }
        PolicyKind::Random => Ok(GroupId(eligible[rng.gen_range(0..eligible.len())])),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NewestKind {
    Value,
    Tombstone,
    Tag,
}

#[derive(Debug, Clone)]
struct KeyState {
    newest_at: usize,
    newest_len: u32,
    newest_kind: NewestKind,
    versions: u32,
    shadowed: bool,
}

/// Result of the validity scan of one segment group.
#[derive(Debug)]
pub struct GroupScan {
    keys: HashMap<Vec<u8>, KeyState>,
    pub live_bytes: u64,
    pub scanned_bytes: u64,
    pub shadowed_keys: u64,
}

impl GroupScan {
    pub fn key_count(&self) -> usize {
        self.keys.len()
    }

    pub fn versions_of(&self, key: &[u8]) -> u32 {
        self.keys.get(key).map(|s| s.versions).unwrap_or(0)
    }

    pub fn newest_offset_of(&self, key: &[u8]) -> Option<u64> {
        self.keys.get(key).map(|s| s.newest_at as u64)
    }

    pub fn is_live(&self, key: &[u8]) -> bool {
        self.keys
            .get(key)
            .map(|s| !s.shadowed && s.newest_kind != NewestKind::Tombstone)
            .unwrap_or(false)
    }
}

/// Decode-scans the group's extent in write order: main segment first, then
/// log segments in list order. The record of a key nearest the group end is
/// its latest version. Keys present in the write cache are marked shadowed
/// (the cached version is newer than anything on disk).
pub fn scan_group(buf: &[u8], parts: &[ExtentPart], cache: &WriteCache) -> Result<GroupScan> {
    let mut keys: HashMap<Vec<u8>, KeyState> = HashMap::new();
    let mut scanned = 0u64;
    for part in parts {
        let start = part.buf_offset as usize;
        let end = start + part.len as usize;
        let mut at = start;
        while at + HEADER_LEN <= end {
            if buf[at + 1] == 0 {
                break; // gap or end-of-data sentinel
            }
            let (rec, consumed) = record::decode_record(&buf[..end], at).map_err(|e| {
                Error::GcAbort(format!("corrupt record at extent offset {at}: {e}"))
            })?;
            let kind = if rec.is_tombstone() {
                NewestKind::Tombstone
            } else if rec.is_cold_tag() {
                NewestKind::Tag
            } else {
                NewestKind::Value
            };
            match keys.get_mut(rec.key) {
                Some(state) => {
                    state.versions += 1;
                    state.newest_at = at;
                    state.newest_len = consumed as u32;
                    state.newest_kind = kind;
                }
                None => {
                    keys.insert(
                        rec.key.to_vec(),
                        KeyState {
                            newest_at: at,
                            newest_len: consumed as u32,
                            newest_kind: kind,
                            versions: 1,
                            shadowed: false,
                        },
                    );
                }
            }
            at += consumed;
            scanned += consumed as u64;
        }
    }
    let mut live = 0u64;
    let mut shadowed_keys = 0u64;
    for (key, state) in keys.iter_mut() {
        if cache.contains(key) {
            state.shadowed = true;
            shadowed_keys += 1;
            continue;
        }
        if state.newest_kind != NewestKind::Tombstone {
            live += state.newest_len as u64;
        }
    }
    Ok(GroupScan { keys, live_bytes: live, scanned_bytes: scanned, shadowed_keys })
}

/// One planned device write: destination (global file offset for group
/// writes, logical offset for circular logs), the bytes, and where the bytes
/// came from (so the journal can store a reference instead of a copy when
/// the source stays readable during redo).
#[derive(Debug, Clone)]
pub struct PlannedWrite {
    pub dst: u64,
    pub bytes: Vec<u8>,
    pub src: WriteSrc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteSrc {
    /// Synthesized bytes (tag records); always journaled inline.
    Inline,
    /// Copied from a group extent at this global offset.
    GroupAt(u64),
    /// Copied from a circular log at this logical offset.
    CircAt(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LiteEntry {
    Loc(ValueLocation),
    Tombstone,
}

/// A fully decided segment-group GC, produced by planning and persisted to
/// the GC journal before any byte of the group is overwritten.
#[derive(Debug, Clone)]
pub struct GcPlan {
    pub op_id: u64,
    pub group: GroupId,
    pub keep_count: u32,
    pub freed: Vec<u32>,
    pub end_after: EndPosition,
    pub gap_bytes_after: u64,
    pub write_bytes_after: u64,
    pub gap_stamps: Vec<u64>,
    pub sentinel: Option<u64>,
    pub writes: Vec<PlannedWrite>,
    pub cold_writes: Vec<PlannedWrite>,
    pub cold_head_before: u64,
    pub cold_head_after: u64,
    pub index_updates: Vec<(Vec<u8>, LiteEntry)>,
    /// Live bytes in the group after the rewrite (skipped-in-place records
    /// included); feeds the cost-benefit estimate.
    pub live_after: u64,
    pub stats: GcStats,
}

struct RewriteCursor<'a> {
    geometry: &'a SegmentGeometry,
    group: GroupId,
    kept_logs: &'a [u32],
    end: EndPosition,
    gap_bytes: u64,
    gap_stamps: Vec<u64>,
}

impl<'a> RewriteCursor<'a> {
    fn global(&self) -> u64 {
        if self.end.slot == 0 {
            self.geometry.main_offset(self.group) + self.end.offset
        } else {
            self.geometry.log_offset(self.kept_logs[self.end.slot as usize - 1]) + self.end.offset
        }
    }

    fn place(&mut self, len: u64) -> Result<u64> {
        loop {
            let cap = if self.end.slot == 0 { self.geometry.main_size } else { self.geometry.log_size };
            if self.end.offset + len <= cap {
                let at = self.global();
                self.end.offset += len;
                return Ok(at);
            }
            let gap = cap - self.end.offset;
            if gap >= SENTINEL_LEN {
                self.gap_stamps.push(self.global());
            }
            self.gap_bytes += gap;
            self.end = EndPosition { slot: self.end.slot + 1, offset: 0 };
            if (self.end.slot as usize) > self.kept_logs.len() {
                return Err(Error::OutOfSpace);
            }
        }
    }

    fn sentinel(&self) -> Option<u64> {
        let cap = if self.end.slot == 0 { self.geometry.main_size } else { self.geometry.log_size };
        if self.end.offset + SENTINEL_LEN <= cap {
            Some(self.global())
        } else {
            None
        }
    }
}

/// Builds the rewrite plan for `group` from a completed scan.
///
/// With hotness awareness off, every key whose newest record is not a
/// tombstone is rewritten from the group start in scan order. With it on,
/// keys updated at least once since their insert (version count >= 2, or
/// shadowed by the write cache) stay in the group; cold keys have their value
/// moved to the cold data log (budget permitting) and only a tag record is
/// rewritten. Keys whose newest record is already a tag keep their tag.
///
/// Shadowed keys are rewritten too (without reclassification) so the durable
/// pre-flush version survives a crash that loses the write cache.
#[allow(clippy::too_many_arguments)]
pub fn build_group_plan(
    seg: &SegmentStore,
    cache: &WriteCache,
    group: GroupId,
    op_id: u64,
    hotness: bool,
    cold_budget: u64,
    skipped_cold_migrations: &mut u64,
) -> Result<(GcPlan, u64)> {
    let (buf, parts) = seg.read_group_extent(group)?;
    let scan = scan_group(&buf, &parts, cache)?;

    // Rewrite in scan order of each key's newest record.
    let mut order: Vec<(&Vec<u8>, &KeyState)> = scan.keys.iter().collect();
    order.sort_by_key(|(_, s)| s.newest_at);

    enum Action {
        Rewrite,
        TagRewrite,
        ColdMove,
    }

    let mut decided: Vec<(&Vec<u8>, &KeyState, Action)> = Vec::with_capacity(order.len());
    let mut cold_spent = 0u64;
    for (key, state) in order {
        if state.shadowed {
            decided.push((key, state, Action::Rewrite));
            continue;
        }
        match state.newest_kind {
            NewestKind::Tombstone => {} // dead; reclaimed
            NewestKind::Tag => decided.push((key, state, Action::TagRewrite)),
            NewestKind::Value => {
                if !hotness || state.versions >= 2 {
                    decided.push((key, state, Action::Rewrite));
                } else if cold_spent + state.newest_len as u64 <= cold_budget {
                    cold_spent += state.newest_len as u64;
                    decided.push((key, state, Action::ColdMove));
                } else {
                    *skipped_cold_migrations += 1;
                    decided.push((key, state, Action::Rewrite));
                }
            }
        }
    }

    let group_state = &seg.table.groups[group.index()];
    let mut cursor = RewriteCursor {
        geometry: &seg.geometry,
        group,
        kept_logs: &group_state.log_segments,
        end: EndPosition { slot: 0, offset: 0 },
        gap_bytes: 0,
        gap_stamps: Vec::new(),
    };

    let mut writes: Vec<PlannedWrite> = Vec::new();
    let mut cold_writes: Vec<PlannedWrite> = Vec::new();
    let mut index_updates: Vec<(Vec<u8>, LiteEntry)> = Vec::new();
    let cold_head_before = seg.table.cold_head;
    let mut cold_head = cold_head_before;
    let mut bytes_rewritten = 0u64;
    let mut cold_moved = 0u64;

    let mut live_after = 0u64;
    for (key, state, action) in decided {
        let old_bytes = &buf[state.newest_at..state.newest_at + state.newest_len as usize];
        let old_global = part_global(&parts, state.newest_at as u64);
        match action {
            Action::Rewrite => {
                let dst = cursor.place(state.newest_len as u64)?;
                live_after += state.newest_len as u64;
                // Records that do not move need neither a device write nor
                // an index update; their bytes and location are already
                // current. Cache-shadowed records are always rewritten so
                // the pending-flush protocol sees a fresh location.
                if dst == old_global && !state.shadowed {
                    continue;
                }
                writes.push(PlannedWrite {
                    dst,
                    bytes: old_bytes.to_vec(),
                    src: WriteSrc::GroupAt(old_global),
                });
                bytes_rewritten += state.newest_len as u64;
                match state.newest_kind {
                    NewestKind::Value => index_updates.push((
                        key.clone(),
                        LiteEntry::Loc(ValueLocation::new(
                            Area::SegmentStore,
                            dst,
                            state.newest_len,
                        )),
                    )),
                    NewestKind::Tombstone => {
                        index_updates.push((key.clone(), LiteEntry::Tombstone))
                    }
                    // The index points at the cold log, not at the tag.
                    NewestKind::Tag => {}
                }
            }
            Action::TagRewrite => {
                let dst = cursor.place(state.newest_len as u64)?;
                live_after += state.newest_len as u64;
                if dst == old_global {
                    continue;
                }
                writes.push(PlannedWrite {
                    dst,
                    bytes: old_bytes.to_vec(),
                    src: WriteSrc::GroupAt(old_global),
                });
                bytes_rewritten += state.newest_len as u64;
            }
            Action::ColdMove => {
                cold_writes.push(PlannedWrite {
                    dst: cold_head,
                    bytes: old_bytes.to_vec(),
                    src: WriteSrc::GroupAt(old_global),
                });
                index_updates.push((
                    key.clone(),
                    LiteEntry::Loc(ValueLocation::new(Area::ColdLog, cold_head, state.newest_len)),
                ));
                cold_head += state.newest_len as u64;
                cold_moved += state.newest_len as u64;

                let tag = record::encode_record(FLAG_COLD_TAG, key, &[])?;
                let tag_len = tag.len() as u64;
                let dst = cursor.place(tag_len)?;
                live_after += tag_len;
                writes.push(PlannedWrite { dst, bytes: tag, src: WriteSrc::Inline });
                bytes_rewritten += tag_len;
            }
        }
    }

    let keep_count = cursor.end.slot;
    let freed: Vec<u32> = group_state.log_segments[keep_count as usize..].to_vec();
    let stats = GcStats {
        bytes_scanned: scan.scanned_bytes,
        bytes_rewritten,
        log_segments_freed: freed.len() as u64,
        lsm_lookups: 0,
        index_updates: index_updates.len() as u64,
        cold_bytes_moved: cold_moved,
    };
    let sentinel = cursor.sentinel();
    // The write counter restarts at zero so the greedy heap ranks groups by
    // garbage accumulated since their last collection. Carrying the live
    // bytes forward instead would keep freshly collected groups at the top
    // of the heap and stall reclamation under small-update workloads.
    let plan = GcPlan {
        op_id,
        group,
        keep_count,
        freed,
        end_after: cursor.end,
        gap_bytes_after: cursor.gap_bytes,
        write_bytes_after: 0,
        gap_stamps: cursor.gap_stamps,
        sentinel,
        writes,
        cold_writes,
        cold_head_before,
        cold_head_after: cold_head,
        index_updates,
        live_after,
        stats,
    };
    Ok((plan, scan.live_bytes))
}

fn part_global(parts: &[ExtentPart], buf_offset: u64) -> u64 {
    for part in parts {
        if buf_offset >= part.buf_offset && buf_offset < part.buf_offset + part.len.max(1) {
            return part.global + (buf_offset - part.buf_offset);
        }
    }
    debug_assert!(false, "buffer offset {buf_offset} outside extent parts");
    0
}

/// Global byte ranges whose overwrite cannot be re-derived during redo:
/// gap stamps, the tail sentinel, and the free stamps of released segments.
/// A source record intersecting these must travel in the journal as a copy.
/// The rewrite region itself is excluded: a record moved there is readable
/// at its destination once written, so redo verifies source-or-destination
/// by checksum instead.
pub fn plan_overwritten_ranges(seg: &SegmentStore, plan: &GcPlan) -> Vec<(u64, u64)> {
    let geometry = &seg.geometry;
    let mut ranges = Vec::new();
    if let Some(s) = plan.sentinel {
        ranges.push((s, s + SENTINEL_LEN));
    }
    for &g in &plan.gap_stamps {
        ranges.push((g, g + SENTINEL_LEN));
    }
    for &id in &plan.freed {
        let base = geometry.log_offset(id);
        ranges.push((base, base + SENTINEL_LEN));
    }
    ranges
}

/// True when a planned rewrite's destination overlaps its own source, in
/// which case a torn write could destroy the only copy and the journal must
/// carry the bytes.
pub fn self_overlapping(w: &PlannedWrite) -> bool {
    match w.src {
        WriteSrc::GroupAt(old) => {
            let len = w.bytes.len() as u64;
            w.dst < old + len && old < w.dst + len && w.dst != old
        }
        _ => false,
    }
}

/// Applies a group GC plan: rewrites the group, stamps gaps and the tail
/// sentinel, releases surplus log segments, and updates the segment table.
/// Index updates are the caller's next step. Idempotent: recovery re-runs it
/// from the journaled plan.
pub fn apply_group_plan(seg: &mut SegmentStore, plan: &GcPlan) -> Result<()> {
    for w in &plan.cold_writes {
        seg.cold_write_logical(w.dst, &w.bytes)?;
    }
    // Contiguous rewrites coalesce into runs of up to 256 KiB per write.
    const RUN_CAP: usize = 256 << 10;
    let mut i = 0;
    while i < plan.writes.len() {
        let start = plan.writes[i].dst;
        let mut buf = plan.writes[i].bytes.clone();
        let mut j = i + 1;
        while j < plan.writes.len()
            && plan.writes[j].dst == start + buf.len() as u64
            && buf.len() < RUN_CAP
        {
            buf.extend_from_slice(&plan.writes[j].bytes);
            j += 1;
        }
        seg.write_at(start, &buf)?;
        i = j;
    }
    for &g in &plan.gap_stamps {
        seg.stamp_sentinel(g)?;
    }
    if let Some(s) = plan.sentinel {
        seg.stamp_sentinel(s)?;
    }

    let g = &mut seg.table.groups[plan.group.index()];
    let expected_tail: Vec<u32> = g.log_segments[plan.keep_count as usize..].to_vec();
    if expected_tail != plan.freed {
        return Err(Error::RecoveryFailed(format!(
            "group {} log list mismatch: tail {:?} vs freed {:?}",
            plan.group.0, expected_tail, plan.freed
        )));
    }
    g.end = plan.end_after;
    g.gap_bytes = plan.gap_bytes_after;
    g.write_bytes = plan.write_bytes_after;
    g.live_estimate = Some(plan.live_after);
    seg.release_log_segments(plan.group, plan.keep_count as usize)?;
    seg.table.cold_head = seg.table.cold_head.max(plan.cold_head_after);
    Ok(())
}

/// A planned chunk GC of a circular log (the cold data log or the vLog).
#[derive(Debug, Clone)]
pub struct CircularGcPlan {
    pub op_id: u64,
    pub area: Area,
    pub tail_before: u64,
    pub tail_after: u64,
    pub head_before: u64,
    pub head_after: u64,
    pub appends: Vec<PlannedWrite>,
    pub index_updates: Vec<(Vec<u8>, LiteEntry)>,
    pub stats: GcStats,
}

/// Physical overlap test between two logical ranges of a circular region.
pub fn circular_ranges_overlap(capacity: Option<u64>, a: (u64, u64), b: (u64, u64)) -> bool {
    fn linear(a: (u64, u64), b: (u64, u64)) -> bool {
        a.0 < b.1 && b.0 < a.1
    }
    match capacity {
        None => linear(a, b),
        Some(cap) => {
            let split = |(s, e): (u64, u64)| -> Vec<(u64, u64)> {
                if s == e {
                    return vec![];
                }
                debug_assert!(e - s <= cap);
                let ps = s % cap;
                let pe = e % cap;
                if ps < pe {
                    vec![(ps, pe)]
                } else {
                    vec![(ps, cap), (0, pe)]
                }
            };
            for ra in split(a) {
                for rb in split(b) {
                    if linear(ra, rb) {
                        return true;
                    }
                }
            }
            false
        }
    }
}

pub fn apply_cold_plan(seg: &mut SegmentStore, plan: &CircularGcPlan) -> Result<()> {
    for w in &plan.appends {
        seg.cold_write_logical(w.dst, &w.bytes)?;
    }
    seg.table.cold_head = seg.table.cold_head.max(plan.head_after);
    seg.table.cold_tail = seg.table.cold_tail.max(plan.tail_after);
    Ok(())
}

pub fn apply_vlog_plan(vlog: &mut VLog, plan: &CircularGcPlan) -> Result<()> {
    for w in &plan.appends {
        vlog.write_logical(w.dst, &w.bytes)?;
    }
    vlog.set_state(vlog.head.max(plan.head_after), vlog.tail.max(plan.tail_after));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::IoCounters;
    use crate::record::FLAG_TOMBSTONE;
    use rand::SeedableRng;

    fn table_with_writes(writes: &[u64]) -> (SegmentTable, SegmentGeometry) {
        let geometry = SegmentGeometry {
            n_main: writes.len() as u32,
            main_size: 4096,
            log_size: 1024,
            n_log: 8,
            cold_capacity: None,
        };
        let mut table = SegmentTable::fresh(&geometry);
        for (i, &w) in writes.iter().enumerate() {
            table.groups[i].write_bytes = w;
            table.groups[i].end.offset = w.min(4096);
        }
        (table, geometry)
    }

    #[test]
    fn greedy_picks_largest_write_counter() {
        let (table, geometry) = table_with_writes(&[10, 50, 20]);
        let mut heap = GreedyHeap::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = GcPolicy { kind: PolicyKind::Greedy, gra_d: 5 };
        let got =
            select_group(&policy, &table, &geometry, 0, &mut heap, &mut rng).unwrap();
        assert_eq!(got, GroupId(1));
    }

    #[test]
    fn greedy_breaks_ties_to_lowest_group() {
        let (table, geometry) = table_with_writes(&[30, 50, 50]);
        let mut heap = GreedyHeap::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = GcPolicy { kind: PolicyKind::Greedy, gra_d: 5 };
        let got =
            select_group(&policy, &table, &geometry, 0, &mut heap, &mut rng).unwrap();
        assert_eq!(got, GroupId(1));
    }

    #[test]
    fn cba_prefers_low_valid_fraction() {
        // Score (1-u)*age/(1+u): u=0.9, age=10 -> 0.526; u=0.2, age=10 -> 6.667.
        let (mut table, geometry) = table_with_writes(&[100, 100]);
        table.groups[0].end = EndPosition { slot: 0, offset: 1000 };
        table.groups[0].live_estimate = Some(900);
        table.groups[1].end = EndPosition { slot: 0, offset: 1000 };
        table.groups[1].live_estimate = Some(200);
        let s0 = cba_score(&table, &geometry, 0, 10);
        let s1 = cba_score(&table, &geometry, 1, 10);
        assert!((s0 - 0.5263).abs() < 1e-3, "s0 = {s0}");
        assert!((s1 - 6.6667).abs() < 1e-3, "s1 = {s1}");
        let mut heap = GreedyHeap::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = GcPolicy { kind: PolicyKind::Cba, gra_d: 5 };
        let got = select_group(&policy, &table, &geometry, 10, &mut heap, &mut rng).unwrap();
        assert_eq!(got, GroupId(1));
    }

    #[test]
    fn gra_top_d_membership() {
        let (table, geometry) = table_with_writes(&[10, 50, 20]);
        let mut heap = GreedyHeap::default();
        let policy = GcPolicy { kind: PolicyKind::Gra, gra_d: 2 };
        let mut seen = std::collections::HashSet::new();
        for seed in 0..64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let got =
                select_group(&policy, &table, &geometry, 0, &mut heap, &mut rng).unwrap();
            assert!(got == GroupId(1) || got == GroupId(2), "picked {got:?}");
            seen.insert(got);
        }
        assert_eq!(seen.len(), 2, "both top-2 candidates should appear");
    }

    #[test]
    fn gra_d1_is_greedy_and_large_d_is_random() {
        let (table, geometry) = table_with_writes(&[10, 50, 20]);
        let mut heap = GreedyHeap::default();
        let policy = GcPolicy { kind: PolicyKind::Gra, gra_d: 1 };
        for seed in 0..16 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(
                select_group(&policy, &table, &geometry, 0, &mut heap, &mut rng).unwrap(),
                GroupId(1)
            );
        }
        let policy = GcPolicy { kind: PolicyKind::Gra, gra_d: 100 };
        let mut seen = std::collections::HashSet::new();
        for seed in 0..128 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            seen.insert(select_group(&policy, &table, &geometry, 0, &mut heap, &mut rng).unwrap());
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn empty_table_has_nothing_to_collect() {
        let (table, geometry) = table_with_writes(&[0, 0]);
        let mut heap = GreedyHeap::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = GcPolicy::default();
        assert!(matches!(
            select_group(&policy, &table, &geometry, 0, &mut heap, &mut rng),
            Err(Error::NothingToCollect)
        ));
    }

    #[test]
    fn circular_overlap_detects_wrap() {
        // Capacity 100: [90, 110) wraps to [90,100)+[0,10).
        assert!(circular_ranges_overlap(Some(100), (90, 110), (105, 115)));
        assert!(circular_ranges_overlap(Some(100), (90, 110), (0, 5)));
        assert!(!circular_ranges_overlap(Some(100), (90, 110), (20, 80)));
        assert!(!circular_ranges_overlap(None, (0, 10), (10, 20)));
        assert!(circular_ranges_overlap(None, (0, 11), (10, 20)));
    }

    fn scan_fixture(
        dir: &std::path::Path,
        records: &[(u8, &[u8], Vec<u8>)],
    ) -> (SegmentStore, Vec<u8>, Vec<ExtentPart>) {
        let geometry = SegmentGeometry {
            n_main: 1,
            main_size: 64 << 10,
            log_size: 4 << 10,
            n_log: 16,
            cold_capacity: None,
        };
        let mut seg = SegmentStore::open(dir, geometry, IoCounters::new(), None).unwrap();
        let encoded: Vec<Vec<u8>> = records
            .iter()
            .map(|(flags, key, value)| record::encode_record(*flags, key, value).unwrap())
            .collect();
        seg.append_group(GroupId(0), &encoded).unwrap();
        let (buf, parts) = seg.read_group_extent(GroupId(0)).unwrap();
        (seg, buf, parts)
    }

    #[test]
    fn scan_finds_newest_version_nearest_end() {
        let dir = tempfile::tempdir().unwrap();
        let (_seg, buf, parts) = scan_fixture(
            dir.path(),
            &[(0, b"k", vec![1u8; 100]), (0, b"other", vec![9u8; 10]), (0, b"k", vec![2u8; 100])],
        );
        let cache = WriteCache::new(1 << 20);
        let scan = scan_group(&buf, &parts, &cache).unwrap();
        assert_eq!(scan.versions_of(b"k"), 2);
        let newest = scan.newest_offset_of(b"k").unwrap();
        assert_eq!(newest, 109 + 23); // after the first k record and the other record
        assert!(scan.is_live(b"k"));
    }

    #[test]
    fn cache_shadowed_key_contributes_no_live_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (_seg, buf, parts) = scan_fixture(dir.path(), &[(0, b"k", vec![1u8; 100])]);
        let mut cache = WriteCache::new(1 << 20);
        cache.put(b"k", crate::cache::CacheValue::Value(vec![3u8; 10])).unwrap();
        let scan = scan_group(&buf, &parts, &cache).unwrap();
        assert_eq!(scan.live_bytes, 0);
        assert_eq!(scan.shadowed_keys, 1);
        assert!(!scan.is_live(b"k"));
    }

    #[test]
    fn tombstone_newest_is_dead() {
        let dir = tempfile::tempdir().unwrap();
        let (_seg, buf, parts) =
            scan_fixture(dir.path(), &[(FLAG_TOMBSTONE, b"k", vec![])]);
        let cache = WriteCache::new(1 << 20);
        let scan = scan_group(&buf, &parts, &cache).unwrap();
        assert_eq!(scan.live_bytes, 0);
        assert!(!scan.is_live(b"k"));
    }

    #[test]
    fn plan_rewrites_valid_records_hotness_off() {
        // Group: k1 twice (1 KiB each), k2 once. Rewrite keeps k1's newest
        // and k2: 2 KiB live from 3 KiB scanned.
        let dir = tempfile::tempdir().unwrap();
        let v = vec![7u8; 1024 - HEADER_LEN - 2];
        let (seg, _buf, _parts) = scan_fixture(
            dir.path(),
            &[(0, b"k1", v.clone()), (0, b"k2", v.clone()), (0, b"k1", v.clone())],
        );
        let cache = WriteCache::new(1 << 20);
        let mut skipped = 0;
        let (plan, live) =
            build_group_plan(&seg, &cache, GroupId(0), 1, false, 0, &mut skipped).unwrap();
        assert_eq!(plan.stats.bytes_scanned, 3072);
        assert_eq!(plan.stats.bytes_rewritten, 2048);
        assert_eq!(live, 2048);
        assert_eq!(plan.stats.lsm_lookups, 0);
        assert_eq!(plan.index_updates.len(), 2);
        // Rewrite order follows scan order of newest records: k2 then k1.
        assert_eq!(plan.writes.len(), 2);
        assert!(plan.writes[0].dst < plan.writes[1].dst);
    }

    #[test]
    fn plan_moves_cold_values_hotness_on() {
        let dir = tempfile::tempdir().unwrap();
        let v = vec![7u8; 1024 - HEADER_LEN - 2];
        let (seg, _buf, _parts) = scan_fixture(
            dir.path(),
            &[(0, b"k1", v.clone()), (0, b"k2", v.clone()), (0, b"k1", v.clone())],
        );
        let cache = WriteCache::new(1 << 20);
        let mut skipped = 0;
        let (plan, _) =
            build_group_plan(&seg, &cache, GroupId(0), 1, true, u64::MAX, &mut skipped).unwrap();
        // k1 is hot (2 versions): rewritten in full. k2 is cold: value to the
        // cold log, 10-byte tag (8 + 2-byte key) in the group.
        assert_eq!(plan.stats.bytes_rewritten, 1024 + 10);
        assert_eq!(plan.stats.cold_bytes_moved, 1024);
        assert_eq!(plan.cold_writes.len(), 1);
        assert_eq!(plan.cold_head_after, 1024);
        assert_eq!(skipped, 0);
        let cold_update = plan
            .index_updates
            .iter()
            .find(|(k, _)| k == b"k2")
            .map(|(_, e)| e.clone())
            .unwrap();
        assert_eq!(
            cold_update,
            LiteEntry::Loc(ValueLocation::new(Area::ColdLog, 0, 1024))
        );
    }

    #[test]
    fn cold_budget_exhaustion_falls_back_to_rewrite() {
        let dir = tempfile::tempdir().unwrap();
        let v = vec![7u8; 1024 - HEADER_LEN - 2];
        let (seg, _buf, _parts) =
            scan_fixture(dir.path(), &[(0, b"k1", v.clone()), (0, b"k2", v.clone())]);
        let cache = WriteCache::new(1 << 20);
        let mut skipped = 0;
        let (plan, _) =
            build_group_plan(&seg, &cache, GroupId(0), 1, true, 1024, &mut skipped).unwrap();
        // Budget covers one migration; the second cold key is kept in place.
        assert_eq!(plan.stats.cold_bytes_moved, 1024);
        assert_eq!(skipped, 1);
        assert_eq!(plan.stats.bytes_rewritten, 1024 + 10);
    }

    #[test]
    fn tagged_then_updated_key_is_hot() {
        let dir = tempfile::tempdir().unwrap();
        let v = vec![7u8; 200];
        let tag_then_update: Vec<(u8, &[u8], Vec<u8>)> =
            vec![(FLAG_COLD_TAG, b"k", vec![]), (0, b"k", v.clone())];
        let (seg, _buf, _parts) = scan_fixture(dir.path(), &tag_then_update);
        let cache = WriteCache::new(1 << 20);
        let mut skipped = 0;
        let (plan, _) =
            build_group_plan(&seg, &cache, GroupId(0), 1, true, u64::MAX, &mut skipped).unwrap();
        // Two versions (tag + value): hot. Rewritten in the group, no cold move.
        assert_eq!(plan.stats.cold_bytes_moved, 0);
        assert_eq!(plan.writes.len(), 1);
        assert_eq!(plan.writes[0].bytes.len(), 209);
        assert_eq!(plan.index_updates.len(), 1);
    }

    #[test]
    fn gc_apply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = vec![7u8; 1024 - HEADER_LEN - 2];
        let (mut seg, _buf, _parts) = scan_fixture(
            dir.path(),
            &[(0, b"k1", v.clone()), (0, b"k2", v.clone()), (0, b"k1", v.clone())],
        );
        let cache = WriteCache::new(1 << 20);
        let mut skipped = 0;
        let (plan, _) =
            build_group_plan(&seg, &cache, GroupId(0), 1, false, 0, &mut skipped).unwrap();
        apply_group_plan(&mut seg, &plan).unwrap();
        assert_eq!(seg.table.groups[0].write_bytes, 0);
        assert_eq!(seg.table.extent_consumed(&seg.geometry, GroupId(0)), 2048);
        // Both keys readable at their new locations.
        for (key, entry) in &plan.index_updates {
            let LiteEntry::Loc(loc) = entry else { panic!("expected location") };
            let rec = seg.read_value(*loc).unwrap();
            assert_eq!(&rec.key, key);
        }
        // Scanning again shows exactly the two live records.
        let (buf, parts) = seg.read_group_extent(GroupId(0)).unwrap();
        let scan = scan_group(&buf, &parts, &cache).unwrap();
        assert_eq!(scan.scanned_bytes, 2048);
        assert_eq!(scan.versions_of(b"k1"), 1);
        assert_eq!(scan.versions_of(b"k2"), 1);
    }
}
