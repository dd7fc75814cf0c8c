//! Write journal and GC journal.
//!
//! Both journals are append-only files of CRC-framed records. A flush is
//! journaled after its value-store writes are synced: the record carries the
//! index updates (inline values included, since the LSM has no log of its
//! own) and the per-group placement summary, then a synced commit record
//! makes it durable. A GC is journaled before the group is overwritten: the
//! record carries the full rewrite plan, with inline copies of exactly those
//! source records the rewrite will clobber and offset references for the
//! rest.
//!
//! Records are freed once the index entries they produced are durable in an
//! SSTable; a journal file is recycled (truncated) when everything in it is
//! free. Recovery replays committed records newer than the segment-table
//! checkpoint watermark, in op order across both files.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gc::{CircularGcPlan, GcPlan, LiteEntry, PlannedWrite, WriteSrc};
use crate::io::{Component, FaultPlan, IoCounters, TrackedFile};
use crate::metrics::GcStats;
use crate::record::{Area, ValueLocation};
use crate::segment::EndPosition;

const KIND_FLUSH: u8 = 1;
const KIND_GC_GROUP: u8 = 2;
const KIND_GC_CIRC: u8 = 3;
const KIND_COMMIT: u8 = 8;
const KIND_FREE: u8 = 9;

const MAX_RECORD: u32 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UpdateEntry {
    Inline(Vec<u8>),
    Loc(ValueLocation),
    Tombstone,
}

#[derive(Debug, Clone, Default)]
pub struct FlushGroupDelta {
    pub group: u32,
    pub end_after: EndPosition,
    pub allocated: Vec<u32>,
    pub bytes: u64,
    pub gaps: u64,
    pub records: u64,
}

#[derive(Debug, Clone, Default)]
pub struct FlushRecord {
    pub op_id: u64,
    pub updates: Vec<(Vec<u8>, UpdateEntry)>,
    pub groups: Vec<FlushGroupDelta>,
    pub vlog_head_after: u64,
}

/// A write whose bytes either travelled with the journal or can be re-read
/// during redo: from the source offset if the rewrite never reached it, or
/// from the destination if it did. The checksum decides which copy is good.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriteRef {
    Copy(Vec<u8>),
    GroupAt { offset: u64, len: u32, crc: u32 },
    CircAt { offset: u64, len: u32, crc: u32 },
}

#[derive(Debug, Clone)]
pub struct GcGroupRecord {
    pub op_id: u64,
    pub group: u32,
    pub keep_count: u32,
    pub freed: Vec<u32>,
    pub end_after: EndPosition,
    pub gap_bytes_after: u64,
    pub write_bytes_after: u64,
    pub gap_stamps: Vec<u64>,
    pub sentinel: Option<u64>,
    pub writes: Vec<(u64, WriteRef)>,
    pub cold_writes: Vec<(u64, WriteRef)>,
    pub cold_head_before: u64,
    pub cold_head_after: u64,
    pub index_updates: Vec<(Vec<u8>, LiteEntry)>,
    pub stats: GcStats,
}

#[derive(Debug, Clone)]
pub struct GcCircRecord {
    pub op_id: u64,
    pub area: Area,
    pub tail_before: u64,
    pub tail_after: u64,
    pub head_before: u64,
    pub head_after: u64,
    pub appends: Vec<(u64, WriteRef)>,
    pub index_updates: Vec<(Vec<u8>, LiteEntry)>,
    pub stats: GcStats,
}

#[derive(Debug, Clone)]
pub enum ReplayBody {
    Flush(FlushRecord),
    GcGroup(GcGroupRecord),
    GcCirc(GcCircRecord),
}

#[derive(Debug)]
pub struct ReplayOp {
    pub op_id: u64,
    pub body: ReplayBody,
    pub committed: bool,
    pub freed: bool,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(op_id: u64, kind: u8) -> Writer {
        let mut w = Writer { buf: Vec::new() };
        w.u64(op_id);
        w.u8(kind);
        w
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }
    fn key(&mut self, k: &[u8]) {
        self.buf.extend_from_slice(&(k.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(k);
    }
    fn end_position(&mut self, e: EndPosition) {
        self.u32(e.slot);
        self.u64(e.offset);
    }
    fn lite_entry(&mut self, e: &LiteEntry) {
        match e {
            LiteEntry::Loc(loc) => {
                self.u8(1);
                self.u8(loc.area.as_u8());
                self.u64(loc.offset);
                self.u32(loc.length);
            }
            LiteEntry::Tombstone => self.u8(2),
        }
    }
    fn write_ref(&mut self, dst: u64, w: &PlannedWrite, copy: bool) {
        self.u64(dst);
        if copy || w.src == WriteSrc::Inline {
            self.u8(0);
            self.bytes(&w.bytes);
        } else {
            match w.src {
                WriteSrc::GroupAt(off) => {
                    self.u8(1);
                    self.u64(off);
                    self.u32(w.bytes.len() as u32);
                    self.u32(crc32fast::hash(&w.bytes));
                }
                WriteSrc::CircAt(off) => {
                    self.u8(2);
                    self.u64(off);
                    self.u32(w.bytes.len() as u32);
                    self.u32(crc32fast::hash(&w.bytes));
                }
                WriteSrc::Inline => unreachable!(),
            }
        }
    }
    fn stats(&mut self, s: &GcStats) {
        self.u64(s.bytes_scanned);
        self.u64(s.bytes_rewritten);
        self.u64(s.log_segments_freed);
        self.u64(s.lsm_lookups);
        self.u64(s.index_updates);
        self.u64(s.cold_bytes_moved);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8> {
        let v = *self
            .buf
            .get(self.at)
            .ok_or_else(|| Error::RecoveryFailed("journal record truncated".into()))?;
        self.at += 1;
        Ok(v)
    }
    fn u16(&mut self) -> Result<u16> {
        let b = self
            .buf
            .get(self.at..self.at + 2)
            .ok_or_else(|| Error::RecoveryFailed("journal record truncated".into()))?;
        self.at += 2;
        Ok(u16::from_le_bytes(b.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        let b = self
            .buf
            .get(self.at..self.at + 4)
            .ok_or_else(|| Error::RecoveryFailed("journal record truncated".into()))?;
        self.at += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        let b = self
            .buf
            .get(self.at..self.at + 8)
            .ok_or_else(|| Error::RecoveryFailed("journal record truncated".into()))?;
        self.at += 8;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let b = self
            .buf
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::RecoveryFailed("journal record truncated".into()))?;
        self.at += n;
        Ok(b)
    }
    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn key(&mut self) -> Result<Vec<u8>> {
        let n = self.u16()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn end_position(&mut self) -> Result<EndPosition> {
        Ok(EndPosition { slot: self.u32()?, offset: self.u64()? })
    }
    fn lite_entry(&mut self) -> Result<LiteEntry> {
        match self.u8()? {
            1 => {
                let area = Area::from_u8(self.u8()?)
                    .map_err(|e| Error::RecoveryFailed(e.to_string()))?;
                let offset = self.u64()?;
                let length = self.u32()?;
                Ok(LiteEntry::Loc(ValueLocation { area, offset, length }))
            }
            2 => Ok(LiteEntry::Tombstone),
            t => Err(Error::RecoveryFailed(format!("bad index entry tag {t}"))),
        }
    }
    fn write_ref(&mut self) -> Result<(u64, WriteRef)> {
        let dst = self.u64()?;
        let r = match self.u8()? {
            0 => WriteRef::Copy(self.bytes()?),
            1 => WriteRef::GroupAt { offset: self.u64()?, len: self.u32()?, crc: self.u32()? },
            2 => WriteRef::CircAt { offset: self.u64()?, len: self.u32()?, crc: self.u32()? },
            t => return Err(Error::RecoveryFailed(format!("bad write source tag {t}"))),
        };
        Ok((dst, r))
    }
    fn stats(&mut self) -> Result<GcStats> {
        Ok(GcStats {
            bytes_scanned: self.u64()?,
            bytes_rewritten: self.u64()?,
            log_segments_freed: self.u64()?,
            lsm_lookups: self.u64()?,
            index_updates: self.u64()?,
            cold_bytes_moved: self.u64()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Write,
    Gc,
}

#[derive(Debug)]
pub struct Journal {
    write_file: TrackedFile,
    write_pos: u64,
    gc_file: TrackedFile,
    gc_pos: u64,
    next_op: u64,
    /// Ops appended to a file and not yet marked free, by target file.
    outstanding: HashMap<u64, Target>,
}

impl Journal {
    /// Opens (or creates) both journal files and parses whatever they hold.
    pub fn open(
        dir: &Path,
        counters: Arc<IoCounters>,
        fault: Option<Arc<FaultPlan>>,
    ) -> Result<(Journal, Vec<ReplayOp>)> {
        let write_file = TrackedFile::open(
            &dir.join("write_journal.dat"),
            Component::Journal,
            counters.clone(),
            fault.clone(),
        )?;
        let gc_file =
            TrackedFile::open(&dir.join("gc_journal.dat"), Component::Journal, counters, fault)?;
        let mut ops: HashMap<u64, ReplayOp> = HashMap::new();
        let mut outstanding = HashMap::new();
        let mut next_op = 1u64;
        let write_pos = parse_file(&write_file, Target::Write, &mut ops, &mut outstanding, &mut next_op)?;
        let gc_pos = parse_file(&gc_file, Target::Gc, &mut ops, &mut outstanding, &mut next_op)?;
        let mut replay: Vec<ReplayOp> = ops.into_values().collect();
        replay.sort_by_key(|op| op.op_id);
        Ok((
            Journal { write_file, write_pos, gc_file, gc_pos, next_op, outstanding },
            replay,
        ))
    }

    pub fn begin_op(&mut self) -> u64 {
        let id = self.next_op;
        self.next_op += 1;
        id
    }

    pub fn last_issued_op(&self) -> u64 {
        self.next_op - 1
    }

    pub fn total_bytes(&self) -> u64 {
        self.write_pos + self.gc_pos
    }

    fn append(&mut self, target: Target, payload: &[u8]) -> Result<()> {
        let mut frame = Vec::with_capacity(payload.len() + 8);
        frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        frame.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
        frame.extend_from_slice(payload);
        match target {
            Target::Write => {
                self.write_file.write_at(self.write_pos, &frame)?;
                self.write_pos += frame.len() as u64;
            }
            Target::Gc => {
                self.gc_file.write_at(self.gc_pos, &frame)?;
                self.gc_pos += frame.len() as u64;
            }
        }
        Ok(())
    }

    pub fn append_flush(&mut self, rec: &FlushRecord) -> Result<()> {
        let mut w = Writer::new(rec.op_id, KIND_FLUSH);
        w.u32(rec.updates.len() as u32);
        for (key, entry) in &rec.updates {
            w.key(key);
            match entry {
                UpdateEntry::Inline(v) => {
                    w.u8(0);
                    w.bytes(v);
                }
                UpdateEntry::Loc(loc) => {
                    w.u8(1);
                    w.u8(loc.area.as_u8());
                    w.u64(loc.offset);
                    w.u32(loc.length);
                }
                UpdateEntry::Tombstone => w.u8(2),
            }
        }
        w.u32(rec.groups.len() as u32);
        for g in &rec.groups {
            w.u32(g.group);
            w.end_position(g.end_after);
            w.u32(g.allocated.len() as u32);
            for &id in &g.allocated {
                w.u32(id);
            }
            w.u64(g.bytes);
            w.u64(g.gaps);
            w.u64(g.records);
        }
        w.u64(rec.vlog_head_after);
        self.outstanding.insert(rec.op_id, Target::Write);
        self.append(Target::Write, &w.buf)
    }

    /// Serializes a group GC plan. `copy[i]` / `cold_copy[i]` force an inline
    /// copy of the i-th write's bytes (the rewrite would clobber its source).
    pub fn append_gc_group(
        &mut self,
        plan: &GcPlan,
        copy: &[bool],
        cold_copy: &[bool],
    ) -> Result<()> {
        let mut w = Writer::new(plan.op_id, KIND_GC_GROUP);
        w.u32(plan.group.0);
        w.u32(plan.keep_count);
        w.u32(plan.freed.len() as u32);
        for &id in &plan.freed {
            w.u32(id);
        }
        w.end_position(plan.end_after);
        w.u64(plan.gap_bytes_after);
        w.u64(plan.write_bytes_after);
        w.u32(plan.gap_stamps.len() as u32);
        for &g in &plan.gap_stamps {
            w.u64(g);
        }
        match plan.sentinel {
            Some(s) => {
                w.u8(1);
                w.u64(s);
            }
            None => w.u8(0),
        }
        w.u64(plan.cold_head_before);
        w.u64(plan.cold_head_after);
        w.u32(plan.writes.len() as u32);
        for (i, pw) in plan.writes.iter().enumerate() {
            w.write_ref(pw.dst, pw, copy.get(i).copied().unwrap_or(true));
        }
        w.u32(plan.cold_writes.len() as u32);
        for (i, pw) in plan.cold_writes.iter().enumerate() {
            w.write_ref(pw.dst, pw, cold_copy.get(i).copied().unwrap_or(true));
        }
        w.u32(plan.index_updates.len() as u32);
        for (key, e) in &plan.index_updates {
            w.key(key);
            w.lite_entry(e);
        }
        w.stats(&plan.stats);
        self.outstanding.insert(plan.op_id, Target::Gc);
        self.append(Target::Gc, &w.buf)
    }

    pub fn append_gc_circ(&mut self, plan: &CircularGcPlan, copy: &[bool]) -> Result<()> {
        let mut w = Writer::new(plan.op_id, KIND_GC_CIRC);
        w.u8(plan.area.as_u8());
        w.u64(plan.tail_before);
        w.u64(plan.tail_after);
        w.u64(plan.head_before);
        w.u64(plan.head_after);
        w.u32(plan.appends.len() as u32);
        for (i, pw) in plan.appends.iter().enumerate() {
            w.write_ref(pw.dst, pw, copy.get(i).copied().unwrap_or(true));
        }
        w.u32(plan.index_updates.len() as u32);
        for (key, e) in &plan.index_updates {
            w.key(key);
            w.lite_entry(e);
        }
        w.stats(&plan.stats);
        self.outstanding.insert(plan.op_id, Target::Gc);
        self.append(Target::Gc, &w.buf)
    }

    /// Appends the commit record and syncs the journal file. After this
    /// returns, the op is durable.
    pub fn commit(&mut self, op_id: u64) -> Result<()> {
        let target = *self
            .outstanding
            .get(&op_id)
            .ok_or_else(|| Error::InvalidArgument(format!("commit of unknown op {op_id}")))?;
        let w = Writer::new(op_id, KIND_COMMIT);
        self.append(target, &w.buf)?;
        match target {
            Target::Write => self.write_file.sync(),
            Target::Gc => self.gc_file.sync(),
        }
    }

    /// Marks the op free: its index entries are durable in the LSM, so the
    /// record is only kept until the next recycle.
    pub fn mark_free(&mut self, op_id: u64) -> Result<()> {
        if let Some(target) = self.outstanding.remove(&op_id) {
            let w = Writer::new(op_id, KIND_FREE);
            self.append(target, &w.buf)?;
        }
        Ok(())
    }

    pub fn has_outstanding(&self) -> bool {
        !self.outstanding.is_empty()
    }

    /// Discards both journal files after recovery has applied or rejected
    /// everything in them. Op ids keep counting from where they were.
    pub fn reset_after_recovery(&mut self) -> Result<()> {
        self.outstanding.clear();
        self.write_file.set_len(0)?;
        self.write_pos = 0;
        self.gc_file.set_len(0)?;
        self.gc_pos = 0;
        Ok(())
    }

    /// Recycles any journal file whose records are all free.
    pub fn truncate_free(&mut self) -> Result<()> {
        let write_busy = self.outstanding.values().any(|t| *t == Target::Write);
        let gc_busy = self.outstanding.values().any(|t| *t == Target::Gc);
        if !write_busy && self.write_pos > 0 {
            self.write_file.set_len(0)?;
            self.write_pos = 0;
        }
        if !gc_busy && self.gc_pos > 0 {
            self.gc_file.set_len(0)?;
            self.gc_pos = 0;
        }
        Ok(())
    }
}

fn parse_payload(payload: &[u8]) -> Result<(u64, u8, Reader<'_>)> {
    let mut r = Reader { buf: payload, at: 0 };
    let op_id = r.u64()?;
    let kind = r.u8()?;
    Ok((op_id, kind, r))
}

fn parse_body(kind: u8, op_id: u64, r: &mut Reader<'_>) -> Result<ReplayBody> {
    match kind {
        KIND_FLUSH => {
            let n = r.u32()? as usize;
            let mut updates = Vec::with_capacity(n);
            for _ in 0..n {
                let key = r.key()?;
                let entry = match r.u8()? {
                    0 => UpdateEntry::Inline(r.bytes()?),
                    1 => {
                        let area = Area::from_u8(r.u8()?)
                            .map_err(|e| Error::RecoveryFailed(e.to_string()))?;
                        UpdateEntry::Loc(ValueLocation {
                            area,
                            offset: r.u64()?,
                            length: r.u32()?,
                        })
                    }
                    2 => UpdateEntry::Tombstone,
                    t => return Err(Error::RecoveryFailed(format!("bad update tag {t}"))),
                };
                updates.push((key, entry));
            }
            let ng = r.u32()? as usize;
            let mut groups = Vec::with_capacity(ng);
            for _ in 0..ng {
                let group = r.u32()?;
                let end_after = r.end_position()?;
                let na = r.u32()? as usize;
                let mut allocated = Vec::with_capacity(na);
                for _ in 0..na {
                    allocated.push(r.u32()?);
                }
                let bytes = r.u64()?;
                let gaps = r.u64()?;
                let records = r.u64()?;
                groups.push(FlushGroupDelta { group, end_after, allocated, bytes, gaps, records });
            }
            let vlog_head_after = r.u64()?;
            Ok(ReplayBody::Flush(FlushRecord { op_id, updates, groups, vlog_head_after }))
        }
        KIND_GC_GROUP => {
            let group = r.u32()?;
            let keep_count = r.u32()?;
            let nf = r.u32()? as usize;
            let mut freed = Vec::with_capacity(nf);
            for _ in 0..nf {
                freed.push(r.u32()?);
            }
            let end_after = r.end_position()?;
            let gap_bytes_after = r.u64()?;
            let write_bytes_after = r.u64()?;
            let ns = r.u32()? as usize;
            let mut gap_stamps = Vec::with_capacity(ns);
            for _ in 0..ns {
                gap_stamps.push(r.u64()?);
            }
            let sentinel = if r.u8()? == 1 { Some(r.u64()?) } else { None };
            let cold_head_before = r.u64()?;
            let cold_head_after = r.u64()?;
            let nw = r.u32()? as usize;
            let mut writes = Vec::with_capacity(nw);
            for _ in 0..nw {
                writes.push(r.write_ref()?);
            }
            let nc = r.u32()? as usize;
            let mut cold_writes = Vec::with_capacity(nc);
            for _ in 0..nc {
                cold_writes.push(r.write_ref()?);
            }
            let ni = r.u32()? as usize;
            let mut index_updates = Vec::with_capacity(ni);
            for _ in 0..ni {
                let key = r.key()?;
                let entry = r.lite_entry()?;
                index_updates.push((key, entry));
            }
            let stats = r.stats()?;
            Ok(ReplayBody::GcGroup(GcGroupRecord {
                op_id,
                group,
                keep_count,
                freed,
                end_after,
                gap_bytes_after,
                write_bytes_after,
                gap_stamps,
                sentinel,
                writes,
                cold_writes,
                cold_head_before,
                cold_head_after,
                index_updates,
                stats,
            }))
        }
        KIND_GC_CIRC => {
            let area =
                Area::from_u8(r.u8()?).map_err(|e| Error::RecoveryFailed(e.to_string()))?;
            let tail_before = r.u64()?;
            let tail_after = r.u64()?;
            let head_before = r.u64()?;
            let head_after = r.u64()?;
            let na = r.u32()? as usize;
            let mut appends = Vec::with_capacity(na);
            for _ in 0..na {
                appends.push(r.write_ref()?);
            }
            let ni = r.u32()? as usize;
            let mut index_updates = Vec::with_capacity(ni);
            for _ in 0..ni {
                let key = r.key()?;
                let entry = r.lite_entry()?;
                index_updates.push((key, entry));
            }
            let stats = r.stats()?;
            Ok(ReplayBody::GcCirc(GcCircRecord {
                op_id,
                area,
                tail_before,
                tail_after,
                head_before,
                head_after,
                appends,
                index_updates,
                stats,
            }))
        }
        other => Err(Error::RecoveryFailed(format!("unknown journal record kind {other}"))),
    }
}

/// Parses one journal file. A torn record at the tail followed only by zero
/// bytes is a normal crash artifact and ends the parse; a bad record with
/// real data after it is surfaced as corruption.
fn parse_file(
    file: &TrackedFile,
    _target: Target,
    ops: &mut HashMap<u64, ReplayOp>,
    outstanding: &mut HashMap<u64, Target>,
    next_op: &mut u64,
) -> Result<u64> {
    let len = file.len();
    let mut data = vec![0u8; len as usize];
    if len > 0 {
        file.read_exact_at(0, &mut data)?;
    }
    let mut at = 0usize;
    loop {
        if at + 8 > data.len() {
            check_tail(&data, at)?;
            break;
        }
        let rec_len = u32::from_le_bytes(data[at..at + 4].try_into().unwrap());
        let want_crc = u32::from_le_bytes(data[at + 4..at + 8].try_into().unwrap());
        if rec_len == 0 || rec_len > MAX_RECORD {
            check_tail(&data, at)?;
            break;
        }
        let start = at + 8;
        let end = start + rec_len as usize;
        if end > data.len() {
            check_tail(&data, end.min(data.len()))?;
            break;
        }
        let payload = &data[start..end];
        if crc32fast::hash(payload) != want_crc {
            check_tail(&data, end)?;
            break;
        }
        let (op_id, kind, mut r) = parse_payload(payload)?;
        *next_op = (*next_op).max(op_id + 1);
        match kind {
            KIND_COMMIT => {
                if let Some(op) = ops.get_mut(&op_id) {
                    op.committed = true;
                }
            }
            KIND_FREE => {
                if let Some(op) = ops.get_mut(&op_id) {
                    op.freed = true;
                }
                outstanding.remove(&op_id);
            }
            _ => {
                let body = parse_body(kind, op_id, &mut r)?;
                ops.insert(op_id, ReplayOp { op_id, body, committed: false, freed: false });
                outstanding.insert(op_id, _target);
            }
        }
        at = end;
    }
    Ok(at as u64)
}

/// A parse stopped at `from`: any nonzero byte beyond it means corruption in
/// the middle of the journal rather than a torn tail.
fn check_tail(data: &[u8], from: usize) -> Result<()> {
    // Skip the possibly-torn record bytes themselves; corruption means
    // finding another intact-looking frame beyond the failure point.
    let rest = &data[from.min(data.len())..];
    let mut at = 0usize;
    while at + 8 <= rest.len() {
        let rec_len = u32::from_le_bytes(rest[at..at + 4].try_into().unwrap());
        let want_crc = u32::from_le_bytes(rest[at + 4..at + 8].try_into().unwrap());
        if rec_len > 0 && rec_len <= MAX_RECORD {
            let start = at + 8;
            let end = start + rec_len as usize;
            if end <= rest.len() && crc32fast::hash(&rest[start..end]) == want_crc {
                return Err(Error::RecoveryFailed(
                    "corrupt journal record followed by intact records".into(),
                ));
            }
        }
        at += 1;
    }
    Ok(())
}
