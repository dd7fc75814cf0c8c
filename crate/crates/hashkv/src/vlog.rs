//! Circular-log value store in the WiscKey style: the comparison baseline.
//!
//! New records always append at the head; GC reads a chunk from the tail,
//! asks the index which records are still current, re-appends the valid ones
//! at the head, and advances the tail. Unlike the hash-grouped store, every
//! validity check is an index lookup.

use std::path::Path;
use std::sync::Arc;

use crate::circ::CircularSpan;
use crate::error::{Error, Result};
use crate::io::{Component, FaultPlan, IoCounters, TrackedFile};
use crate::record::{self, Area, KVRecord, ValueLocation, HEADER_LEN};

pub struct VLog {
    file: TrackedFile,
    span: CircularSpan,
    pub capacity: u64,
    pub chunk_bytes: u64,
    /// Logical append offset; physical position is `head % capacity`.
    pub head: u64,
    /// Logical reclaim offset; live data occupies `[tail, head)`.
    pub tail: u64,
    /// Highest journal op id whose effects the last checkpoint includes.
    pub last_op_id: u64,
    counters: Arc<IoCounters>,
    fault: Option<Arc<FaultPlan>>,
    ckpt_path: std::path::PathBuf,
    ckpt_tmp: std::path::PathBuf,
}

const CKPT_MAGIC: u32 = 0x434c_4b48; // "HKLC"
const CKPT_VERSION: u32 = 1;

impl VLog {
    pub fn open(
        dir: &Path,
        capacity: u64,
        chunk_bytes: u64,
        counters: Arc<IoCounters>,
        fault: Option<Arc<FaultPlan>>,
    ) -> Result<VLog> {
        let file = TrackedFile::open(
            &dir.join("vlog.dat"),
            Component::ValueStore,
            counters.clone(),
            fault.clone(),
        )?;
        if file.len() < capacity {
            file.set_len(capacity)?;
        }
        let mut vlog = VLog {
            file,
            span: CircularSpan::new(0, Some(capacity)),
            capacity,
            chunk_bytes,
            head: 0,
            tail: 0,
            last_op_id: 0,
            counters,
            fault,
            ckpt_path: dir.join("vlog.ckpt"),
            ckpt_tmp: dir.join("vlog.ckpt.tmp"),
        };
        vlog.load_checkpoint()?;
        Ok(vlog)
    }

    pub fn file(&self) -> &TrackedFile {
        &self.file
    }

    pub fn free_bytes(&self) -> u64 {
        self.capacity - (self.head - self.tail)
    }

    pub fn live_bytes(&self) -> u64 {
        self.head - self.tail
    }

    pub fn max_record_bytes(&self) -> u64 {
        self.chunk_bytes
    }

    /// Appends encoded records contiguously at the head. Fails with
    /// `NeedsGc` when the free space cannot take them all.
    pub fn append(&mut self, records: &[Vec<u8>]) -> Result<Vec<ValueLocation>> {
        let total: u64 = records.iter().map(|r| r.len() as u64).sum();
        for r in records {
            if r.len() as u64 > self.max_record_bytes() {
                return Err(Error::InvalidArgument(format!(
                    "record of {} bytes exceeds vlog limit {}",
                    r.len(),
                    self.max_record_bytes()
                )));
            }
        }
        if total > self.free_bytes() {
            return Err(Error::NeedsGc);
        }
        let mut locations = Vec::with_capacity(records.len());
        for rec in records {
            self.span.write(&self.file, self.head, rec)?;
            locations.push(ValueLocation::new(Area::Vlog, self.head, rec.len() as u32));
            self.head += rec.len() as u64;
        }
        Ok(locations)
    }

    /// Raw write at a planned logical offset; used by GC redo.
    pub fn write_logical(&self, logical: u64, bytes: &[u8]) -> Result<()> {
        self.span.write(&self.file, logical, bytes)
    }

    pub fn read(&self, loc: ValueLocation) -> Result<KVRecord> {
        if loc.area != Area::Vlog {
            return Err(Error::InvalidLocation(format!("expected vlog, got {:?}", loc.area)));
        }
        if loc.offset < self.tail || loc.end() > self.head {
            return Err(Error::InvalidLocation(format!(
                "offset {} outside live range [{}, {})",
                loc.offset, self.tail, self.head
            )));
        }
        let buf = self.span.read(&self.file, loc.offset, loc.length as usize)?;
        let (rec, consumed) = record::decode_record(&buf, 0)?;
        if consumed != buf.len() {
            return Err(Error::CorruptRecord(format!("vlog record at {}", loc.offset)));
        }
        Ok(rec.to_owned())
    }

    pub fn read_logical(&self, logical: u64, len: usize) -> Result<Vec<u8>> {
        self.span.read(&self.file, logical, len)
    }

    /// Decodes the chunk of complete records at the tail. Returns the records
    /// with their logical offsets and the total bytes consumed (which the
    /// caller uses to advance the tail). Reads at least one record even if it
    /// exceeds the configured chunk size.
    pub fn read_tail_chunk(&self) -> Result<(Vec<(u64, KVRecord)>, u64)> {
        let live = self.live_bytes();
        if live == 0 {
            return Ok((Vec::new(), 0));
        }
        let mut want = self.chunk_bytes.min(live);
        // Make sure the first record fits in the window.
        let header = self.span.read(&self.file, self.tail, HEADER_LEN.min(live as usize))?;
        if header.len() == HEADER_LEN {
            let ksz = header[1] as u64;
            let vsz = u32::from_le_bytes([header[4], header[5], header[6], header[7]]) as u64;
            want = want.max(HEADER_LEN as u64 + ksz + vsz).min(live);
        }
        let buf = self.span.read(&self.file, self.tail, want as usize)?;
        let mut out = Vec::new();
        let mut at = 0usize;
        while at + HEADER_LEN <= buf.len() {
            match record::decode_record(&buf, at) {
                Ok((rec, consumed)) => {
                    out.push((self.tail + at as u64, rec.to_owned()));
                    at += consumed;
                }
                Err(_) if at > 0 => break, // partial record at window end
                Err(e) => return Err(e),
            }
        }
        Ok((out, at as u64))
    }

    pub fn advance_tail(&mut self, consumed: u64) {
        debug_assert!(self.tail + consumed <= self.head);
        self.tail += consumed;
    }

    pub fn set_state(&mut self, head: u64, tail: u64) {
        self.head = head;
        self.tail = tail;
    }

    pub fn checkpoint(&self) -> Result<()> {
        let mut payload = Vec::new();
        payload.extend_from_slice(&CKPT_MAGIC.to_le_bytes());
        payload.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        payload.extend_from_slice(&self.capacity.to_le_bytes());
        payload.extend_from_slice(&self.head.to_le_bytes());
        payload.extend_from_slice(&self.tail.to_le_bytes());
        payload.extend_from_slice(&self.last_op_id.to_le_bytes());
        let crc = crc32fast::hash(&payload);
        payload.extend_from_slice(&crc.to_le_bytes());
        let tmp = TrackedFile::open(
            &self.ckpt_tmp,
            Component::Checkpoint,
            self.counters.clone(),
            self.fault.clone(),
        )?;
        tmp.set_len(0)?;
        tmp.write_at(0, &payload)?;
        tmp.sync()?;
        std::fs::rename(&self.ckpt_tmp, &self.ckpt_path)?;
        Ok(())
    }

    fn load_checkpoint(&mut self) -> Result<()> {
        if !self.ckpt_path.exists() {
            return Ok(());
        }
        let data = std::fs::read(&self.ckpt_path)?;
        if data.len() != 4 + 4 + 8 * 4 + 4 {
            return Err(Error::CorruptRecord("vlog checkpoint length".into()));
        }
        let (payload, crc_bytes) = data.split_at(data.len() - 4);
        if crc32fast::hash(payload) != u32::from_le_bytes(crc_bytes.try_into().unwrap()) {
            return Err(Error::CorruptRecord("vlog checkpoint crc".into()));
        }
        let magic = u32::from_le_bytes(payload[0..4].try_into().unwrap());
        if magic != CKPT_MAGIC {
            return Err(Error::IncompatibleStore("vlog checkpoint magic".into()));
        }
        let capacity = u64::from_le_bytes(payload[8..16].try_into().unwrap());
        if capacity != self.capacity {
            return Err(Error::IncompatibleStore(format!(
                "vlog capacity {capacity} differs from configured {}",
                self.capacity
            )));
        }
        self.head = u64::from_le_bytes(payload[16..24].try_into().unwrap());
        self.tail = u64::from_le_bytes(payload[24..32].try_into().unwrap());
        self.last_op_id = u64::from_le_bytes(payload[32..40].try_into().unwrap());
        Ok(())
    }
}
