//! File wrapper that counts every device write and supports fault injection.
//!
//! All store files are opened through [`TrackedFile`] so that total device
//! write size, per-component write size, and the append/overwrite split are
//! measured at the write-call layer. Crash tests arm a [`FaultPlan`] to cut
//! the store off after a chosen number of write/sync events.

use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Which store component a file belongs to, for write-size breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    ValueStore,
    Lsm,
    Journal,
    Checkpoint,
}

pub const COMPONENT_COUNT: usize = 4;

impl Component {
    pub fn index(self) -> usize {
        match self {
            Component::ValueStore => 0,
            Component::Lsm => 1,
            Component::Journal => 2,
            Component::Checkpoint => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::ValueStore => "value_store",
            Component::Lsm => "lsm",
            Component::Journal => "journal",
            Component::Checkpoint => "checkpoint",
        }
    }
}

/// Crash fault plan: after `remaining` write/sync events, every further I/O
/// call fails with [`Error::Injected`]. If `torn` is set, the triggering
/// write persists only its first half before failing, modelling a torn write.
#[derive(Debug)]
pub struct FaultPlan {
    remaining: AtomicI64,
    torn: bool,
}

impl FaultPlan {
    pub fn after_events(n: u64, torn: bool) -> Arc<FaultPlan> {
        Arc::new(FaultPlan { remaining: AtomicI64::new(n as i64), torn })
    }

    /// A plan that never fires until [`FaultPlan::arm`] is called.
    pub fn inactive(torn: bool) -> Arc<FaultPlan> {
        Arc::new(FaultPlan { remaining: AtomicI64::new(i64::MAX), torn })
    }

    /// Re-arms the countdown: the next `n` events succeed, then I/O fails.
    pub fn arm(&self, n: u64) {
        self.remaining.store(n as i64, Ordering::SeqCst);
    }

    pub fn disarm(&self) {
        self.remaining.store(i64::MAX, Ordering::SeqCst);
    }

    /// Events admitted since the last arm (saturating once faults fire).
    pub fn events_seen(&self, armed_at: u64) -> u64 {
        let remaining = self.remaining.load(Ordering::SeqCst).max(0) as u64;
        armed_at.saturating_sub(remaining)
    }

    /// Returns what the caller may still do for this event.
    fn admit(&self) -> Admission {
        let prev = self.remaining.fetch_sub(1, Ordering::SeqCst);
        if prev > 0 {
            Admission::Allow
        } else if prev == 0 && self.torn {
            Admission::Torn
        } else {
            Admission::Deny
        }
    }
}

enum Admission {
    Allow,
    Torn,
    Deny,
}

/// Shared write accounting across all files of one store.
#[derive(Debug, Default)]
pub struct IoCounters {
    written: [AtomicU64; COMPONENT_COUNT],
    grown: AtomicU64,
    overwritten: AtomicU64,
    syncs: AtomicU64,
    read_bytes: AtomicU64,
}

impl IoCounters {
    pub fn new() -> Arc<IoCounters> {
        Arc::new(IoCounters::default())
    }

    pub fn written(&self, comp: Component) -> u64 {
        self.written[comp.index()].load(Ordering::Relaxed)
    }

    pub fn total_written(&self) -> u64 {
        self.written.iter().map(|w| w.load(Ordering::Relaxed)).sum()
    }

    pub fn grown(&self) -> u64 {
        self.grown.load(Ordering::Relaxed)
    }

    pub fn overwritten(&self) -> u64 {
        self.overwritten.load(Ordering::Relaxed)
    }

    pub fn syncs(&self) -> u64 {
        self.syncs.load(Ordering::Relaxed)
    }

    pub fn read_bytes(&self) -> u64 {
        self.read_bytes.load(Ordering::Relaxed)
    }
}

/// A store file with write accounting and optional fault injection.
#[derive(Debug)]
pub struct TrackedFile {
    file: File,
    len: AtomicU64,
    comp: Component,
    counters: Arc<IoCounters>,
    fault: Option<Arc<FaultPlan>>,
}

impl TrackedFile {
    pub fn open(
        path: &Path,
        comp: Component,
        counters: Arc<IoCounters>,
        fault: Option<Arc<FaultPlan>>,
    ) -> Result<TrackedFile> {
        let file = OpenOptions::new().read(true).write(true).create(true).open(path)?;
        let len = file.metadata()?.len();
        Ok(TrackedFile { file, len: AtomicU64::new(len), comp, counters, fault })
    }

    pub fn len(&self) -> u64 {
        self.len.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn account_write(&self, offset: u64, len: u64) {
        let end = offset + len;
        let prev = self.len.fetch_max(end, Ordering::AcqRel);
        let overlapped = prev.saturating_sub(offset).min(len);
        self.counters.written[self.comp.index()].fetch_add(len, Ordering::Relaxed);
        self.counters.overwritten.fetch_add(overlapped, Ordering::Relaxed);
        self.counters.grown.fetch_add(len - overlapped, Ordering::Relaxed);
    }

    pub fn write_at(&self, offset: u64, buf: &[u8]) -> Result<()> {
        if let Some(fault) = &self.fault {
            match fault.admit() {
                Admission::Allow => {}
                Admission::Torn => {
                    let half = buf.len() / 2;
                    if half > 0 {
                        self.file.write_all_at(&buf[..half], offset)?;
                        self.account_write(offset, half as u64);
                    }
                    return Err(Error::Injected);
                }
                Admission::Deny => return Err(Error::Injected),
            }
        }
        self.file.write_all_at(buf, offset)?;
        self.account_write(offset, buf.len() as u64);
        Ok(())
    }

    pub fn read_exact_at(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        self.file.read_exact_at(buf, offset)?;
        self.counters.read_bytes.fetch_add(buf.len() as u64, Ordering::Relaxed);
        Ok(())
    }

    pub fn sync(&self) -> Result<()> {
        if let Some(fault) = &self.fault {
            match fault.admit() {
                Admission::Allow => {}
                _ => return Err(Error::Injected),
            }
        }
        self.file.sync_data()?;
        self.counters.syncs.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Durably writes back one byte range. The file must be preallocated
    /// (fixed size), so no metadata needs flushing; used by the flush path
    /// to avoid forcing writeback of unrelated dirty pages.
    pub fn sync_range(&self, offset: u64, len: u64) -> Result<()> {
        if let Some(fault) = &self.fault {
            match fault.admit() {
                Admission::Allow => {}
                _ => return Err(Error::Injected),
            }
        }
        use std::os::unix::io::AsRawFd;
        let flags = libc::SYNC_FILE_RANGE_WAIT_BEFORE
            | libc::SYNC_FILE_RANGE_WRITE
            | libc::SYNC_FILE_RANGE_WAIT_AFTER;
        let rc = unsafe {
            libc::sync_file_range(
                self.file.as_raw_fd(),
                offset as libc::off64_t,
                len as libc::off64_t,
                flags,
            )
        };
        if rc != 0 {
            // Fall back to a full data sync on filesystems without support.
            self.file.sync_data()?;
        }
        self.counters.syncs.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Grows or truncates the file without counting written bytes. Used for
    /// provisioning the value-store regions (sparse) and recycling journals.
    pub fn set_len(&self, len: u64) -> Result<()> {
        self.file.set_len(len)?;
        self.len.store(len, Ordering::Release);
        Ok(())
    }

    /// Best-effort page-cache prefetch hint.
    pub fn advise_willneed(&self, offset: u64, len: u64) {
        use std::os::unix::io::AsRawFd;
        unsafe {
            libc::posix_fadvise(
                self.file.as_raw_fd(),
                offset as libc::off_t,
                len as libc::off_t,
                libc::POSIX_FADV_WILLNEED,
            );
        }
    }

    /// Best-effort page-cache eviction; used by the scan benchmark to start
    /// from a cold cache.
    pub fn advise_dontneed(&self, offset: u64, len: u64) {
        use std::os::unix::io::AsRawFd;
        unsafe {
            libc::posix_fadvise(
                self.file.as_raw_fd(),
                offset as libc::off_t,
                len as libc::off_t,
                libc::POSIX_FADV_DONTNEED,
            );
        }
    }
}
