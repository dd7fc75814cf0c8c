//! Circular byte region addressing over a tracked file.
//!
//! Logical offsets grow monotonically; the physical position is the logical
//! offset modulo the region capacity, so a stale location can never alias a
//! newer record after the log wraps. An unbounded region (no capacity) is
//! laid out linearly and simply grows the file.

use crate::error::{Error, Result};
use crate::io::TrackedFile;

#[derive(Debug, Clone, Copy)]
pub struct CircularSpan {
    pub base: u64,
    pub capacity: Option<u64>,
}

impl CircularSpan {
    pub fn new(base: u64, capacity: Option<u64>) -> CircularSpan {
        CircularSpan { base, capacity }
    }

    pub fn write(&self, file: &TrackedFile, logical: u64, bytes: &[u8]) -> Result<()> {
        match self.capacity {
            None => file.write_at(self.base + logical, bytes),
            Some(cap) => {
                if (bytes.len() as u64) > cap {
                    return Err(Error::InvalidArgument(format!(
                        "write of {} bytes exceeds region capacity {cap}",
                        bytes.len()
                    )));
                }
                let off = logical % cap;
                let first = ((cap - off) as usize).min(bytes.len());
                file.write_at(self.base + off, &bytes[..first])?;
                if first < bytes.len() {
                    file.write_at(self.base, &bytes[first..])?;
                }
                Ok(())
            }
        }
    }

    pub fn read(&self, file: &TrackedFile, logical: u64, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        match self.capacity {
            None => file.read_exact_at(self.base + logical, &mut buf)?,
            Some(cap) => {
                if (len as u64) > cap {
                    return Err(Error::InvalidLocation(format!(
                        "read of {len} bytes exceeds region capacity {cap}"
                    )));
                }
                let off = logical % cap;
                let first = ((cap - off) as usize).min(len);
                file.read_exact_at(self.base + off, &mut buf[..first])?;
                if first < len {
                    file.read_exact_at(self.base, &mut buf[first..])?;
                }
            }
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{Component, IoCounters};

    #[test]
    fn wrap_around_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let counters = IoCounters::new();
        let file = TrackedFile::open(&dir.path().join("c"), Component::ValueStore, counters, None)
            .unwrap();
        file.set_len(100).unwrap();
        let span = CircularSpan::new(0, Some(100));
        // Write 30 bytes at logical 85: wraps 15 bytes to the start.
        let data: Vec<u8> = (0..30u8).collect();
        span.write(&file, 85, &data).unwrap();
        assert_eq!(span.read(&file, 85, 30).unwrap(), data);
        // The wrapped part physically sits at offset 0.
        assert_eq!(span.read(&file, 100, 15).unwrap(), &data[15..]);
    }

    #[test]
    fn unbounded_is_linear() {
        let dir = tempfile::tempdir().unwrap();
        let counters = IoCounters::new();
        let file = TrackedFile::open(&dir.path().join("c"), Component::ValueStore, counters, None)
            .unwrap();
        let span = CircularSpan::new(10, None);
        span.write(&file, 5, b"hello").unwrap();
        assert_eq!(span.read(&file, 5, 5).unwrap(), b"hello");
        assert_eq!(file.len(), 20);
    }
}
