//! On-disk record encoding and the key-to-group hash.
//!
//! Every value-store record is `[flags:1][key_size:1][reserved:2][value_size:4]`
//! (little-endian) followed by the key and value bytes. The 8-byte header plus
//! a 24-byte key and a 992-byte value gives the canonical 1 KiB pair.
//!
//! `key_size == 0` never occurs in a valid record and doubles as the
//! end-of-live-data sentinel when scanning zero-initialized segment space.

use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 8;
pub const MAX_KEY_LEN: usize = 255;

/// Record flag bits. Bits 2-7 are reserved and always zero.
pub const FLAG_TOMBSTONE: u8 = 0b0000_0001;
/// Set on tag records left in a segment group after the value moved to the
/// cold data log. Tag records carry no value bytes.
pub const FLAG_COLD_TAG: u8 = 0b0000_0010;

const FLAG_MASK: u8 = FLAG_TOMBSTONE | FLAG_COLD_TAG;

/// Storage area a [`ValueLocation`] points into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Area {
    SegmentStore,
    ColdLog,
    Vlog,
}

impl Area {
    pub fn as_u8(self) -> u8 {
        match self {
            Area::SegmentStore => 0,
            Area::ColdLog => 1,
            Area::Vlog => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Area> {
        match v {
            0 => Ok(Area::SegmentStore),
            1 => Ok(Area::ColdLog),
            2 => Ok(Area::Vlog),
            other => Err(Error::CorruptRecord(format!("unknown area tag {other}"))),
        }
    }
}

/// Position of an encoded record inside one of the storage areas.
///
/// For the segment store the offset is a byte offset into the value-store
/// file. For the cold data log and the vLog it is a logical (monotonically
/// increasing) offset; the physical position is the offset modulo the region
/// capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueLocation {
    pub area: Area,
    pub offset: u64,
    pub length: u32,
}

impl ValueLocation {
    pub fn new(area: Area, offset: u64, length: u32) -> Self {
        debug_assert!(length as usize >= HEADER_LEN + 1);
        ValueLocation { area, offset, length }
    }

    pub fn end(&self) -> u64 {
        self.offset + self.length as u64
    }
}

/// Segment group index in `[0, n_main)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId(pub u32);

impl GroupId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A decoded record borrowing from the scan buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordRef<'a> {
    pub flags: u8,
    pub key: &'a [u8],
    pub value: &'a [u8],
}

impl<'a> RecordRef<'a> {
    pub fn is_tombstone(&self) -> bool {
        self.flags & FLAG_TOMBSTONE != 0
    }

    pub fn is_cold_tag(&self) -> bool {
        self.flags & FLAG_COLD_TAG != 0
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.key.len() + self.value.len()
    }

    pub fn to_owned(&self) -> KVRecord {
        KVRecord {
            flags: self.flags,
            key: self.key.to_vec(),
            value: self.value.to_vec(),
        }
    }
}

/// Owned form of a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KVRecord {
    pub flags: u8,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

impl KVRecord {
    pub fn is_tombstone(&self) -> bool {
        self.flags & FLAG_TOMBSTONE != 0
    }

    pub fn is_cold_tag(&self) -> bool {
        self.flags & FLAG_COLD_TAG != 0
    }
}

pub fn encoded_len(key: &[u8], value: &[u8]) -> usize {
    HEADER_LEN + key.len() + value.len()
}

fn check_bounds(flags: u8, key: &[u8], value: &[u8]) -> Result<()> {
    if key.is_empty() {
        return Err(Error::InvalidArgument("key must not be empty".into()));
    }
    if key.len() > MAX_KEY_LEN {
        return Err(Error::InvalidArgument(format!(
            "key length {} exceeds {MAX_KEY_LEN}",
            key.len()
        )));
    }
    if value.len() >= u32::MAX as usize {
        return Err(Error::InvalidArgument("value too long".into()));
    }
    if flags & !FLAG_MASK != 0 {
        return Err(Error::InvalidArgument(format!("reserved flag bits set: {flags:#04x}")));
    }
    if flags & (FLAG_TOMBSTONE | FLAG_COLD_TAG) != 0 && !value.is_empty() {
        return Err(Error::InvalidArgument(
            "tombstone and tag records must have an empty value".into(),
        ));
    }
    Ok(())
}

/// Appends the encoded record to `out`. Returns the encoded length.
pub fn encode_into(out: &mut Vec<u8>, flags: u8, key: &[u8], value: &[u8]) -> Result<usize> {
    check_bounds(flags, key, value)?;
    out.push(flags);
    out.push(key.len() as u8);
    out.extend_from_slice(&[0u8, 0u8]);
    out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(value);
    Ok(HEADER_LEN + key.len() + value.len())
}

pub fn encode_record(flags: u8, key: &[u8], value: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(encoded_len(key, value));
    encode_into(&mut out, flags, key, value)?;
    Ok(out)
}

/// Decodes one record at `at`. Returns the record and the bytes consumed.
///
/// A zero `key_size` is reported as corrupt; callers scanning zero-filled
/// segment space treat it as the end-of-live-data sentinel.
pub fn decode_record(buf: &[u8], at: usize) -> Result<(RecordRef<'_>, usize)> {
    let rest = buf.get(at..).unwrap_or(&[]);
    if rest.len() < HEADER_LEN {
        return Err(Error::CorruptRecord(format!(
            "truncated header: {} bytes available",
            rest.len()
        )));
    }
    let flags = rest[0];
    let key_size = rest[1] as usize;
    if key_size == 0 {
        return Err(Error::CorruptRecord("zero key size".into()));
    }
    let value_size = u32::from_le_bytes([rest[4], rest[5], rest[6], rest[7]]) as usize;
    let total = HEADER_LEN + key_size + value_size;
    if rest.len() < total {
        return Err(Error::CorruptRecord(format!(
            "truncated body: need {total} bytes, have {}",
            rest.len()
        )));
    }
    let key = &rest[HEADER_LEN..HEADER_LEN + key_size];
    let value = &rest[HEADER_LEN + key_size..total];
    Ok((RecordRef { flags, key, value }, total))
}

/// True if the bytes at `at` start with the end-of-data sentinel (a zeroed
/// key-size field) or run out before a full header.
pub fn at_sentinel(buf: &[u8], at: usize) -> bool {
    match buf.get(at..) {
        None => true,
        Some(rest) => rest.len() < HEADER_LEN || rest[1] == 0,
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a 64-bit. Fixed here so segment layouts are reproducible across
/// implementations and platforms.
pub fn fnv1a64(data: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Maps a key to its segment group: `FNV-1a-64(key) mod n_main`.
pub fn hash_group(key: &[u8], n_main: u32) -> GroupId {
    debug_assert!(n_main >= 1);
    GroupId((fnv1a64(key) % n_main as u64) as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_one_byte_pair() {
        let bytes = encode_record(0, b"k", b"v").unwrap();
        assert_eq!(bytes.len(), 10);
        assert_eq!(&bytes[..8], &[0x00, 0x01, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00]);
        assert_eq!(&bytes[8..], b"kv");
    }

    #[test]
    fn canonical_1kib_pair() {
        let key = [0xabu8; 24];
        let value = [0xcdu8; 992];
        let bytes = encode_record(0, &key, &value).unwrap();
        assert_eq!(bytes.len(), 1024);
    }

    #[test]
    fn tombstone_is_nine_bytes() {
        let bytes = encode_record(FLAG_TOMBSTONE, b"k", b"").unwrap();
        assert_eq!(bytes.len(), 9);
        let (rec, n) = decode_record(&bytes, 0).unwrap();
        assert!(rec.is_tombstone());
        assert_eq!(rec.value.len(), 0);
        assert_eq!(n, 9);
    }

    #[test]
    fn decode_round_trip() {
        let bytes = encode_record(0, b"k", b"v").unwrap();
        let (rec, n) = decode_record(&bytes, 0).unwrap();
        assert_eq!(rec.flags, 0);
        assert_eq!(rec.key, b"k");
        assert_eq!(rec.value, b"v");
        assert_eq!(n, 10);
    }

    #[test]
    fn zero_key_size_is_sentinel() {
        let zeros = [0u8; 8];
        assert!(decode_record(&zeros, 0).is_err());
        assert!(at_sentinel(&zeros, 0));
    }

    #[test]
    fn truncated_buffer_is_corrupt() {
        let bytes = [1u8, 2, 3, 4, 5];
        assert!(matches!(decode_record(&bytes, 0), Err(Error::CorruptRecord(_))));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(encode_record(0, b"", b"v"), Err(Error::InvalidArgument(_))));
        let long_key = vec![1u8; 256];
        assert!(matches!(encode_record(0, &long_key, b"v"), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            encode_record(FLAG_TOMBSTONE, b"k", b"v"),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn fnv_reference_values() {
        // Pinned against an independent FNV-1a implementation.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"key"), 0x3dc9_4a19_365b_10ec);
    }

    #[test]
    fn hash_group_examples() {
        assert_eq!(hash_group(b"anything at all", 1), GroupId(0));
        assert_eq!(hash_group(b"key", 64), GroupId(44));
        // Congruent hashes map to the same group by definition.
        let g = hash_group(b"key", 64);
        assert_eq!(GroupId((fnv1a64(b"key") % 64) as u32), g);
    }

    #[test]
    fn hash_group_is_deterministic() {
        let first = hash_group(b"stable-key", 64);
        for _ in 0..1_000_000 {
            assert_eq!(hash_group(b"stable-key", 64), first);
        }
    }

    #[test]
    fn group_distribution_within_bound() {
        // 1.28M distinct pseudo-random 24-byte keys over 64 groups. Per-group
        // counts must stay within 2.5% of the mean.
        let n_keys = 1_280_000u64;
        let n_main = 64u32;
        let mut counts = vec![0u64; n_main as usize];
        for i in 0..n_keys {
            let a = fnv1a64(&[42u64.to_le_bytes(), i.to_le_bytes()].concat());
            let b = fnv1a64(&[43u64.to_le_bytes(), i.to_le_bytes()].concat());
            let key = format!("{a:016x}{:.8}", format!("{b:016x}"));
            counts[hash_group(key.as_bytes(), n_main).index()] += 1;
        }
        let mean = n_keys as f64 / n_main as f64;
        for (g, &c) in counts.iter().enumerate() {
            let dev = (c as f64 - mean).abs() / mean;
            assert!(dev <= 0.025, "group {g}: count {c} deviates {:.3}% from mean", dev * 100.0);
        }
    }

    proptest! {
        #[test]
        fn round_trip_any_record(
            tomb in proptest::bool::ANY,
            key in proptest::collection::vec(any::<u8>(), 1..=255),
            value in proptest::collection::vec(any::<u8>(), 0..2048),
        ) {
            let (flags, value) = if tomb { (FLAG_TOMBSTONE, vec![]) } else { (0, value) };
            let bytes = encode_record(flags, &key, &value).unwrap();
            prop_assert_eq!(bytes.len(), HEADER_LEN + key.len() + value.len());
            let (rec, n) = decode_record(&bytes, 0).unwrap();
            prop_assert_eq!(n, bytes.len());
            prop_assert_eq!(rec.flags, flags);
            prop_assert_eq!(rec.key, &key[..]);
            prop_assert_eq!(rec.value, &value[..]);
        }
    }
}
