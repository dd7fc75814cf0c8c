//! Store configuration: programmatic defaults, `key = value` config files,
//! and environment-variable overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gc::PolicyKind;
use crate::io::FaultPlan;
use crate::lsm::LsmConfig;
use crate::segment::SegmentGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueBackend {
    HashKv,
    Vlog,
    /// Whole pairs stored in the LSM-tree: the no-separation baseline.
    Inline,
}

impl ValueBackend {
    pub fn name(self) -> &'static str {
        match self {
            ValueBackend::HashKv => "hashkv",
            ValueBackend::Vlog => "vlog",
            ValueBackend::Inline => "inline",
        }
    }
}

impl std::str::FromStr for ValueBackend {
    type Err = Error;
    fn from_str(s: &str) -> Result<ValueBackend> {
        match s {
            "hashkv" => Ok(ValueBackend::HashKv),
            "vlog" => Ok(ValueBackend::Vlog),
            "inline" => Ok(ValueBackend::Inline),
            other => Err(Error::InvalidArgument(format!("unknown backend {other:?}"))),
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<PolicyKind> {
        match s {
            "greedy" => Ok(PolicyKind::Greedy),
            "cba" => Ok(PolicyKind::Cba),
            "gra" => Ok(PolicyKind::Gra),
            "random" => Ok(PolicyKind::Random),
            other => Err(Error::InvalidArgument(format!("unknown gc policy {other:?}"))),
        }
    }
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Greedy => "greedy",
            PolicyKind::Cba => "cba",
            PolicyKind::Gra => "gra",
            PolicyKind::Random => "random",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub dir: PathBuf,
    pub backend: ValueBackend,
    /// Nominal value-store size: the main-segment region for hashkv, the
    /// pre-reservation capacity for vlog.
    pub store_bytes: u64,
    pub main_segment_bytes: u64,
    pub log_segment_bytes: u64,
    pub reserved_fraction: f64,
    /// Cold data log capacity. `None` leaves it unlimited, as the original
    /// evaluation setup does; the default caps it at 10% of the store.
    pub cold_log_bytes: Option<u64>,
    /// Pairs with encoded size (8 + key + value) strictly below this stay
    /// inline in the LSM-tree. 0 disables selective separation.
    pub selective_threshold_bytes: u32,
    pub write_cache_bytes: usize,
    pub batch_write_threshold_bytes: usize,
    pub flush_parallelism: usize,
    pub gc_policy: PolicyKind,
    pub gra_d: usize,
    pub hotness_awareness: bool,
    pub gc_read_parallelism: usize,
    pub cold_log_chunk_bytes: u64,
    pub vlog_chunk_bytes: u64,
    pub journaling: bool,
    /// Journal files are recycled once they grow past this size.
    pub journal_rotate_bytes: u64,
    pub seed: u64,
    pub scan_read_ahead: bool,
    pub memtable_bytes: usize,
    pub sstable_target_bytes: usize,
    pub l0_max_tables: usize,
    pub level1_max_bytes: u64,
    pub lsm_fanout: u64,
    /// Testing hook: cut off I/O after a chosen number of events.
    pub fault: Option<Arc<FaultPlan>>,
}

impl StoreConfig {
    /// Desk-scale defaults: 2 GiB store, 30% reserved, 4 MiB main segments,
    /// 64 KiB log segments, 1 MiB write cache, 4 KiB batch threshold.
    pub fn desk_default(dir: impl Into<PathBuf>) -> StoreConfig {
        StoreConfig {
            dir: dir.into(),
            backend: ValueBackend::HashKv,
            store_bytes: 2 << 30,
            main_segment_bytes: 4 << 20,
            log_segment_bytes: 64 << 10,
            reserved_fraction: 0.30,
            cold_log_bytes: Some((2u64 << 30) / 10),
            selective_threshold_bytes: 192,
            write_cache_bytes: 1 << 20,
            batch_write_threshold_bytes: 4 << 10,
            flush_parallelism: 8,
            gc_policy: PolicyKind::Greedy,
            gra_d: 5,
            hotness_awareness: false,
            gc_read_parallelism: 8,
            cold_log_chunk_bytes: 4 << 20,
            vlog_chunk_bytes: 4 << 20,
            journaling: true,
            journal_rotate_bytes: 8 << 20,
            seed: 42,
            scan_read_ahead: true,
            memtable_bytes: 2 << 20,
            sstable_target_bytes: 2 << 20,
            l0_max_tables: 4,
            level1_max_bytes: 10 << 20,
            lsm_fanout: 10,
            fault: None,
        }
    }

    /// Scales the store down while preserving the desk-scale ratios:
    /// reserved fraction, main:log = 64:1, cache:store, and the LSM level
    /// geometry (so index depth and compaction behavior shrink with the
    /// store instead of collapsing into one level).
    pub fn sized(dir: impl Into<PathBuf>, store_bytes: u64) -> StoreConfig {
        let mut c = StoreConfig::desk_default(dir);
        c.store_bytes = store_bytes;
        c.main_segment_bytes = (store_bytes / 512).clamp(64 << 10, 4 << 20);
        c.log_segment_bytes = (c.main_segment_bytes / 64).max(4 << 10);
        c.cold_log_bytes = Some(store_bytes / 10);
        c.write_cache_bytes = ((store_bytes / 2048) as usize).clamp(64 << 10, 1 << 20);
        c.vlog_chunk_bytes = (store_bytes / 512).clamp(64 << 10, 4 << 20);
        c.cold_log_chunk_bytes = c.vlog_chunk_bytes;
        c.memtable_bytes = ((store_bytes / 1024) as usize).clamp(64 << 10, 2 << 20);
        c.sstable_target_bytes = c.memtable_bytes;
        c.level1_max_bytes = (5 * c.memtable_bytes) as u64;
        c
    }

    pub fn geometry(&self) -> SegmentGeometry {
        let mut g = SegmentGeometry::with_store_size(
            self.store_bytes,
            self.main_segment_bytes,
            self.log_segment_bytes,
            self.reserved_fraction,
        );
        g.cold_capacity = if self.hotness_awareness { self.cold_log_bytes } else { Some(0) };
        g
    }

    pub fn vlog_capacity(&self) -> u64 {
        self.store_bytes + (self.store_bytes as f64 * self.reserved_fraction).ceil() as u64
    }

    pub fn lsm_config(&self) -> LsmConfig {
        LsmConfig {
            memtable_bytes: self.memtable_bytes,
            sstable_target_bytes: self.sstable_target_bytes,
            l0_max_tables: self.l0_max_tables,
            level1_max_bytes: self.level1_max_bytes,
            fanout: self.lsm_fanout,
        }
    }

    /// Applies `key = value` lines from a config file.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {} has no '=': {line}", lineno + 1))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies `HASHKV_<KEY>` environment variable overrides.
    pub fn apply_env(&mut self) -> Result<()> {
        for (key, value) in std::env::vars() {
            if let Some(name) = key.strip_prefix("HASHKV_") {
                self.apply_kv(&name.to_ascii_lowercase(), &value)?;
            }
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidArgument(format!("bad value for {key}: {v:?}")))
        }
        fn onoff(key: &str, v: &str) -> Result<bool> {
            match v {
                "on" | "true" | "1" => Ok(true),
                "off" | "false" | "0" => Ok(false),
                _ => Err(Error::InvalidArgument(format!("bad on/off value for {key}: {v:?}"))),
            }
        }
        match key {
            "dir" => self.dir = PathBuf::from(value),
            "value_backend" | "backend" => self.backend = value.parse()?,
            "store_bytes" => self.store_bytes = num(key, value)?,
            "main_segment_bytes" => self.main_segment_bytes = num(key, value)?,
            "log_segment_bytes" => self.log_segment_bytes = num(key, value)?,
            "reserved_fraction" => self.reserved_fraction = num(key, value)?,
            "cold_log_bytes" => {
                self.cold_log_bytes =
                    if value == "unlimited" { None } else { Some(num(key, value)?) }
            }
            "selective_threshold_bytes" => self.selective_threshold_bytes = num(key, value)?,
            "write_cache_bytes" => self.write_cache_bytes = num(key, value)?,
            "batch_write_threshold_bytes" => {
                self.batch_write_threshold_bytes = num(key, value)?
            }
            "flush_parallelism" => self.flush_parallelism = num(key, value)?,
            "gc_policy" => self.gc_policy = value.parse()?,
            "gra_d" => self.gra_d = num(key, value)?,
            "hotness_awareness" => self.hotness_awareness = onoff(key, value)?,
            "gc_read_parallelism" => self.gc_read_parallelism = num(key, value)?,
            "cold_log_chunk_bytes" => self.cold_log_chunk_bytes = num(key, value)?,
            "vlog_chunk_bytes" => self.vlog_chunk_bytes = num(key, value)?,
            "journaling" => self.journaling = onoff(key, value)?,
            "journal_rotate_bytes" => self.journal_rotate_bytes = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "scan_read_ahead" => self.scan_read_ahead = onoff(key, value)?,
            "memtable_bytes" => self.memtable_bytes = num(key, value)?,
            "sstable_target_bytes" => self.sstable_target_bytes = num(key, value)?,
            "l0_max_tables" => self.l0_max_tables = num(key, value)?,
            "level1_max_bytes" => self.level1_max_bytes = num(key, value)?,
            "lsm_fanout" => self.lsm_fanout = num(key, value)?,
            other => {
                return Err(Error::InvalidArgument(format!("unknown config key {other:?}")))
            }
        }
        Ok(())
    }

    /// All effective settings, one `key = value` line each.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("dir", self.dir.display().to_string());
        kv("value_backend", self.backend.name().to_string());
        kv("store_bytes", self.store_bytes.to_string());
        kv("main_segment_bytes", self.main_segment_bytes.to_string());
        kv("log_segment_bytes", self.log_segment_bytes.to_string());
        kv("reserved_fraction", format!("{}", self.reserved_fraction));
        kv(
            "cold_log_bytes",
            self.cold_log_bytes.map(|b| b.to_string()).unwrap_or_else(|| "unlimited".into()),
        );
        kv("selective_threshold_bytes", self.selective_threshold_bytes.to_string());
        kv("write_cache_bytes", self.write_cache_bytes.to_string());
        kv("batch_write_threshold_bytes", self.batch_write_threshold_bytes.to_string());
        kv("flush_parallelism", self.flush_parallelism.to_string());
        kv("gc_policy", self.gc_policy.name().to_string());
        kv("gra_d", self.gra_d.to_string());
        kv("hotness_awareness", if self.hotness_awareness { "on" } else { "off" }.to_string());
        kv("gc_read_parallelism", self.gc_read_parallelism.to_string());
        kv("cold_log_chunk_bytes", self.cold_log_chunk_bytes.to_string());
        kv("vlog_chunk_bytes", self.vlog_chunk_bytes.to_string());
        kv("journaling", if self.journaling { "on" } else { "off" }.to_string());
        kv("journal_rotate_bytes", self.journal_rotate_bytes.to_string());
        kv("seed", self.seed.to_string());
        kv("scan_read_ahead", if self.scan_read_ahead { "on" } else { "off" }.to_string());
        kv("memtable_bytes", self.memtable_bytes.to_string());
        kv("sstable_target_bytes", self.sstable_target_bytes.to_string());
        kv("l0_max_tables", self.l0_max_tables.to_string());
        kv("level1_max_bytes", self.level1_max_bytes.to_string());
        kv("lsm_fanout", self.lsm_fanout.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = StoreConfig::desk_default(dir.path());
        let path = dir.path().join("store.conf");
        std::fs::write(
            &path,
            "# comment\nvalue_backend = vlog\nstore_bytes = 1048576\nhotness_awareness = on\ncold_log_bytes = unlimited\n",
        )
        .unwrap();
        config.apply_file(&path).unwrap();
        assert_eq!(config.backend, ValueBackend::Vlog);
        assert_eq!(config.store_bytes, 1 << 20);
        assert!(config.hotness_awareness);
        assert_eq!(config.cold_log_bytes, None);
        let desc = config.describe();
        assert!(desc.contains("value_backend = vlog"));
        assert!(desc.contains("cold_log_bytes = unlimited"));
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut config = StoreConfig::desk_default("/tmp/x");
        assert!(config.apply_kv("no_such_key", "1").is_err());
        assert!(config.apply_kv("journaling", "maybe").is_err());
    }

    #[test]
    fn geometry_rounds_reserved_up() {
        let config = StoreConfig::desk_default("/tmp/x");
        let g = config.geometry();
        assert_eq!(g.n_main, 512);
        // 30% of 2 GiB = 644245094.4 bytes -> 9830.4 -> 9831 log segments.
        assert_eq!(g.n_log, 9831);
        assert!(g.reserved_region_bytes() >= (2u64 << 30) * 3 / 10);
    }
}
