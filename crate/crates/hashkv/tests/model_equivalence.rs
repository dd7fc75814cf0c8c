//! Randomized mixed operations against an in-memory ordered-map oracle,
//! with forced flushes, GC, and compaction interleaved. The acceptance suite
//! runs the full-size version of this; here a faster one guards development.

use std::collections::BTreeMap;

use hashkv::config::{StoreConfig, ValueBackend};
use hashkv::lsm::ScanLimit;
use hashkv::store::Store;

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0 >> 11
    }
}

fn model_config(dir: &std::path::Path, backend: ValueBackend) -> StoreConfig {
    let mut c = StoreConfig::sized(dir, 1 << 20);
    c.backend = backend;
    c.store_bytes = 1 << 20;
    c.main_segment_bytes = 128 << 10;
    c.log_segment_bytes = 8 << 10;
    c.write_cache_bytes = 24 << 10;
    c.memtable_bytes = 32 << 10;
    c.sstable_target_bytes = 32 << 10;
    c.level1_max_bytes = 128 << 10;
    c.vlog_chunk_bytes = 64 << 10;
    c
}

fn run_model(backend: ValueBackend, seed: u64, ops: u64) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(model_config(dir.path(), backend)).unwrap();
    let mut model: BTreeMap<Vec<u8>, Vec<u8>> = BTreeMap::new();
    let mut rng = Lcg(seed);

    for op in 0..ops {
        let key = format!("key{:05}", rng.next() % 600).into_bytes();
        match rng.next() % 100 {
            // Mixed sizes straddle the 192-byte selective threshold, so the
            // same key alternates between inline and separated storage.
            0..=49 => {
                let len = (rng.next() % 400) as usize;
                let value = vec![(rng.next() % 251) as u8; len];
                store.put(&key, &value).unwrap();
                model.insert(key, value);
            }
            50..=64 => {
                store.delete(&key).unwrap();
                model.remove(&key);
            }
            65..=89 => {
                let got = store.get(&key).unwrap();
                assert_eq!(got.as_ref(), model.get(&key), "op {op}: get {:?}", pretty(&key));
            }
            90..=96 => {
                let count = (rng.next() % 10 + 1) as usize;
                let got = store.scan(&key, ScanLimit::Count(count)).unwrap();
                let want: Vec<(Vec<u8>, Vec<u8>)> = model
                    .range(key.clone()..)
                    .take(count)
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                assert_eq!(got, want, "op {op}: scan from {:?}", pretty(&key));
            }
            97 => store.flush().unwrap(),
            98 => match store.force_gc() {
                Ok(_) | Err(hashkv::Error::NothingToCollect) => {}
                Err(e) => panic!("forced gc failed: {e}"),
            },
            _ => store.compact_all().unwrap(),
        }
    }
    // Final full agreement.
    let got = store.scan(b"", ScanLimit::Count(usize::MAX)).unwrap();
    let want: Vec<(Vec<u8>, Vec<u8>)> =
        model.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    assert_eq!(got, want);
    store.audit().unwrap();
    store.close().unwrap();
}

fn pretty(key: &[u8]) -> String {
    String::from_utf8_lossy(key).into_owned()
}

#[test]
fn hashkv_matches_model() {
    run_model(ValueBackend::HashKv, 11, 20_000);
}

#[test]
fn vlog_matches_model() {
    run_model(ValueBackend::Vlog, 12, 20_000);
}

#[test]
fn inline_matches_model() {
    run_model(ValueBackend::Inline, 13, 20_000);
}

#[test]
fn hashkv_with_hotness_matches_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = model_config(dir.path(), ValueBackend::HashKv);
    config.hotness_awareness = true;
    config.cold_log_bytes = Some(256 << 10);
    config.cold_log_chunk_bytes = 32 << 10;
    let store = Store::open(config).unwrap();
    let mut model: BTreeMap<Vec<u8>, Vec<u8>> = BTreeMap::new();
    let mut rng = Lcg(77);
    for _ in 0..20_000u32 {
        let key = format!("key{:05}", rng.next() % 500).into_bytes();
        match rng.next() % 10 {
            0..=5 => {
                let value = vec![(rng.next() % 251) as u8; (rng.next() % 400) as usize];
                store.put(&key, &value).unwrap();
                model.insert(key, value);
            }
            6 => {
                store.delete(&key).unwrap();
                model.remove(&key);
            }
            7 | 8 => {
                assert_eq!(store.get(&key).unwrap().as_ref(), model.get(&key));
            }
            _ => match store.force_gc() {
                Ok(_) | Err(hashkv::Error::NothingToCollect) => {}
                Err(e) => panic!("forced gc failed: {e}"),
            },
        }
    }
    for (k, v) in &model {
        assert_eq!(store.get(k).unwrap().as_ref(), Some(v));
    }
    store.audit().unwrap();
    store.close().unwrap();
}
