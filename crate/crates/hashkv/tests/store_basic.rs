//! End-to-end store behavior across all three value backends.

use hashkv::config::{StoreConfig, ValueBackend};
use hashkv::lsm::ScanLimit;
use hashkv::store::Store;

fn small_config(dir: &std::path::Path, backend: ValueBackend) -> StoreConfig {
    let mut c = StoreConfig::sized(dir, 2 << 20); // 2 MiB store
    c.backend = backend;
    c.write_cache_bytes = 64 << 10;
    c.memtable_bytes = 64 << 10;
    c.sstable_target_bytes = 64 << 10;
    c.level1_max_bytes = 256 << 10;
    c
}

fn all_backends() -> [ValueBackend; 3] {
    [ValueBackend::HashKv, ValueBackend::Vlog, ValueBackend::Inline]
}

#[test]
fn put_get_delete_round_trip() {
    for backend in all_backends() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(small_config(dir.path(), backend)).unwrap();
        store.put(b"hello", b"world").unwrap();
        assert_eq!(store.get(b"hello").unwrap(), Some(b"world".to_vec()));
        assert_eq!(store.get(b"missing").unwrap(), None);
        store.delete(b"hello").unwrap();
        assert_eq!(store.get(b"hello").unwrap(), None);
        store.delete(b"never-existed").unwrap();
        assert_eq!(store.get(b"never-existed").unwrap(), None);
        // Delete then re-put: the new value wins.
        store.put(b"k", b"v1").unwrap();
        store.delete(b"k").unwrap();
        store.put(b"k", b"v2").unwrap();
        assert_eq!(store.get(b"k").unwrap(), Some(b"v2".to_vec()));
        store.close().unwrap();
    }
}

#[test]
fn values_survive_flush_and_reopen() {
    for backend in all_backends() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config(dir.path(), backend);
        {
            let store = Store::open(config.clone()).unwrap();
            for i in 0..500u32 {
                let key = format!("key{i:06}");
                let value = vec![i as u8; 400]; // separated path
                store.put(key.as_bytes(), &value).unwrap();
            }
            store.put(b"small", b"sv").unwrap(); // inline path
            store.close().unwrap();
        }
        let store = Store::open(config).unwrap();
        for i in 0..500u32 {
            let key = format!("key{i:06}");
            assert_eq!(store.get(key.as_bytes()).unwrap(), Some(vec![i as u8; 400]), "{key}");
        }
        assert_eq!(store.get(b"small").unwrap(), Some(b"sv".to_vec()));
        store.audit().unwrap();
        store.close().unwrap();
    }
}

#[test]
fn scan_merges_cache_and_index() {
    for backend in all_backends() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(small_config(dir.path(), backend)).unwrap();
        store.put(b"a", &[1u8; 300]).unwrap();
        store.put(b"b", &[2u8; 300]).unwrap();
        store.put(b"d", &[4u8; 300]).unwrap();
        store.flush().unwrap();
        store.put(b"c", &[3u8; 300]).unwrap(); // cache-only key
        store.delete(b"b").unwrap();
        let got = store.scan(b"a", ScanLimit::Count(10)).unwrap();
        let keys: Vec<&[u8]> = got.iter().map(|(k, _)| k.as_slice()).collect();
        assert_eq!(keys, vec![b"a".as_slice(), b"c", b"d"], "{backend:?}");
        assert_eq!(got[1].1, vec![3u8; 300]);
        let bounded = store.scan(b"a", ScanLimit::EndKey(b"c")).unwrap();
        assert_eq!(bounded.len(), 1);
        store.close().unwrap();
    }
}

#[test]
fn selective_threshold_routes_by_encoded_size() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(small_config(dir.path(), ValueBackend::HashKv)).unwrap();
    // 24-byte keys: encoded = 32 + value len. 192-byte pairs go separated
    // (strict less-than is inline).
    let key_a = [b'a'; 24];
    let key_b = [b'b'; 24];
    let key_c = [b'c'; 24];
    store.put(&key_a, &vec![1u8; 159]).unwrap(); // 191 encoded: inline
    store.put(&key_b, &vec![2u8; 160]).unwrap(); // 192 encoded: separated
    store.put(&key_c, &vec![3u8; 992]).unwrap(); // 1 KiB: separated
    store.flush().unwrap();
    let m = store.metrics();
    assert_eq!(m.inline_records.load(std::sync::atomic::Ordering::Relaxed), 1);
    assert_eq!(
        m.separated_bytes.load(std::sync::atomic::Ordering::Relaxed),
        192 + 1024
    );
    assert_eq!(store.get(&key_a).unwrap(), Some(vec![1u8; 159]));
    assert_eq!(store.get(&key_b).unwrap(), Some(vec![2u8; 160]));
    store.close().unwrap();
}

#[test]
fn all_small_pairs_leave_value_store_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(small_config(dir.path(), ValueBackend::HashKv)).unwrap();
    for i in 0..2000u32 {
        store.put(format!("k{i}").as_bytes(), &[0u8; 40]).unwrap();
    }
    store.flush().unwrap();
    let m = store.metrics();
    assert_eq!(m.separated_bytes.load(std::sync::atomic::Ordering::Relaxed), 0);
    assert_eq!(m.io.written(hashkv::io::Component::ValueStore), 0);
    store.close().unwrap();
}

#[test]
fn all_large_pairs_store_no_inline_values() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(small_config(dir.path(), ValueBackend::HashKv)).unwrap();
    for i in 0..200u32 {
        store.put(format!("k{i:04}").as_bytes(), &[7u8; 500]).unwrap();
    }
    store.flush().unwrap();
    let m = store.metrics();
    assert_eq!(m.inline_records.load(std::sync::atomic::Ordering::Relaxed), 0);
    assert!(m.separated_bytes.load(std::sync::atomic::Ordering::Relaxed) > 0);
    store.close().unwrap();
}

#[test]
fn gc_preserves_every_visible_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path(), ValueBackend::HashKv);
    config.write_cache_bytes = 32 << 10;
    let store = Store::open(config).unwrap();
    // Update a small key population heavily so groups fill and GC matters.
    let mut state = std::collections::BTreeMap::new();
    for round in 0..30u32 {
        for i in 0..120u32 {
            let key = format!("key{i:04}");
            let value = vec![(round % 251) as u8; 300 + (i % 50) as usize];
            store.put(key.as_bytes(), &value).unwrap();
            state.insert(key, value);
        }
    }
    store.flush().unwrap();
    let before: Vec<_> = state.iter().map(|(k, _)| store.get(k.as_bytes()).unwrap()).collect();
    let stats = store.force_gc().unwrap();
    assert_eq!(stats.lsm_lookups, 0);
    let after: Vec<_> = state.iter().map(|(k, _)| store.get(k.as_bytes()).unwrap()).collect();
    assert_eq!(before, after);
    for (k, v) in &state {
        assert_eq!(store.get(k.as_bytes()).unwrap().as_ref(), Some(v));
    }
    store.audit().unwrap();
    store.close().unwrap();
}

#[test]
fn vlog_gc_counts_lookups_and_preserves_values() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(small_config(dir.path(), ValueBackend::Vlog)).unwrap();
    let mut state = std::collections::BTreeMap::new();
    for round in 0..20u32 {
        for i in 0..100u32 {
            let key = format!("key{i:04}");
            let value = vec![(round + i) as u8; 400];
            store.put(key.as_bytes(), &value).unwrap();
            state.insert(key, value);
        }
    }
    store.flush().unwrap();
    let stats = store.force_gc().unwrap();
    assert!(stats.lsm_lookups > 0);
    assert_eq!(stats.lsm_lookups, stats.bytes_scanned / 415); // 415-byte records
    for (k, v) in &state {
        assert_eq!(store.get(k.as_bytes()).unwrap().as_ref(), Some(v), "{k}");
    }
    store.audit().unwrap();
    store.close().unwrap();
}

#[test]
fn open_rejects_mismatched_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), ValueBackend::HashKv);
    {
        let store = Store::open(config.clone()).unwrap();
        store.close().unwrap();
    }
    let mut other = config;
    other.main_segment_bytes *= 2;
    assert!(matches!(
        Store::open(other),
        Err(hashkv::Error::IncompatibleStore(_))
    ));
}

#[test]
fn hotness_tagging_moves_cold_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path(), ValueBackend::HashKv);
    config.hotness_awareness = true;
    config.cold_log_bytes = Some(1 << 20);
    let store = Store::open(config).unwrap();
    // Insert once (cold) and update a subset (hot).
    for i in 0..200u32 {
        store.put(format!("key{i:04}").as_bytes(), &vec![1u8; 300]).unwrap();
    }
    for _ in 0..5 {
        for i in 0..40u32 {
            store.put(format!("key{i:04}").as_bytes(), &vec![2u8; 300]).unwrap();
        }
    }
    store.flush().unwrap();
    let stats = store.force_gc().unwrap();
    assert_eq!(stats.lsm_lookups, 0);
    assert!(stats.cold_bytes_moved > 0, "cold values should migrate");
    // Every key still readable, hot and cold alike.
    for i in 0..200u32 {
        let key = format!("key{i:04}");
        let want = if i < 40 { vec![2u8; 300] } else { vec![1u8; 300] };
        assert_eq!(store.get(key.as_bytes()).unwrap(), Some(want), "{key}");
    }
    store.audit().unwrap();
    store.close().unwrap();
}
