//! Crash-point sweeps over the journaled flush and GC sequences.
//!
//! Each scenario arms a fault plan that cuts the store's I/O off after N
//! write/sync events, reopens the directory without faults, and checks that
//! recovery leaves every key either fully at its pre-operation version or
//! fully at its post-operation version, with the full-store audit passing.
//! N sweeps from 1 until the operation completes without a fault.

use std::collections::BTreeMap;

use hashkv::config::{StoreConfig, ValueBackend};
use hashkv::io::FaultPlan;
use hashkv::store::Store;
use hashkv::Error;

type Model = BTreeMap<Vec<u8>, Option<Vec<u8>>>;

fn crash_config(dir: &std::path::Path, backend: ValueBackend) -> StoreConfig {
    let mut c = StoreConfig::sized(dir, 2 << 20);
    c.backend = backend;
    c.write_cache_bytes = 64 << 10;
    c.memtable_bytes = 64 << 10;
    c.journaling = true;
    c
}

fn check_atomic(store: &Store, pre: &Model, post: &Model) {
    for (key, pre_v) in pre {
        let post_v = post.get(key).unwrap_or(&None);
        let got = store.get(key).unwrap();
        assert!(
            got == *pre_v || got == *post_v,
            "key {:?}: got {:?}, want pre {:?} or post {:?}",
            String::from_utf8_lossy(key),
            got.as_ref().map(|v| v.len()),
            pre_v.as_ref().map(|v| v.len()),
            post_v.as_ref().map(|v| v.len()),
        );
    }
    for (key, post_v) in post {
        if !pre.contains_key(key) {
            let got = store.get(key).unwrap();
            assert!(got.is_none() || got == *post_v, "new key must be absent or fully written");
        }
    }
}

/// Sweeps crash points through `mutate`, returning how many distinct points
/// were exercised and how many recoveries replayed something.
///
/// `mutate` returns the state the operation commits to, plus the op result.
/// A crash after the journal commit legitimately recovers to the post state
/// even though the call returned an error, so per-key atomicity is always
/// checked against both models.
fn sweep(
    backend: ValueBackend,
    tweak: impl Fn(&mut StoreConfig),
    setup: impl Fn(&Store) -> Model,
    mutate: impl Fn(&Store) -> (Model, hashkv::Result<()>),
) -> (u64, u64) {
    let mut points = 0u64;
    let mut replays = 0u64;
    let mut k = 1u64;
    loop {
        let dir = tempfile::tempdir().unwrap();
        let fault = FaultPlan::inactive(k % 3 == 0); // every third point torn
        let mut config = crash_config(dir.path(), backend);
        tweak(&mut config);
        config.fault = Some(fault.clone());

        let store = Store::open(config).unwrap();
        let pre = setup(&store);
        fault.arm(k);
        let (post, result) = mutate(&store);
        fault.disarm();
        let survived = result.is_ok();
        drop(store);

        let mut reopen_config = crash_config(dir.path(), backend);
        tweak(&mut reopen_config);
        let reopened = Store::open(reopen_config).unwrap();
        let report = reopened.recovery_report();
        replays += report.replayed_flushes + report.replayed_gcs;
        reopened.audit().unwrap_or_else(|e| panic!("audit after crash point {k}: {e}"));
        check_atomic(&reopened, &pre, &post);
        if survived {
            // The op completed before the fault fired; we are done sweeping.
            reopened.close().unwrap();
            return (points, replays);
        }
        points += 1;
        reopened.close().unwrap();
        k += 1;
        assert!(k < 10_000, "crash sweep did not terminate");
    }
}

fn put_batch(store: &Store, tag: u8, count: u32) -> Model {
    let mut model = Model::new();
    for i in 0..count {
        let key = format!("key{i:05}").into_bytes();
        let value = vec![tag; 300 + (i % 40) as usize];
        store.put(&key, &value).unwrap();
        model.insert(key, Some(value));
    }
    model
}

#[test]
fn flush_crash_points_are_atomic() {
    let (points, replays) = sweep(
        ValueBackend::HashKv,
        |_| {},
        |store| {
            // Established durable state first.
            put_batch(store, 1, 80);
            store.flush().unwrap();
            put_batch(store, 1, 80)
        },
        |store| {
            let post = put_batch(store, 2, 80);
            let result = store.flush();
            (post, result)
        },
    );
    assert!(points >= 10, "only {points} crash points in the flush path");
    assert!(replays >= 1, "at least one point must land between commit and apply");
}

#[test]
fn gc_crash_points_preserve_all_values() {
    let (points, _) = sweep(
        ValueBackend::HashKv,
        |config| {
            // Few groups that spill well into log segments, so each GC
            // rewrites a meaningful extent and releases several segments.
            config.store_bytes = 256 << 10;
            config.main_segment_bytes = 64 << 10;
            config.log_segment_bytes = 8 << 10;
        },
        |store| {
            let mut model = put_batch(store, 1, 400);
            store.flush().unwrap();
            model.extend(put_batch(store, 2, 400));
            store.flush().unwrap();
            model
        },
        |store| {
            // GC is a semantic no-op: the post state equals the pre state.
            let mut model = Model::new();
            for i in 0..400u32 {
                let key = format!("key{i:05}").into_bytes();
                model.insert(key, Some(vec![2; 300 + (i % 40) as usize]));
            }
            let result = store.force_gc().map(|_| ());
            (model, result)
        },
    );
    assert!(points >= 5, "only {points} crash points in the GC path");
}

#[test]
fn hotness_gc_crash_points_cover_cold_moves() {
    let (points, _) = sweep(
        ValueBackend::HashKv,
        |config| {
            config.hotness_awareness = true;
            config.cold_log_bytes = Some(1 << 20);
            config.store_bytes = 256 << 10;
            config.main_segment_bytes = 64 << 10;
            config.log_segment_bytes = 8 << 10;
        },
        |store| {
            let mut model = put_batch(store, 1, 60);
            store.flush().unwrap();
            for i in 0..20u32 {
                let key = format!("key{i:05}").into_bytes();
                let value = vec![3u8; 300 + (i % 40) as usize];
                store.put(&key, &value).unwrap();
                model.insert(key, Some(value));
            }
            store.flush().unwrap();
            model
        },
        |store| {
            let mut model = Model::new();
            for i in 0..60u32 {
                let key = format!("key{i:05}").into_bytes();
                let tag = if i < 20 { 3u8 } else { 1u8 };
                model.insert(key, Some(vec![tag; 300 + (i % 40) as usize]));
            }
            let result = store.force_gc().map(|_| ());
            (model, result)
        },
    );
    assert!(points >= 5, "only {points} crash points in the hotness GC path");
}

#[test]
fn vlog_gc_crash_points_preserve_all_values() {
    let (points, _) = sweep(
        ValueBackend::Vlog,
        |_| {},
        |store| {
            let mut model = put_batch(store, 1, 60);
            store.flush().unwrap();
            model.extend(put_batch(store, 2, 60));
            store.flush().unwrap();
            model
        },
        |store| {
            let mut model = Model::new();
            for i in 0..60u32 {
                let key = format!("key{i:05}").into_bytes();
                model.insert(key, Some(vec![2; 300 + (i % 40) as usize]));
            }
            let result = store.force_gc().map(|_| ());
            (model, result)
        },
    );
    assert!(points >= 5, "only {points} crash points in the vlog GC path");
}

#[test]
fn crash_before_commit_discards_flush() {
    let dir = tempfile::tempdir().unwrap();
    let fault = FaultPlan::inactive(false);
    let mut config = crash_config(dir.path(), ValueBackend::HashKv);
    config.fault = Some(fault.clone());
    let store = Store::open(config).unwrap();
    put_batch(&store, 7, 50);
    fault.arm(1); // the very first value write fails
    assert!(matches!(store.flush(), Err(Error::Injected)));
    fault.disarm();
    drop(store);

    let reopened = Store::open(crash_config(dir.path(), ValueBackend::HashKv)).unwrap();
    assert_eq!(reopened.recovery_report().replayed_flushes, 0);
    for i in 0..50u32 {
        assert_eq!(reopened.get(format!("key{i:05}").as_bytes()).unwrap(), None);
    }
    reopened.audit().unwrap();
    reopened.close().unwrap();
}

#[test]
fn crash_after_commit_replays_flush() {
    // Find the first crash point at which the journal committed but the op
    // still failed: recovery must then replay exactly one flush and every
    // key must be visible.
    let mut k = 1u64;
    loop {
        let dir = tempfile::tempdir().unwrap();
        let fault = FaultPlan::inactive(false);
        let mut config = crash_config(dir.path(), ValueBackend::HashKv);
        config.fault = Some(fault.clone());
        let store = Store::open(config).unwrap();
        let model = put_batch(&store, 9, 50);
        fault.arm(k);
        let result = store.flush();
        fault.disarm();
        drop(store);

        let reopened = Store::open(crash_config(dir.path(), ValueBackend::HashKv)).unwrap();
        let replayed = reopened.recovery_report().replayed_flushes;
        if result.is_err() && replayed == 1 {
            for (key, value) in &model {
                assert_eq!(reopened.get(key).unwrap(), *value);
            }
            reopened.audit().unwrap();
            reopened.close().unwrap();
            return;
        }
        reopened.close().unwrap();
        if result.is_ok() {
            panic!("no crash point fell between commit and index apply");
        }
        k += 1;
        assert!(k < 10_000);
    }
}

#[test]
fn recovery_is_idempotent_under_double_crash() {
    // Crash a flush mid-way, then crash recovery itself at every point until
    // it completes; the final state must match a single clean recovery.
    let dir = tempfile::tempdir().unwrap();
    let fault = FaultPlan::inactive(false);
    let mut config = crash_config(dir.path(), ValueBackend::HashKv);
    config.fault = Some(fault.clone());
    let store = Store::open(config).unwrap();
    put_batch(&store, 1, 60);
    store.flush().unwrap();
    let model = put_batch(&store, 2, 60);
    fault.arm(25);
    let _ = store.flush();
    fault.disarm();
    drop(store);

    let mut j = 1u64;
    loop {
        let fault = FaultPlan::inactive(false);
        let mut config = crash_config(dir.path(), ValueBackend::HashKv);
        config.fault = Some(fault.clone());
        fault.arm(j);
        let result = Store::open(config);
        fault.disarm();
        match result {
            Ok(store) => {
                // Recovery completed despite the armed fault.
                store.audit().unwrap();
                for (i, (key, value)) in model.iter().enumerate() {
                    let len = value.as_ref().unwrap().len();
                    let pre = Some(vec![1u8; len]);
                    let got = store.get(key).unwrap();
                    assert!(got == *value || got == pre, "key {i}: unexpected value");
                }
                store.close().unwrap();
                break;
            }
            Err(_) => {
                j += 1;
                assert!(j < 10_000, "recovery never completed");
            }
        }
    }

    // One more clean open: nothing left to replay.
    let store = Store::open(crash_config(dir.path(), ValueBackend::HashKv)).unwrap();
    let report = store.recovery_report();
    assert_eq!(report.replayed_flushes + report.replayed_gcs, 0);
    store.audit().unwrap();
    store.close().unwrap();
}

#[test]
fn clean_close_leaves_empty_journals() {
    let dir = tempfile::tempdir().unwrap();
    let config = crash_config(dir.path(), ValueBackend::HashKv);
    let store = Store::open(config.clone()).unwrap();
    put_batch(&store, 5, 100);
    store.close().unwrap();
    assert_eq!(std::fs::metadata(dir.path().join("write_journal.dat")).unwrap().len(), 0);
    assert_eq!(std::fs::metadata(dir.path().join("gc_journal.dat")).unwrap().len(), 0);
    let store = Store::open(config).unwrap();
    let report = store.recovery_report();
    assert_eq!(report.replayed_flushes, 0);
    assert_eq!(report.replayed_gcs, 0);
    store.close().unwrap();
}
