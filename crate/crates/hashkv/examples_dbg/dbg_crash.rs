use hashkv::config::{StoreConfig, ValueBackend};
use hashkv::io::FaultPlan;
use hashkv::store::Store;

fn crash_config(dir: &std::path::Path) -> StoreConfig {
    let mut c = StoreConfig::sized(dir, 2 << 20);
    c.backend = ValueBackend::HashKv;
    c.write_cache_bytes = 64 << 10;
    c.memtable_bytes = 64 << 10;
    c.journaling = true;
    c
}

fn put_batch(store: &Store, tag: u8, count: u32) {
    for i in 0..count {
        let key = format!("key{i:05}").into_bytes();
        let value = vec![tag; 300 + (i % 40) as usize];
        store.put(&key, &value).unwrap();
    }
}

fn main() {
    for k in 1..40u64 {
        let dir = tempfile::tempdir().unwrap();
        let fault = FaultPlan::inactive(k % 3 == 0);
        let mut config = crash_config(dir.path());
        config.fault = Some(fault.clone());
        let store = Store::open(config).unwrap();
        put_batch(&store, 1, 80);
        store.flush().unwrap();
        put_batch(&store, 1, 80);
        fault.arm(k);
        let res = store.flush();
        fault.disarm();
        drop(store);
        let reopened = Store::open(crash_config(dir.path())).unwrap();
        let got = reopened.get(b"key00000").unwrap();
        let desc = match &got {
            None => "none".to_string(),
            Some(v) => {
                let uniq: std::collections::HashSet<u8> = v.iter().copied().collect();
                format!("len {} content {:?}", v.len(), uniq)
            }
        };
        println!("k={k} torn={} flush={:?} replayed={} got={desc}", k % 3 == 0, res.is_ok(), reopened.recovery_report().replayed_flushes);
        if res.is_ok() { break; }
    }
}
