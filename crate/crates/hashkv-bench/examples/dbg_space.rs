use hashkv::config::{StoreConfig, ValueBackend};
use hashkv::store::Store;
use hashkv_bench::runner::{self, Bench};
use hashkv_bench::workload::PairSize;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = StoreConfig::sized(dir.path(), 96 << 20);
    config.backend = ValueBackend::HashKv;
    config.journaling = false;
    config.log_segment_bytes = 64 << 10;
    config.selective_threshold_bytes = 0;
    let store = Store::open(config).unwrap();
    let mut bench = Bench::new(store, 42, 24);
    let classes = vec![40, 64, 128, 256, 512, 1024, 2048, 4096];
    let sizes = PairSize::ZipfClasses { classes, theta: 0.99 };
    let r = runner::run_load(&mut bench, 96 << 20, sizes.clone()).unwrap();
    println!("load ok: {} keys, util {:?}", r.ops, r.utilization);
    match runner::run_update_phases(&mut bench, 96 << 20, 1, 0.99, sizes) {
        Ok(rs) => println!("update ok: {} ops", rs[0].ops),
        Err(e) => {
            println!("update failed: {e}");
            let m = bench.store.metrics();
            use std::sync::atomic::Ordering;
            println!(
                "puts {} gc_ops {} scanned {}MB rewritten {}MB freed {}",
                m.puts.load(Ordering::Relaxed),
                m.gc_ops.load(Ordering::Relaxed),
                m.gc_bytes_scanned.load(Ordering::Relaxed) / (1 << 20),
                m.gc_bytes_rewritten.load(Ordering::Relaxed) / (1 << 20),
                m.gc_segments_freed.load(Ordering::Relaxed),
            );
            println!("util {:?}", bench.store.utilization());
        }
    }
}
