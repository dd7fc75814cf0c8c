//! Executes workload phases against a store and turns counter deltas into
//! phase reports.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use hashkv::io::Component;
use hashkv::lsm::ScanLimit;
use hashkv::metrics::{LatencyHistogram, StoreMetrics, PHASE_COUNT};
use hashkv::store::Store;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::report::{GcCounters, GroupDistribution, PhaseReport};
use crate::workload::{value_bytes, value_len, KeyDist, KeyGen, OpMix, PairSize, PhaseSpec, Zipf};

pub struct Bench {
    pub store: Store,
    pub keygen: KeyGen,
    pub seed: u64,
    /// Keys inserted so far; updates and reads draw from `0..population`.
    pub population: u64,
    pub op_serial: u64,
    phase_counter: u64,
    /// Concurrent client contexts for phases without inserts; 1 keeps the
    /// operation sequence deterministic.
    pub clients: usize,
}

impl Bench {
    pub fn new(store: Store, seed: u64, key_len: usize) -> Bench {
        Bench {
            store,
            keygen: KeyGen::new(seed, key_len),
            seed,
            population: 0,
            op_serial: 0,
            phase_counter: 0,
            clients: 1,
        }
    }

    fn phase_seed(&mut self) -> u64 {
        self.phase_counter += 1;
        self.seed ^ self.phase_counter.wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Snapshot {
    written_value: u64,
    written_lsm: u64,
    written_journal: u64,
    written_checkpoint: u64,
    breakdown: [u64; PHASE_COUNT],
    gc_ops: u64,
    gc_lookups: u64,
    gc_scanned: u64,
    gc_rewritten: u64,
    gc_freed: u64,
    gc_index_updates: u64,
    cold_moved: u64,
    cold_ops: u64,
    cold_lookups: u64,
    vlog_ops: u64,
    vlog_lookups: u64,
    vlog_scanned: u64,
    vlog_rewritten: u64,
    flushes: u64,
    flush_batches: u64,
    compactions: u64,
    compaction_read: u64,
    compaction_written: u64,
    inline_records: u64,
    separated_bytes: u64,
}

impl Snapshot {
    fn take(m: &StoreMetrics) -> Snapshot {
        Snapshot {
            written_value: m.io.written(Component::ValueStore),
            written_lsm: m.io.written(Component::Lsm),
            written_journal: m.io.written(Component::Journal),
            written_checkpoint: m.io.written(Component::Checkpoint),
            breakdown: m.breakdown.snapshot(),
            gc_ops: m.gc_ops.load(Ordering::Relaxed),
            gc_lookups: m.gc_lsm_lookups.load(Ordering::Relaxed),
            gc_scanned: m.gc_bytes_scanned.load(Ordering::Relaxed),
            gc_rewritten: m.gc_bytes_rewritten.load(Ordering::Relaxed),
            gc_freed: m.gc_segments_freed.load(Ordering::Relaxed),
            gc_index_updates: m.gc_index_updates.load(Ordering::Relaxed),
            cold_moved: m.gc_cold_bytes_moved.load(Ordering::Relaxed),
            cold_ops: m.cold_gc_ops.load(Ordering::Relaxed),
            cold_lookups: m.cold_gc_lookups.load(Ordering::Relaxed),
            vlog_ops: m.vlog_gc_ops.load(Ordering::Relaxed),
            vlog_lookups: m.vlog_gc_lookups.load(Ordering::Relaxed),
            vlog_scanned: m.vlog_gc_bytes_scanned.load(Ordering::Relaxed),
            vlog_rewritten: m.vlog_gc_bytes_rewritten.load(Ordering::Relaxed),
            flushes: m.flushes.load(Ordering::Relaxed),
            flush_batches: m.flush_batches.load(Ordering::Relaxed),
            compactions: m.compactions.load(Ordering::Relaxed),
            compaction_read: m.compaction_bytes_read.load(Ordering::Relaxed),
            compaction_written: m.compaction_bytes_written.load(Ordering::Relaxed),
            inline_records: m.inline_records.load(Ordering::Relaxed),
            separated_bytes: m.separated_bytes.load(Ordering::Relaxed),
        }
    }
}

fn total_gc_ops(m: &StoreMetrics) -> u64 {
    m.gc_ops.load(Ordering::Relaxed)
        + m.cold_gc_ops.load(Ordering::Relaxed)
        + m.vlog_gc_ops.load(Ordering::Relaxed)
}

fn distribution(store: &Store) -> Option<GroupDistribution> {
    let counts = store.group_record_counts()?;
    if counts.is_empty() {
        return None;
    }
    let total: u64 = counts.iter().sum();
    let mean = total as f64 / counts.len() as f64;
    if mean == 0.0 {
        return None;
    }
    let max_dev =
        counts.iter().map(|&c| (c as f64 - mean).abs() / mean).fold(0.0f64, f64::max);
    Some(GroupDistribution {
        groups: counts.len(),
        min_records: *counts.iter().min().unwrap(),
        max_records: *counts.iter().max().unwrap(),
        mean_records: mean,
        max_deviation_pct: max_dev * 100.0,
    })
}

/// Shared per-client op loop. Returns (ops, logical bytes, next insert
/// cursor, scan requests, scan bytes).
struct ClientOutcome {
    ops: u64,
    logical: u64,
    insert_cursor: u64,
    scan_requests: u64,
    scan_bytes: u64,
}

#[allow(clippy::too_many_arguments)]
fn exec_ops(
    store: &Store,
    keygen: &KeyGen,
    spec: &PhaseSpec,
    population: u64,
    mut insert_cursor: u64,
    rng_seed: u64,
    op_serial_base: u64,
    volume_budget: Option<u64>,
    op_budget: Option<u64>,
    hist: &LatencyHistogram,
    first_gc: &AtomicU64,
    metrics: &StoreMetrics,
    gc_before: u64,
) -> hashkv::Result<ClientOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let zipf = match spec.dist {
        KeyDist::HashedOrder => None,
        KeyDist::Zipfian { theta } | KeyDist::Latest { theta } => {
            Some(Zipf::new(population.max(1) as usize, theta))
        }
    };
    let size_zipf = match &spec.pair_size {
        PairSize::ZipfClasses { classes, theta } => Some(Zipf::new(classes.len(), *theta)),
        _ => None,
    };
    let key_len = keygen.key_len;
    let mix = spec.mix;
    let thresholds = [
        mix.insert,
        mix.insert + mix.update,
        mix.insert + mix.update + mix.read,
        mix.insert + mix.update + mix.read + mix.read_modify_write,
    ];

    let mut live_population = population;
    let mut ops = 0u64;
    let mut logical = 0u64;
    let mut scan_requests = 0u64;
    let mut scan_bytes = 0u64;

    loop {
        if let Some(v) = volume_budget {
            if logical >= v {
                break;
            }
        }
        if let Some(n) = op_budget {
            if ops >= n {
                break;
            }
        }
        let op_serial = op_serial_base + ops;
        let dice: f64 = rng.gen();
        let op_start = Instant::now();
        if dice < thresholds[0] {
            let index = insert_cursor;
            insert_cursor += 1;
            let pair = pick_pair_size(spec, index, size_zipf.as_ref(), &mut rng);
            let key = keygen.key(index);
            let value = value_bytes(value_len(pair, key_len), index, op_serial);
            store.put(&key, &value)?;
            logical += pair as u64;
            live_population = live_population.max(insert_cursor);
        } else if dice < thresholds[1] {
            let index = pick_existing(live_population, spec.dist, zipf.as_ref(), &mut rng);
            let pair = pick_pair_size(spec, index, size_zipf.as_ref(), &mut rng);
            let key = keygen.key(index);
            let value = value_bytes(value_len(pair, key_len), index, op_serial);
            store.put(&key, &value)?;
            logical += pair as u64;
        } else if dice < thresholds[2] {
            let index = pick_existing(live_population, spec.dist, zipf.as_ref(), &mut rng);
            let _ = store.get(&keygen.key(index))?;
        } else if dice < thresholds[3] {
            let index = pick_existing(live_population, spec.dist, zipf.as_ref(), &mut rng);
            let pair = pick_pair_size(spec, index, size_zipf.as_ref(), &mut rng);
            let key = keygen.key(index);
            let _ = store.get(&key)?;
            let value = value_bytes(value_len(pair, key_len), index, op_serial);
            store.put(&key, &value)?;
            logical += pair as u64;
        } else {
            let index = pick_existing(live_population, spec.dist, zipf.as_ref(), &mut rng);
            let got = store.scan(&keygen.key(index), ScanLimit::Count(spec.scan_count))?;
            scan_requests += 1;
            scan_bytes +=
                got.iter().map(|(k, v)| 8 + k.len() as u64 + v.len() as u64).sum::<u64>();
        }
        hist.record(op_start.elapsed().as_nanos() as u64);
        ops += 1;
        if first_gc.load(Ordering::Relaxed) == 0 && total_gc_ops(metrics) > gc_before {
            let _ = first_gc.compare_exchange(0, ops, Ordering::Relaxed, Ordering::Relaxed);
        }
    }
    Ok(ClientOutcome { ops, logical, insert_cursor, scan_requests, scan_bytes })
}

fn pick_existing(
    population: u64,
    dist: KeyDist,
    zipf: Option<&Zipf>,
    rng: &mut ChaCha8Rng,
) -> u64 {
    let population = population.max(1);
    match dist {
        KeyDist::HashedOrder => rng.gen_range(0..population),
        KeyDist::Zipfian { .. } => {
            let rank = zipf.unwrap().sample(rng) as u64;
            rank.min(population - 1)
        }
        KeyDist::Latest { .. } => {
            let rank = zipf.unwrap().sample(rng) as u64;
            population - 1 - rank.min(population - 1)
        }
    }
}

fn pick_pair_size(
    spec: &PhaseSpec,
    key_index: u64,
    size_zipf: Option<&Zipf>,
    rng: &mut ChaCha8Rng,
) -> u32 {
    match &spec.pair_size {
        PairSize::Fixed(s) => *s,
        PairSize::PerKeyClasses(classes) => classes[(key_index % classes.len() as u64) as usize],
        PairSize::ZipfClasses { classes, .. } => classes[size_zipf.unwrap().sample(rng)],
    }
}

pub fn run_phase(bench: &mut Bench, spec: &PhaseSpec) -> hashkv::Result<PhaseReport> {
    spec.validate().map_err(hashkv::Error::InvalidArgument)?;
    let clients = bench.clients.max(1);
    if clients > 1 && (spec.mix.insert > 0.0) {
        return Err(hashkv::Error::InvalidArgument(
            "insert phases require a single client (population order matters)".into(),
        ));
    }
    let metrics = bench.store.metrics().clone();
    let before = Snapshot::take(&metrics);
    let gc_before = total_gc_ops(&metrics);
    let hist = LatencyHistogram::new();
    let first_gc = AtomicU64::new(0);
    let phase_seed = bench.phase_seed();

    let mut total_ops = 0u64;
    let mut total_logical = 0u64;
    let mut scan_requests = 0u64;
    let mut scan_bytes = 0u64;
    let started = Instant::now();

    if clients == 1 {
        let outcome = exec_ops(
            &bench.store,
            &bench.keygen,
            spec,
            bench.population,
            bench.population,
            phase_seed,
            bench.op_serial,
            spec.volume_bytes,
            spec.op_count,
            &hist,
            &first_gc,
            &metrics,
            gc_before,
        )?;
        total_ops = outcome.ops;
        total_logical = outcome.logical;
        scan_requests = outcome.scan_requests;
        scan_bytes = outcome.scan_bytes;
        bench.population = bench.population.max(outcome.insert_cursor);
    } else {
        let volume_each = spec.volume_bytes.map(|v| v.div_ceil(clients as u64));
        let ops_each = spec.op_count.map(|n| n.div_ceil(clients as u64));
        let results = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for client in 0..clients {
                let store = &bench.store;
                let keygen = &bench.keygen;
                let hist = &hist;
                let first_gc = &first_gc;
                let metrics = &metrics;
                let population = bench.population;
                let op_serial = bench.op_serial + client as u64 * (1 << 40);
                handles.push(scope.spawn(move || {
                    exec_ops(
                        store,
                        keygen,
                        spec,
                        population,
                        population,
                        phase_seed ^ (client as u64 + 1).wrapping_mul(0x2545_f491_4f6c_dd1d),
                        op_serial,
                        volume_each,
                        ops_each,
                        hist,
                        first_gc,
                        metrics,
                        gc_before,
                    )
                }));
            }
            handles.into_iter().map(|h| h.join().expect("client thread")).collect::<Vec<_>>()
        });
        for result in results {
            let outcome = result?;
            total_ops += outcome.ops;
            total_logical += outcome.logical;
            scan_requests += outcome.scan_requests;
            scan_bytes += outcome.scan_bytes;
        }
    }

    // Fold the cached tail into the phase so write accounting is complete.
    bench.store.flush()?;
    bench.op_serial += total_ops;
    let elapsed = started.elapsed().as_secs_f64();
    let fg = first_gc.load(Ordering::Relaxed);
    Ok(build_report(
        bench,
        spec.name.clone(),
        before,
        &metrics,
        BuildArgs {
            ops: total_ops,
            elapsed,
            logical: total_logical,
            hist: &hist,
            first_gc: if fg == 0 { None } else { Some(fg) },
            scan_requests,
            scan_bytes,
            read_ahead: None,
        },
    ))
}

struct BuildArgs<'a> {
    ops: u64,
    elapsed: f64,
    logical: u64,
    hist: &'a LatencyHistogram,
    first_gc: Option<u64>,
    scan_requests: u64,
    scan_bytes: u64,
    read_ahead: Option<bool>,
}

fn build_report(
    bench: &Bench,
    phase: String,
    before: Snapshot,
    metrics: &StoreMetrics,
    args: BuildArgs<'_>,
) -> PhaseReport {
    let after = Snapshot::take(metrics);
    let device = (after.written_value - before.written_value)
        + (after.written_lsm - before.written_lsm)
        + (after.written_journal - before.written_journal)
        + (after.written_checkpoint - before.written_checkpoint);
    let breakdown_nanos: Vec<u64> =
        (0..PHASE_COUNT).map(|i| after.breakdown[i] - before.breakdown[i]).collect();
    let total_nanos: u64 = breakdown_nanos.iter().sum();
    let breakdown_pct: Vec<f64> = breakdown_nanos
        .iter()
        .map(|&n| if total_nanos == 0 { 0.0 } else { n as f64 * 100.0 / total_nanos as f64 })
        .collect();

    PhaseReport {
        phase,
        backend: bench.store.config().backend.name().to_string(),
        ops: args.ops,
        elapsed_secs: args.elapsed,
        ops_per_sec: if args.elapsed > 0.0 { args.ops as f64 / args.elapsed } else { 0.0 },
        logical_write_bytes: args.logical,
        device_write_bytes: device,
        write_amplification: if args.logical > 0 {
            device as f64 / args.logical as f64
        } else {
            0.0
        },
        write_bytes_value_store: after.written_value - before.written_value,
        write_bytes_lsm: after.written_lsm - before.written_lsm,
        write_bytes_journal: after.written_journal - before.written_journal,
        write_bytes_checkpoint: after.written_checkpoint - before.written_checkpoint,
        store_size_bytes: bench.store.store_size_bytes(),
        lat_p50_us: args.hist.percentile(0.50) as f64 / 1000.0,
        lat_p95_us: args.hist.percentile(0.95) as f64 / 1000.0,
        lat_p99_us: args.hist.percentile(0.99) as f64 / 1000.0,
        breakdown_pct,
        breakdown_nanos,
        gc: GcCounters {
            segment_gc_ops: after.gc_ops - before.gc_ops,
            segment_gc_lsm_lookups: after.gc_lookups - before.gc_lookups,
            segment_gc_bytes_scanned: after.gc_scanned - before.gc_scanned,
            segment_gc_bytes_rewritten: after.gc_rewritten - before.gc_rewritten,
            segment_gc_segments_freed: after.gc_freed - before.gc_freed,
            segment_gc_index_updates: after.gc_index_updates - before.gc_index_updates,
            cold_bytes_moved: after.cold_moved - before.cold_moved,
            cold_gc_ops: after.cold_ops - before.cold_ops,
            cold_gc_lookups: after.cold_lookups - before.cold_lookups,
            vlog_gc_ops: after.vlog_ops - before.vlog_ops,
            vlog_gc_lookups: after.vlog_lookups - before.vlog_lookups,
            vlog_gc_bytes_scanned: after.vlog_scanned - before.vlog_scanned,
            vlog_gc_bytes_rewritten: after.vlog_rewritten - before.vlog_rewritten,
        },
        flushes: after.flushes - before.flushes,
        flush_batches: after.flush_batches - before.flush_batches,
        compactions: after.compactions - before.compactions,
        compaction_bytes_read: after.compaction_read - before.compaction_read,
        compaction_bytes_written: after.compaction_written - before.compaction_written,
        inline_records: after.inline_records - before.inline_records,
        separated_bytes: after.separated_bytes - before.separated_bytes,
        first_gc_op_index: args.first_gc,
        utilization: bench.store.utilization(),
        distribution: distribution(&bench.store),
        scan_requests: args.scan_requests,
        scan_bytes: args.scan_bytes,
        read_ahead: args.read_ahead,
    }
}

/// Phase P0: inserts `volume_bytes` of distinct keys in hashed order.
pub fn run_load(
    bench: &mut Bench,
    volume_bytes: u64,
    pair_size: PairSize,
) -> hashkv::Result<PhaseReport> {
    let spec = PhaseSpec {
        name: "P0-load".into(),
        mix: OpMix::inserts_only(),
        dist: KeyDist::HashedOrder,
        pair_size,
        volume_bytes: Some(volume_bytes),
        op_count: None,
        scan_count: 0,
    };
    run_phase(bench, &spec)
}

/// Phases P1..Pn: `volume_bytes` of Zipfian updates over the loaded keys per
/// phase. The last phase is the steady-state headline.
pub fn run_update_phases(
    bench: &mut Bench,
    volume_bytes: u64,
    phases: usize,
    theta: f64,
    pair_size: PairSize,
) -> hashkv::Result<Vec<PhaseReport>> {
    let mut reports = Vec::with_capacity(phases);
    for p in 1..=phases {
        let spec = PhaseSpec {
            name: format!("P{p}-update"),
            mix: OpMix::updates_only(),
            dist: KeyDist::Zipfian { theta },
            pair_size: pair_size.clone(),
            volume_bytes: Some(volume_bytes),
            op_count: None,
            scan_count: 0,
        };
        reports.push(run_phase(bench, &spec)?);
    }
    Ok(reports)
}

/// One YCSB core workload over an already-aged store.
pub fn run_ycsb(
    bench: &mut Bench,
    workload: crate::workload::YcsbWorkload,
    ops: u64,
    pair_size: PairSize,
) -> hashkv::Result<PhaseReport> {
    let spec = PhaseSpec {
        name: format!("ycsb-{}", workload.name()),
        mix: workload.mix(),
        dist: workload.dist(),
        pair_size,
        volume_bytes: None,
        op_count: Some(ops),
        scan_count: 0,
    };
    run_phase(bench, &spec)
}

/// Scan benchmark: requests of `request_bytes` each, start keys Zipfian,
/// until `total_bytes` have been returned. With `cold_cache`, the value
/// store and LSM files are advised out of the page cache first.
pub fn run_scan_bench(
    bench: &mut Bench,
    pair_size: u32,
    request_bytes: u64,
    total_bytes: u64,
    read_ahead: bool,
    cold_cache: bool,
) -> hashkv::Result<PhaseReport> {
    let metrics = bench.store.metrics().clone();
    let before = Snapshot::take(&metrics);
    let hist = LatencyHistogram::new();
    let phase_seed = bench.phase_seed();
    let mut rng = ChaCha8Rng::seed_from_u64(phase_seed);
    let zipf = Zipf::new(bench.population.max(1) as usize, 0.99);
    let per_request = (request_bytes / pair_size as u64).max(1) as usize;

    bench.store.set_scan_read_ahead(read_ahead);
    if cold_cache {
        bench.store.evict_page_cache();
    }
    let mut scan_requests = 0u64;
    let mut scan_bytes = 0u64;
    let started = Instant::now();
    while scan_bytes < total_bytes {
        let rank = zipf.sample(&mut rng) as u64;
        let key = bench.keygen.key(rank.min(bench.population.saturating_sub(1)));
        let op_start = Instant::now();
        let got = bench.store.scan(&key, ScanLimit::Count(per_request))?;
        hist.record(op_start.elapsed().as_nanos() as u64);
        scan_requests += 1;
        scan_bytes += got.iter().map(|(k, v)| 8 + k.len() as u64 + v.len() as u64).sum::<u64>();
        if got.is_empty() {
            break;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let mut report = build_report(
        bench,
        format!("scan-{pair_size}B"),
        before,
        &metrics,
        BuildArgs {
            ops: scan_requests,
            elapsed,
            logical: 0,
            hist: &hist,
            first_gc: None,
            scan_requests,
            scan_bytes,
            read_ahead: Some(read_ahead),
        },
    );
    // Scan throughput is bytes per second rather than requests per second.
    report.ops_per_sec = if elapsed > 0.0 { scan_bytes as f64 / elapsed } else { 0.0 };
    Ok(report)
}
