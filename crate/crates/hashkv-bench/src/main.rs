//! Benchmark CLI: load / update / ycsb / scan / all experiment phases over a
//! chosen value backend, reporting ops/s, device write sizes, write
//! amplification, latency percentiles and breakdown, and GC counters.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hashkv::config::StoreConfig;
use hashkv::store::Store;
use hashkv_bench::report::{Format, PhaseReport, Report};
use hashkv_bench::runner::{self, Bench};
use hashkv_bench::workload::{PairSize, YcsbWorkload};

#[derive(Parser)]
#[command(
    name = "hashkv-bench",
    about = "Workload driver for the hashkv store and its vlog/inline baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Store directory (created if missing).
    #[arg(long, default_value = "hashkv-bench-data")]
    dir: PathBuf,
    /// Value backend: hashkv, vlog, or inline.
    #[arg(long, default_value = "hashkv")]
    backend: String,
    /// Optional `key = value` store config file applied before flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Nominal value-store size in bytes (desk-scale default: 2 GiB).
    #[arg(long, default_value_t = 2 << 30)]
    store_bytes: u64,
    /// Logical bytes per phase; defaults to the store size.
    #[arg(long)]
    phase_bytes: Option<u64>,
    /// Total encoded pair size in bytes (8-byte header + key + value).
    #[arg(long, default_value_t = 1024)]
    pair_size: u32,
    /// Comma-separated pair-size classes assigned per key (e.g. "40,1024").
    /// Overrides --pair-size.
    #[arg(long)]
    pair_classes: Option<String>,
    /// Draw pair sizes from a Zipf distribution over --pair-classes.
    #[arg(long, default_value_t = false)]
    pair_zipf: bool,
    #[arg(long, default_value_t = 0.99)]
    zipf_theta: f64,
    #[arg(long, default_value_t = 0.30)]
    reserved_frac: f64,
    /// greedy, cba, gra, or random.
    #[arg(long, default_value = "greedy")]
    gc_policy: String,
    #[arg(long, default_value_t = 5)]
    gra_d: usize,
    /// on/off.
    #[arg(long, default_value = "off")]
    hotness: String,
    /// Cold data log capacity in bytes, or "unlimited".
    #[arg(long)]
    cold_log_bytes: Option<String>,
    #[arg(long, default_value_t = 192)]
    selective_threshold: u32,
    /// on/off.
    #[arg(long, default_value = "on")]
    journal: String,
    #[arg(long, default_value_t = 24)]
    key_len: usize,
    /// Concurrent client contexts (phases with inserts require 1).
    #[arg(long, default_value_t = 1)]
    clients: usize,
    #[arg(long)]
    main_segment_bytes: Option<u64>,
    #[arg(long)]
    log_segment_bytes: Option<u64>,
    #[arg(long)]
    write_cache_bytes: Option<usize>,
    #[arg(long)]
    batch_threshold_bytes: Option<usize>,
    /// table, csv, or json.
    #[arg(long, default_value = "table")]
    format: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 2 if the run violates its built-in checks.
    #[arg(long, default_value_t = false)]
    assert: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Phase P0: load distinct keys in hashed order into an empty store.
    Load(Common),
    /// Phases P1..Pn: Zipfian updates over the loaded population.
    Update {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        phases: usize,
    },
    /// One YCSB core workload (A, B, C, D, or F) over the aged store.
    Ycsb {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        workload: String,
        /// Operation count; defaults to phase-bytes / pair-size.
        #[arg(long)]
        ops: Option<u64>,
    },
    /// Range-scan benchmark with a read-ahead on/off toggle.
    Scan {
        #[command(flatten)]
        common: Common,
        /// Bytes of pairs per scan request.
        #[arg(long, default_value_t = 1 << 20)]
        scan_request_bytes: u64,
        /// Total bytes to scan.
        #[arg(long)]
        total_scan_bytes: Option<u64>,
        /// on/off.
        #[arg(long, default_value = "on")]
        read_ahead: String,
        /// Drop the page cache before scanning.
        #[arg(long, default_value_t = false)]
        cold_cache: bool,
        /// Run a manual full compaction before scanning.
        #[arg(long, default_value_t = false)]
        compact_first: bool,
    },
    /// Load, three update phases, the YCSB workloads, and a scan pass.
    All {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        phases: usize,
    },
    /// Print the effective store configuration and exit.
    DescribeConfig(Common),
}

/// Bench bookkeeping persisted next to the store so later subcommands know
/// the population and key layout.
#[derive(Serialize, Deserialize)]
struct BenchMeta {
    seed: u64,
    key_len: usize,
    population: u64,
    op_serial: u64,
}

fn meta_path(dir: &PathBuf) -> PathBuf {
    dir.join("BENCH_META.json")
}

fn load_meta(dir: &PathBuf) -> Option<BenchMeta> {
    let text = std::fs::read_to_string(meta_path(dir)).ok()?;
    serde_json::from_str(&text).ok()
}

fn save_meta(dir: &PathBuf, bench: &Bench) -> std::io::Result<()> {
    let meta = BenchMeta {
        seed: bench.seed,
        key_len: bench.keygen.key_len,
        population: bench.population,
        op_serial: bench.op_serial,
    };
    std::fs::write(meta_path(dir), serde_json::to_string_pretty(&meta).unwrap())
}

fn build_config(common: &Common) -> Result<StoreConfig, String> {
    let mut config = StoreConfig::sized(&common.dir, common.store_bytes);
    if let Some(path) = &common.config {
        config.apply_file(path).map_err(|e| e.to_string())?;
    }
    config.apply_env().map_err(|e| e.to_string())?;
    config.backend = common.backend.parse().map_err(|e: hashkv::Error| e.to_string())?;
    config.seed = common.seed;
    config.reserved_fraction = common.reserved_frac;
    config.gc_policy = common.gc_policy.parse().map_err(|e: hashkv::Error| e.to_string())?;
    config.gra_d = common.gra_d;
    config.hotness_awareness = parse_onoff("hotness", &common.hotness)?;
    config.journaling = parse_onoff("journal", &common.journal)?;
    config.selective_threshold_bytes = common.selective_threshold;
    if let Some(v) = &common.cold_log_bytes {
        config.cold_log_bytes = if v == "unlimited" {
            None
        } else {
            Some(v.parse().map_err(|_| format!("bad --cold-log-bytes {v:?}"))?)
        };
    }
    if let Some(v) = common.main_segment_bytes {
        config.main_segment_bytes = v;
    }
    if let Some(v) = common.log_segment_bytes {
        config.log_segment_bytes = v;
    }
    if let Some(v) = common.write_cache_bytes {
        config.write_cache_bytes = v;
    }
    if let Some(v) = common.batch_threshold_bytes {
        config.batch_write_threshold_bytes = v;
    }
    Ok(config)
}

fn parse_onoff(flag: &str, v: &str) -> Result<bool, String> {
    match v {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("--{flag} must be on or off, got {other:?}")),
    }
}

fn pair_size_spec(common: &Common) -> Result<PairSize, String> {
    match &common.pair_classes {
        None => Ok(PairSize::Fixed(common.pair_size)),
        Some(text) => {
            let classes: Result<Vec<u32>, _> =
                text.split(',').map(|s| s.trim().parse::<u32>()).collect();
            let classes = classes.map_err(|_| format!("bad --pair-classes {text:?}"))?;
            if classes.is_empty() {
                return Err("--pair-classes is empty".into());
            }
            if common.pair_zipf {
                Ok(PairSize::ZipfClasses { classes, theta: common.zipf_theta })
            } else {
                Ok(PairSize::PerKeyClasses(classes))
            }
        }
    }
}

fn open_bench(common: &Common) -> Result<Bench, String> {
    let config = build_config(common)?;
    let store = Store::open(config).map_err(|e| e.to_string())?;
    let mut bench = Bench::new(store, common.seed, common.key_len);
    bench.clients = common.clients;
    if let Some(meta) = load_meta(&common.dir) {
        if meta.seed != common.seed || meta.key_len != common.key_len {
            return Err(format!(
                "store at {} was benched with seed {} and key length {}; rerun with those or a fresh dir",
                common.dir.display(),
                meta.seed,
                meta.key_len
            ));
        }
        bench.population = meta.population;
        bench.op_serial = meta.op_serial;
    }
    Ok(bench)
}

fn emit(report: &Report, common: &Common) -> Result<(), String> {
    let format: Format = common.format.parse()?;
    let text = report.render(format);
    match &common.out {
        None => print!("{text}"),
        Some(path) => std::fs::write(path, text).map_err(|e| e.to_string())?,
    }
    Ok(())
}

/// Built-in sanity checks behind --assert; violations exit with status 2.
fn check_asserts(report: &Report, common: &Common) -> Vec<String> {
    let mut violations = Vec::new();
    for run in &report.runs {
        if run.phase.starts_with("P0-load") {
            let total_gc = run.gc.segment_gc_ops + run.gc.vlog_gc_ops + run.gc.cold_gc_ops;
            if total_gc > 0 {
                violations.push(format!("load phase triggered {total_gc} GC operations"));
            }
            if run.backend == "hashkv" && !(1.0..3.0).contains(&run.write_amplification) {
                violations.push(format!(
                    "load write amplification {:.3} outside (1, 3)",
                    run.write_amplification
                ));
            }
            if let Some(d) = &run.distribution {
                if d.mean_records >= 10_000.0 && d.max_deviation_pct > 2.5 {
                    violations.push(format!(
                        "per-group record counts deviate {:.2}% from the mean",
                        d.max_deviation_pct
                    ));
                }
            }
        }
        if run.phase.contains("update") {
            if run.backend == "hashkv" && run.gc.segment_gc_lsm_lookups > 0 {
                violations.push(format!(
                    "segment GC performed {} index lookups",
                    run.gc.segment_gc_lsm_lookups
                ));
            }
            if run.backend == "hashkv" {
                if let Some(u) = run.utilization {
                    if u < 0.95 {
                        violations
                            .push(format!("storage utilization {:.2}% below 95%", u * 100.0));
                    }
                }
            }
        }
        if run.phase == "ycsb-C" {
            let total_gc = run.gc.segment_gc_ops + run.gc.vlog_gc_ops + run.gc.cold_gc_ops;
            if total_gc > 0 {
                violations.push(format!("read-only workload triggered {total_gc} GCs"));
            }
        }
    }
    violations
}

fn run() -> Result<Report, String> {
    let cli = Cli::parse();
    match cli.command {
        Command::DescribeConfig(common) => {
            let config = build_config(&common)?;
            print!("{}", config.describe());
            Ok(Report::default())
        }
        Command::Load(common) => {
            let mut bench = open_bench(&common)?;
            let pair = pair_size_spec(&common)?;
            let volume = common.phase_bytes.unwrap_or(common.store_bytes);
            let run = runner::run_load(&mut bench, volume, pair).map_err(|e| e.to_string())?;
            save_meta(&common.dir, &bench).map_err(|e| e.to_string())?;
            bench.store.close().map_err(|e| e.to_string())?;
            finish(vec![run], &common)
        }
        Command::Update { common, phases } => {
            let mut bench = open_bench(&common)?;
            if bench.population == 0 {
                return Err("store has no loaded keys; run `load` first".into());
            }
            let pair = pair_size_spec(&common)?;
            let volume = common.phase_bytes.unwrap_or(common.store_bytes);
            let runs =
                runner::run_update_phases(&mut bench, volume, phases, common.zipf_theta, pair)
                    .map_err(|e| e.to_string())?;
            save_meta(&common.dir, &bench).map_err(|e| e.to_string())?;
            bench.store.close().map_err(|e| e.to_string())?;
            finish(runs, &common)
        }
        Command::Ycsb { common, workload, ops } => {
            let mut bench = open_bench(&common)?;
            if bench.population == 0 {
                return Err("store has no loaded keys; run `load` (and `update`) first".into());
            }
            let workload: YcsbWorkload = workload.parse()?;
            let pair = pair_size_spec(&common)?;
            let ops = ops.unwrap_or_else(|| {
                common.phase_bytes.unwrap_or(common.store_bytes) / common.pair_size as u64
            });
            let run =
                runner::run_ycsb(&mut bench, workload, ops, pair).map_err(|e| e.to_string())?;
            save_meta(&common.dir, &bench).map_err(|e| e.to_string())?;
            bench.store.close().map_err(|e| e.to_string())?;
            finish(vec![run], &common)
        }
        Command::Scan {
            common,
            scan_request_bytes,
            total_scan_bytes,
            read_ahead,
            cold_cache,
            compact_first,
        } => {
            let mut bench = open_bench(&common)?;
            if bench.population == 0 {
                return Err("store has no loaded keys; run `load` first".into());
            }
            if compact_first {
                bench.store.compact_all().map_err(|e| e.to_string())?;
            }
            let read_ahead = parse_onoff("read-ahead", &read_ahead)?;
            let total = total_scan_bytes.unwrap_or(common.store_bytes / 4);
            let run = runner::run_scan_bench(
                &mut bench,
                common.pair_size,
                scan_request_bytes,
                total,
                read_ahead,
                cold_cache,
            )
            .map_err(|e| e.to_string())?;
            save_meta(&common.dir, &bench).map_err(|e| e.to_string())?;
            bench.store.close().map_err(|e| e.to_string())?;
            finish(vec![run], &common)
        }
        Command::All { common, phases } => {
            let mut bench = open_bench(&common)?;
            let pair = pair_size_spec(&common)?;
            let volume = common.phase_bytes.unwrap_or(common.store_bytes);
            let mut runs = Vec::new();
            runs.push(
                runner::run_load(&mut bench, volume, pair.clone()).map_err(|e| e.to_string())?,
            );
            runs.extend(
                runner::run_update_phases(
                    &mut bench,
                    volume,
                    phases,
                    common.zipf_theta,
                    pair.clone(),
                )
                .map_err(|e| e.to_string())?,
            );
            let ycsb_ops = volume / common.pair_size as u64 / 4;
            for w in
                [YcsbWorkload::A, YcsbWorkload::B, YcsbWorkload::C, YcsbWorkload::D, YcsbWorkload::F]
            {
                runs.push(
                    runner::run_ycsb(&mut bench, w, ycsb_ops, pair.clone())
                        .map_err(|e| e.to_string())?,
                );
            }
            for read_ahead in [true, false] {
                runs.push(
                    runner::run_scan_bench(
                        &mut bench,
                        common.pair_size,
                        1 << 20,
                        volume / 4,
                        read_ahead,
                        true,
                    )
                    .map_err(|e| e.to_string())?,
                );
            }
            save_meta(&common.dir, &bench).map_err(|e| e.to_string())?;
            bench.store.close().map_err(|e| e.to_string())?;
            finish(runs, &common)
        }
    }
}

fn finish(runs: Vec<PhaseReport>, common: &Common) -> Result<Report, String> {
    let report = Report { runs };
    emit(&report, common)?;
    if common.assert {
        let violations = check_asserts(&report, common);
        if !violations.is_empty() {
            for v in &violations {
                eprintln!("assertion violated: {v}");
            }
            return Err("__ASSERT__".into());
        }
    }
    Ok(report)
}

fn main() -> ExitCode {
    match run() {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) if e == "__ASSERT__" => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
