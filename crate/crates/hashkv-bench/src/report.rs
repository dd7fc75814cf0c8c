//! Per-phase metrics reports and their table/CSV/JSON renderings.

use serde::{Deserialize, Serialize};

pub const BREAKDOWN_CATEGORIES: [&str; 6] =
    ["Cache", "Flush", "Meta-Flush", "GC-RW", "GC-Lookup", "Meta-GC"];

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct GcCounters {
    pub segment_gc_ops: u64,
    pub segment_gc_lsm_lookups: u64,
    pub segment_gc_bytes_scanned: u64,
    pub segment_gc_bytes_rewritten: u64,
    pub segment_gc_segments_freed: u64,
    pub segment_gc_index_updates: u64,
    pub cold_bytes_moved: u64,
    pub cold_gc_ops: u64,
    pub cold_gc_lookups: u64,
    pub vlog_gc_ops: u64,
    pub vlog_gc_lookups: u64,
    pub vlog_gc_bytes_scanned: u64,
    pub vlog_gc_bytes_rewritten: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct GroupDistribution {
    pub groups: usize,
    pub min_records: u64,
    pub max_records: u64,
    pub mean_records: f64,
    /// Largest |count - mean| / mean over all groups, in percent.
    pub max_deviation_pct: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct PhaseReport {
    pub phase: String,
    pub backend: String,
    pub ops: u64,
    pub elapsed_secs: f64,
    pub ops_per_sec: f64,
    /// Bytes the client logically wrote (encoded pair sizes).
    pub logical_write_bytes: u64,
    /// Bytes that reached the device, measured at the write-call layer.
    pub device_write_bytes: u64,
    pub write_amplification: f64,
    pub write_bytes_value_store: u64,
    pub write_bytes_lsm: u64,
    pub write_bytes_journal: u64,
    pub write_bytes_checkpoint: u64,
    pub store_size_bytes: u64,
    pub lat_p50_us: f64,
    pub lat_p95_us: f64,
    pub lat_p99_us: f64,
    /// Six-category latency breakdown in percent of the instrumented time.
    pub breakdown_pct: Vec<f64>,
    pub breakdown_nanos: Vec<u64>,
    pub gc: GcCounters,
    pub flushes: u64,
    pub flush_batches: u64,
    pub compactions: u64,
    pub compaction_bytes_read: u64,
    pub compaction_bytes_written: u64,
    pub inline_records: u64,
    pub separated_bytes: u64,
    /// 1-based index of the operation during which the first GC ran, if any.
    pub first_gc_op_index: Option<u64>,
    pub utilization: Option<f64>,
    pub distribution: Option<GroupDistribution>,
    pub scan_requests: u64,
    pub scan_bytes: u64,
    pub read_ahead: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub runs: Vec<PhaseReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Format, String> {
        match s {
            "table" => Ok(Format::Table),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

pub const CSV_COLUMNS: [&str; 33] = [
    "phase",
    "backend",
    "ops",
    "elapsed_secs",
    "ops_per_sec",
    "logical_write_bytes",
    "device_write_bytes",
    "write_amplification",
    "write_bytes_value_store",
    "write_bytes_lsm",
    "write_bytes_journal",
    "write_bytes_checkpoint",
    "store_size_bytes",
    "lat_p50_us",
    "lat_p95_us",
    "lat_p99_us",
    "pct_cache",
    "pct_flush",
    "pct_meta_flush",
    "pct_gc_rw",
    "pct_gc_lookup",
    "pct_meta_gc",
    "segment_gc_ops",
    "segment_gc_lsm_lookups",
    "vlog_gc_ops",
    "vlog_gc_lookups",
    "cold_gc_ops",
    "cold_gc_lookups",
    "flushes",
    "compactions",
    "first_gc_op_index",
    "utilization",
    "max_group_deviation_pct",
];

impl Report {
    pub fn push(&mut self, run: PhaseReport) {
        self.runs.push(run);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    pub fn from_json(text: &str) -> Result<Report, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for r in &self.runs {
            let pct = |i: usize| -> String { format!("{:.2}", r.breakdown_pct.get(i).copied().unwrap_or(0.0)) };
            let row = [
                r.phase.clone(),
                r.backend.clone(),
                r.ops.to_string(),
                format!("{:.3}", r.elapsed_secs),
                format!("{:.1}", r.ops_per_sec),
                r.logical_write_bytes.to_string(),
                r.device_write_bytes.to_string(),
                format!("{:.3}", r.write_amplification),
                r.write_bytes_value_store.to_string(),
                r.write_bytes_lsm.to_string(),
                r.write_bytes_journal.to_string(),
                r.write_bytes_checkpoint.to_string(),
                r.store_size_bytes.to_string(),
                format!("{:.1}", r.lat_p50_us),
                format!("{:.1}", r.lat_p95_us),
                format!("{:.1}", r.lat_p99_us),
                pct(0),
                pct(1),
                pct(2),
                pct(3),
                pct(4),
                pct(5),
                r.gc.segment_gc_ops.to_string(),
                r.gc.segment_gc_lsm_lookups.to_string(),
                r.gc.vlog_gc_ops.to_string(),
                r.gc.vlog_gc_lookups.to_string(),
                r.gc.cold_gc_ops.to_string(),
                r.gc.cold_gc_lookups.to_string(),
                r.flushes.to_string(),
                r.compactions.to_string(),
                r.first_gc_op_index.map(|i| i.to_string()).unwrap_or_default(),
                r.utilization.map(|u| format!("{u:.4}")).unwrap_or_default(),
                r.distribution
                    .as_ref()
                    .map(|d| format!("{:.3}", d.max_deviation_pct))
                    .unwrap_or_default(),
            ];
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for r in &self.runs {
            out.push_str(&format!(
                "== {} [{}] ==\n  ops {:>12}   {:>10.0} ops/s   elapsed {:.2} s\n",
                r.phase, r.backend, r.ops, r.ops_per_sec, r.elapsed_secs
            ));
            out.push_str(&format!(
                "  device writes {:>13} B   logical {:>13} B   amplification {:.3}\n",
                r.device_write_bytes, r.logical_write_bytes, r.write_amplification
            ));
            out.push_str(&format!(
                "    value store {:>12} B | lsm {:>12} B | journal {:>10} B | checkpoint {:>8} B\n",
                r.write_bytes_value_store,
                r.write_bytes_lsm,
                r.write_bytes_journal,
                r.write_bytes_checkpoint
            ));
            out.push_str(&format!(
                "  latency us p50 {:>8.1}  p95 {:>8.1}  p99 {:>8.1}   store size {} B\n",
                r.lat_p50_us, r.lat_p95_us, r.lat_p99_us, r.store_size_bytes
            ));
            out.push_str("  time breakdown:");
            for (name, pct) in BREAKDOWN_CATEGORIES.iter().zip(&r.breakdown_pct) {
                out.push_str(&format!("  {name} {pct:.1}%"));
            }
            out.push('\n');
            out.push_str(&format!(
                "  gc: segment ops {} (lookups {}), vlog ops {} (lookups {}), cold ops {} (lookups {})\n",
                r.gc.segment_gc_ops,
                r.gc.segment_gc_lsm_lookups,
                r.gc.vlog_gc_ops,
                r.gc.vlog_gc_lookups,
                r.gc.cold_gc_ops,
                r.gc.cold_gc_lookups
            ));
            out.push_str(&format!(
                "      scanned {} B, rewritten {} B, segments freed {}, cold moved {} B\n",
                r.gc.segment_gc_bytes_scanned + r.gc.vlog_gc_bytes_scanned,
                r.gc.segment_gc_bytes_rewritten + r.gc.vlog_gc_bytes_rewritten,
                r.gc.segment_gc_segments_freed,
                r.gc.cold_bytes_moved
            ));
            if let Some(first) = r.first_gc_op_index {
                out.push_str(&format!("  first gc at op {first}\n"));
            }
            if let Some(u) = r.utilization {
                out.push_str(&format!("  storage utilization {:.2}%\n", u * 100.0));
            }
            if let Some(d) = &r.distribution {
                out.push_str(&format!(
                    "  group records: {} groups, min {} / mean {:.0} / max {}, max deviation {:.2}%\n",
                    d.groups, d.min_records, d.mean_records, d.max_records, d.max_deviation_pct
                ));
            }
            if r.scan_requests > 0 {
                out.push_str(&format!(
                    "  scans: {} requests, {} B returned, read-ahead {}\n",
                    r.scan_requests,
                    r.scan_bytes,
                    match r.read_ahead {
                        Some(true) => "on",
                        Some(false) => "off",
                        None => "default",
                    }
                ));
            }
        }
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Table => self.to_table(),
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PhaseReport {
        PhaseReport {
            phase: "P1".into(),
            backend: "hashkv".into(),
            ops: 1000,
            elapsed_secs: 2.0,
            ops_per_sec: 500.0,
            logical_write_bytes: 1 << 20,
            device_write_bytes: 3 << 20,
            write_amplification: 3.0,
            breakdown_pct: vec![10.0, 40.0, 20.0, 20.0, 0.0, 10.0],
            breakdown_nanos: vec![1, 4, 2, 2, 0, 1],
            first_gc_op_index: Some(77),
            utilization: Some(0.97),
            ..Default::default()
        }
    }

    #[test]
    fn json_round_trip() {
        let mut report = Report::default();
        report.push(sample());
        let text = report.to_json();
        let back = Report::from_json(&text).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn csv_has_one_row_per_phase() {
        let mut report = Report::default();
        report.push(sample());
        let mut second = sample();
        second.phase = "P2".into();
        second.backend = "vlog".into();
        report.push(second);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), CSV_COLUMNS.len());
        assert!(lines[1].starts_with("P1,hashkv,"));
        assert!(lines[2].starts_with("P2,vlog,"));
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), CSV_COLUMNS.len());
        }
    }

    #[test]
    fn table_breakdown_sums_to_hundred() {
        let mut report = Report::default();
        report.push(sample());
        let table = report.to_table();
        assert!(table.contains("time breakdown:"));
        let total: f64 = sample().breakdown_pct.iter().sum();
        assert!((total - 100.0).abs() <= 0.5);
    }
}
