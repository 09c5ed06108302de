//! Per-method NMSE tables and the report files built from them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::to_db;
use crate::error::{Error, Result};
use crate::io::write_file;
use crate::slimming::PruneReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    pub snr_db: f64,
    pub nmse: f64,
    pub nmse_db: f64,
}

impl SnrPoint {
    pub fn new(snr_db: f64, nmse: f64) -> Self {
        Self {
            snr_db,
            nmse,
            nmse_db: to_db(nmse),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub points: Vec<SnrPoint>,
    /// Learnable parameters (0 for model-free estimators).
    pub params: usize,
    pub macs: u64,
    pub seconds: f64,
}

impl MetricsRecord {
    pub fn at(&self, snr_db: f64) -> Option<&SnrPoint> {
        self.points.iter().find(|p| p.snr_db == snr_db)
    }

    /// Mean of the per-SNR dB values.
    pub fn mean_db(&self) -> f64 {
        self.points.iter().map(|p| p.nmse_db).sum::<f64>() / self.points.len().max(1) as f64
    }
}

/// Method label for a pruned-and-refined network.
pub fn prince_method(ratio: f64) -> String {
    format!("PRINCE@{ratio}")
}

/// Inverse of [`prince_method`].
pub fn prince_ratio(method: &str) -> Option<f64> {
    method.strip_prefix("PRINCE@")?.parse().ok()
}

pub const AMP_DCNN: &str = "AMP-DCNN";

#[derive(Serialize, Deserialize)]
struct CsvRow {
    method: String,
    snr_db: f64,
    nmse_db: f64,
    params: usize,
    macs: u64,
    seconds: f64,
    nmse: f64,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("metrics csv: {e}"))
}

/// One row per method and SNR.
pub fn metrics_csv(records: &[MetricsRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        for p in &r.points {
            w.serialize(CsvRow {
                method: r.method.clone(),
                snr_db: p.snr_db,
                nmse_db: p.nmse_db,
                params: r.params,
                macs: r.macs,
                seconds: r.seconds,
                nmse: p.nmse,
            })
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Rebuilds records from [`metrics_csv`] output; rows of one method must be
/// contiguous.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut out: Vec<MetricsRecord> = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize() {
        let row: CsvRow = row.map_err(csv_err)?;
        let point = SnrPoint {
            snr_db: row.snr_db,
            nmse: row.nmse,
            nmse_db: row.nmse_db,
        };
        match out.last_mut() {
            Some(r) if r.method == row.method => r.points.push(point),
            _ => out.push(MetricsRecord {
                method: row.method,
                points: vec![point],
                params: row.params,
                macs: row.macs,
                seconds: row.seconds,
            }),
        }
    }
    Ok(out)
}

pub fn metrics_json(records: &[MetricsRecord]) -> Result<String> {
    serde_json::to_string_pretty(&serde_json::json!({ "methods": records })).map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_metrics_json(text: &str) -> Result<Vec<MetricsRecord>> {
    #[derive(Deserialize)]
    struct Doc {
        methods: Vec<MetricsRecord>,
    }
    let doc: Doc = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    Ok(doc.methods)
}

/// `snr_db` column followed by one NMSE-dB column per method.
fn nmse_plot(records: &[MetricsRecord]) -> String {
    let mut snrs: Vec<f64> = Vec::new();
    for p in records.iter().flat_map(|r| &r.points) {
        if !snrs.contains(&p.snr_db) {
            snrs.push(p.snr_db);
        }
    }
    let mut out = String::from("snr_db");
    for r in records {
        out.push(',');
        out.push_str(&r.method);
    }
    out.push('\n');
    for s in snrs {
        out.push_str(&s.to_string());
        for r in records {
            out.push(',');
            if let Some(p) = r.at(s) {
                out.push_str(&p.nmse_db.to_string());
            }
        }
        out.push('\n');
    }
    out
}

/// Ratio-indexed rows from the unpruned network (ratio 0) and every pruned one.
fn ratio_rows(records: &[MetricsRecord]) -> Vec<(f64, &MetricsRecord)> {
    let mut rows: Vec<(f64, &MetricsRecord)> = records
        .iter()
        .filter_map(|r| {
            if r.method == AMP_DCNN {
                Some((0.0, r))
            } else {
                prince_ratio(&r.method).map(|x| (x, r))
            }
        })
        .collect();
    // stable sort keeps AMP-DCNN ahead of an explicit ratio-0 entry
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    rows.dedup_by(|b, a| a.0 == b.0);
    rows
}

/// Writes `metrics.json`, `metrics.csv`, the plot tables under `plots/` and
/// one JSON/CSV pair per prune report. Returns the written paths.
pub fn emit_reports(records: &[MetricsRecord], prune_reports: &[PruneReport], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Empty("no metrics records to report".into()));
    }
    if let Some(r) = records.iter().find(|r| r.points.is_empty()) {
        return Err(Error::Empty(format!("method {} has an empty SNR grid", r.method)));
    }
    let mut files: Vec<(PathBuf, String)> = vec![
        (dir.join("metrics.json"), metrics_json(records)?),
        (dir.join("metrics.csv"), metrics_csv(records)?),
        (dir.join("plots/nmse_vs_snr.csv"), nmse_plot(records)),
    ];
    let rows = ratio_rows(records);
    if !rows.is_empty() {
        let base = rows[0].1.params.max(1) as f64;
        let mut params = String::from("ratio,params,fraction\n");
        let mut macs = String::from("ratio,macs\n");
        for (ratio, r) in &rows {
            params.push_str(&format!("{ratio},{},{}\n", r.params, r.params as f64 / base));
            macs.push_str(&format!("{ratio},{}\n", r.macs));
        }
        files.push((dir.join("plots/params_vs_ratio.csv"), params));
        files.push((dir.join("plots/macs_vs_ratio.csv"), macs));
    }
    for rep in prune_reports {
        let stem = format!("prune_report_{}", rep.requested_ratio);
        files.push((dir.join(format!("{stem}.json")), rep.to_json()?));
        files.push((dir.join(format!("{stem}.csv")), rep.to_csv()));
    }
    for (path, body) in &files {
        write_file(path, body.as_bytes())?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
