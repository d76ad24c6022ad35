//! Artifact writers. CSV files open with a `# barrierflow-<kind> v1` line that
//! versions the column set; floats are written with 17 significant digits.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use barrierflow_core::diagnostics::StationarityReport;
use barrierflow_core::flow::{EscapeRow, FlowSample};
use barrierflow_core::solvers::TraceRecord;
use chrono::{DateTime, SecondsFormat, Utc};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliResult;

pub const TRACE_SCHEMA: &str = "# barrierflow-trace v1";
pub const FLOW_SCHEMA: &str = "# barrierflow-flow v1";
pub const EXITS_SCHEMA: &str = "# barrierflow-exits v1";
pub const INDEX_SCHEMA: &str = "# barrierflow-index v1";

pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn vec_json(v: &DVector<f64>) -> Vec<f64> {
    v.iter().cloned().collect()
}

fn matrix_json(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// A CSV writer whose first line is the schema comment.
fn csv_with_schema(path: &Path, schema: &str) -> CliResult<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{schema}")?;
    Ok(csv::Writer::from_writer(file))
}

fn x_columns(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

pub fn write_trace_csv(path: &Path, records: &[TraceRecord], n: usize) -> CliResult<()> {
    let mut w = csv_with_schema(path, TRACE_SCHEMA)?;
    let mut header = vec!["k".to_string()];
    header.extend(x_columns("x", n));
    header.extend(["f", "eta", "stable_res", "kkt_res", "gauge"].map(String::from));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.k.to_string()];
        row.extend(r.x.iter().map(|&v| fmt_f64(v)));
        row.extend([r.f, r.eta, r.stable_residual, r.kkt_residual, r.gauge].map(fmt_f64));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_flow_csv(path: &Path, samples: &[FlowSample], n: usize) -> CliResult<()> {
    let mut w = csv_with_schema(path, FLOW_SCHEMA)?;
    let mut header = vec!["t".to_string()];
    header.extend(x_columns("x", n));
    header.extend(["f", "stable_res"].map(String::from));
    w.write_record(&header)?;
    for s in samples {
        let mut row = vec![fmt_f64(s.t)];
        row.extend(s.x.iter().map(|&v| fmt_f64(v)));
        row.extend([s.f, s.stable_residual].map(fmt_f64));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_exits_csv(path: &Path, rows: &[EscapeRow], n: usize) -> CliResult<()> {
    let mut w = csv_with_schema(path, EXITS_SCHEMA)?;
    let mut header = vec!["delta".to_string()];
    header.extend(x_columns("start", n));
    header.extend(["t_exit", "reentries", "min_distance_after_exit"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![fmt_f64(r.delta)];
        row.extend(r.start.iter().map(|&v| fmt_f64(v)));
        row.push(fmt_opt(r.t_exit));
        row.push(r.reentries.to_string());
        row.push(fmt_opt(r.min_distance_after_exit));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexRow {
    pub cell: usize,
    pub dir: String,
    pub eta0: f64,
    pub alpha: f64,
    pub noise: f64,
    pub seed: u64,
    pub cell_seed: u64,
    pub status: String,
    pub iterations: Option<usize>,
    pub stop: Option<String>,
    pub classification: Option<String>,
    pub f: Option<f64>,
    pub stable_res: Option<f64>,
    pub kkt_res: Option<f64>,
}

pub fn write_index_csv(path: &Path, rows: &[IndexRow]) -> CliResult<()> {
    let mut w = csv_with_schema(path, INDEX_SCHEMA)?;
    w.write_record([
        "cell",
        "dir",
        "eta0",
        "alpha",
        "noise",
        "seed",
        "cell_seed",
        "status",
        "iterations",
        "stop",
        "classification",
        "f",
        "stable_res",
        "kkt_res",
    ])?;
    for r in rows {
        w.write_record([
            r.cell.to_string(),
            r.dir.clone(),
            fmt_f64(r.eta0),
            fmt_f64(r.alpha),
            fmt_f64(r.noise),
            r.seed.to_string(),
            r.cell_seed.to_string(),
            r.status.clone(),
            r.iterations.map(|v| v.to_string()).unwrap_or_default(),
            r.stop.clone().unwrap_or_default(),
            r.classification.clone().unwrap_or_default(),
            fmt_opt(r.f),
            fmt_opt(r.stable_res),
            fmt_opt(r.kkt_res),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file)?;
    file.flush()?;
    Ok(())
}

/// Residuals, classification and certificates of a stationarity report.
pub fn report_json(r: &StationarityReport) -> Value {
    json!({
        "point": vec_json(&r.point),
        "classification": r.classification.as_str(),
        "stable_residual": r.stable_residual,
        "kkt_residual": r.kkt.residual,
        "subgradient": vec_json(&r.subgradient),
        "stable_subgradient": vec_json(&r.stable_subgradient),
        "y": vec_json(&r.y),
        "s": vec_json(&r.s),
        "comp_gap": r.comp_gap,
        "kkt": {
            "mu": vec_json(&r.kkt.mu),
            "lambda": vec_json(&r.kkt.lambda),
            "active": r.kkt.active,
            "subgradient": vec_json(&r.kkt.subgradient),
            "verified": r.kkt.verified,
        },
        "jacobian": matrix_json(&r.jacobian),
        "region": format!("{:?}", r.region),
        "tolerances": {
            "stable": r.tolerances.stable,
            "kkt": r.tolerances.kkt,
            "active": r.tolerances.active,
        },
    })
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: Value,
    pub problem: String,
    pub problem_hash: String,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
    pub artifacts: Vec<PathBuf>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write_json(&dir.join("manifest.json"), &serde_json::to_value(self)?)
    }
}
