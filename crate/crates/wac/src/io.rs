//! CSV and JSON files.
//!
//! Measurement CSV: `time,gen1,...,genm`, one row per sample in pu.
//! Probe CSV: `time,u1,...,uq`. Floats are written in shortest round-trip
//! form so a write/read cycle is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use wac_core::measurements::{MachineId, MeasurementWindow, ProbeSignal};
use wac_core::DMatrix;

use crate::error::{AtStage, Error, Result, Stage};

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    s.push('\n');
    std::fs::write(path, s).map_err(io_err(path))
}

/// A table read from CSV: the header after `time`, the time column and
/// the remaining columns as rows.
struct Table {
    names: Vec<String>,
    time: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    if header.get(0) != Some("time") {
        return Err(schema(path, "first column must be `time`"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if names.is_empty() {
        return Err(schema(path, "no data columns"));
    }
    let mut time = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let mut vals = Vec::with_capacity(rec.len());
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| schema(path, &format!("row {}, column {}: `{field}` is not a number", i + 1, j + 1)))?;
            vals.push(v);
        }
        time.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    if rows.is_empty() {
        return Err(schema(path, "no rows"));
    }
    Ok(Table { names, time, rows })
}

fn schema(path: &Path, msg: &str) -> Error {
    Error::invalid(Stage::Io, format!("{}: {msg}", path.display()))
}

/// 1-based indices from headers `prefix1, prefix2, ...`.
fn indices(path: &Path, names: &[String], prefix: &str) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            n.strip_prefix(prefix)
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&i| i >= 1)
                .ok_or_else(|| schema(path, &format!("column `{n}` is not `{prefix}<index>`")))
        })
        .collect()
}

/// Sample period from the time column, rounded to nine significant digits
/// to absorb the rounding of `start + k·ts`.
fn infer_ts(path: &Path, time: &[f64]) -> Result<f64> {
    let n = time.len();
    if n < 2 {
        return Err(schema(path, "a single row does not fix the sample period; pass --ts"));
    }
    let raw = (time[n - 1] - time[0]) / (n - 1) as f64;
    let ts: f64 = format!("{raw:.8e}").parse().unwrap_or(raw);
    if !(ts > 0.0) || time.windows(2).any(|w| ((w[1] - w[0]) - ts).abs() > 1e-6 * ts) {
        return Err(schema(path, "time column is not uniformly increasing"));
    }
    Ok(ts)
}

/// Reads a measurement CSV. Columns must be `gen1..genm` in order.
pub fn read_measurements(path: &Path, ts: Option<f64>) -> Result<MeasurementWindow> {
    let t = read_table(path)?;
    let idx = indices(path, &t.names, "gen")?;
    if idx.iter().enumerate().any(|(i, &g)| g != i + 1) {
        return Err(schema(path, "generator columns must be gen1..genm in order"));
    }
    let ts = match ts {
        Some(ts) => ts,
        None => infer_ts(path, &t.time)?,
    };
    let m = idx.len();
    let samples = DMatrix::from_fn(t.rows.len(), m, |r, c| t.rows[r][c]);
    MeasurementWindow::new(ts, t.time[0], samples).at(Stage::Io)
}

/// Reads a probe CSV into one signal per `u<i>` column.
pub fn read_probes(path: &Path) -> Result<Vec<ProbeSignal>> {
    let t = read_table(path)?;
    let idx = indices(path, &t.names, "u")?;
    idx.iter()
        .enumerate()
        .map(|(c, &i)| {
            Ok(ProbeSignal {
                machine: MachineId::new(i).at(Stage::Io)?,
                values: t.rows.iter().map(|r| r[c]).collect(),
            })
        })
        .collect()
}

/// Writes `time` followed by the given columns.
pub fn write_columns(path: &Path, names: &[String], start: f64, ts: f64, cols: &DMatrix<f64>) -> Result<()> {
    if names.len() != cols.ncols() {
        return Err(Error::invalid(Stage::Io, "column names and data disagree"));
    }
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    let mut head = vec!["time".to_owned()];
    head.extend(names.iter().cloned());
    w.write_record(&head).map_err(csv_err(path))?;
    let mut rec = Vec::with_capacity(names.len() + 1);
    for r in 0..cols.nrows() {
        rec.clear();
        rec.push((start + r as f64 * ts).to_string());
        rec.extend(cols.row(r).iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    inner.flush().map_err(io_err(path))
}

pub fn write_measurements(path: &Path, w: &MeasurementWindow) -> Result<()> {
    let names: Vec<String> = (1..=w.machines()).map(|i| format!("gen{i}")).collect();
    write_columns(path, &names, w.start_time(), w.ts(), w.samples())
}

/// Probe signals must share one length; the time axis is `start + k·ts`.
pub fn write_probes(path: &Path, probes: &[ProbeSignal], start: f64, ts: f64) -> Result<()> {
    let n = probes.first().map_or(0, |p| p.len());
    if probes.iter().any(|p| p.len() != n) {
        return Err(Error::invalid(Stage::Io, "probe signals differ in length"));
    }
    let names: Vec<String> = probes.iter().map(|p| format!("u{}", p.machine.index())).collect();
    let cols = DMatrix::from_fn(n, probes.len(), |r, c| probes[c].values[r]);
    write_columns(path, &names, start, ts, &cols)
}
