//! Measurement data model: speed-deviation windows, a ring-buffered stream,
//! probing signals and the disturbance trigger.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DMatrix;
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::invalid;
use crate::{Error, Result};

/// Default sample period of the measurement stream (s).
pub const DEFAULT_TS: f64 = 0.01;
/// Default ring-buffer capacity (rows).
pub const DEFAULT_CAPACITY: usize = 6000;

/// Generator label, numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MachineId(usize);

impl MachineId {
    pub fn new(index: usize) -> Result<Self> {
        if index == 0 {
            return Err(invalid("machine", "machine ids start at 1"));
        }
        Ok(MachineId(index))
    }

    /// Machine at column `i` of a window.
    pub fn from_column(i: usize) -> Self {
        MachineId(i + 1)
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn column(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Fixed-rate block of Δω samples, one column per machine.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementWindow {
    ts: f64,
    start_time: f64,
    samples: DMatrix<f64>,
}

impl MeasurementWindow {
    pub fn new(ts: f64, start_time: f64, samples: DMatrix<f64>) -> Result<Self> {
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(invalid("ts", "sample period must be positive"));
        }
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(invalid("samples", "window needs at least one row and one machine"));
        }
        check_finite(&samples)?;
        Ok(MeasurementWindow {
            ts,
            start_time,
            samples,
        })
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn machines(&self) -> usize {
        self.samples.ncols()
    }

    pub fn time(&self, row: usize) -> f64 {
        self.start_time + row as f64 * self.ts
    }

    pub fn column(&self, machine: MachineId) -> Result<Vec<f64>> {
        if machine.column() >= self.machines() {
            return Err(Error::UnknownMachine(machine.index()));
        }
        Ok(self.samples.column(machine.column()).iter().copied().collect())
    }

    /// Rows `start..start + len` as a new window.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::InsufficientHistory {
                requested: start + len,
                available: self.len(),
            });
        }
        Ok(MeasurementWindow {
            ts: self.ts,
            start_time: self.time(start),
            samples: self.samples.rows(start, len).into_owned(),
        })
    }

    /// Keeps every `factor`-th row starting with the first.
    pub fn decimate(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("factor", "decimation factor must be at least 1"));
        }
        let rows: Vec<usize> = (0..self.len()).step_by(factor).collect();
        Ok(MeasurementWindow {
            ts: self.ts * factor as f64,
            start_time: self.start_time,
            samples: self.samples.select_rows(rows.iter()),
        })
    }

    /// Every sample multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        MeasurementWindow {
            ts: self.ts,
            start_time: self.start_time,
            samples: &self.samples * c,
        }
    }

    /// Columns reordered so that new column `i` is old column `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.machines() {
            return Err(Error::DimensionMismatch {
                context: "column permutation",
                expected: self.machines(),
                found: perm.len(),
            });
        }
        Ok(MeasurementWindow {
            ts: self.ts,
            start_time: self.start_time,
            samples: self.samples.select_columns(perm.iter()),
        })
    }

    /// Root-mean-square of each column.
    pub fn column_rms(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.samples
            .column_iter()
            .map(|c| Float::sqrt(c.iter().map(|v| v * v).sum::<f64>() / n))
            .collect()
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Control-input sequence injected on one machine.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSignal {
    pub machine: MachineId,
    pub values: Vec<f64>,
}

impl ProbeSignal {
    /// Validates `|u| ≤ limit` for every sample.
    pub fn new(machine: MachineId, values: Vec<f64>, limit: f64) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > limit)
        {
            return Err(invalid(
                "probe",
                format!("sample {i} = {v} exceeds the amplitude limit {limit}"),
            ));
        }
        Ok(ProbeSignal { machine, values })
    }

    /// Pseudo-random binary sequence of `±amplitude` switching on chip
    /// boundaries of `chip` samples.
    pub fn prbs(machine: MachineId, len: usize, amplitude: f64, chip: usize, seed: u64) -> Self {
        let chip = chip.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(len);
        let mut level = amplitude;
        for i in 0..len {
            if i % chip == 0 {
                level = if rng.random::<bool>() { amplitude } else { -amplitude };
            }
            values.push(level);
        }
        ProbeSignal { machine, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn decimate(&self, factor: usize) -> Self {
        ProbeSignal {
            machine: self.machine,
            values: self.values.iter().copied().step_by(factor.max(1)).collect(),
        }
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        ProbeSignal {
            machine: self.machine,
            values: self.values[start..start + len].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisturbanceKind {
    Fault,
    LoadDrop,
    ProbeStart,
    /// Raised by the RMS trigger, cause unknown.
    Detected,
}

impl DisturbanceKind {
    pub fn label(self) -> &'static str {
        match self {
            DisturbanceKind::Fault => "fault",
            DisturbanceKind::LoadDrop => "load-drop",
            DisturbanceKind::ProbeStart => "probe-start",
            DisturbanceKind::Detected => "detected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceEvent {
    pub time: f64,
    pub magnitude: f64,
    pub kind: DisturbanceKind,
}

/// Fires when the largest per-machine RMS of the window exceeds `threshold`.
/// The event time is the first sample whose magnitude exceeds the threshold.
pub fn detect_disturbance(
    window: &MeasurementWindow,
    threshold: f64,
) -> Result<Option<DisturbanceEvent>> {
    if !(threshold > 0.0) {
        return Err(invalid("threshold", "must be positive"));
    }
    let rms = window.column_rms().into_iter().fold(0.0, f64::max);
    if !(rms > threshold) {
        return Ok(None);
    }
    let s = window.samples();
    let first = (0..window.len())
        .find(|&r| s.row(r).iter().any(|v| v.abs() > threshold))
        .unwrap_or(0);
    Ok(Some(DisturbanceEvent {
        time: window.time(first),
        magnitude: rms,
        kind: DisturbanceKind::Detected,
    }))
}

/// Single-writer ring buffer of Δω rows.
#[derive(Debug, Clone)]
pub struct StreamState {
    ts: f64,
    machines: usize,
    capacity: usize,
    start_time: f64,
    buf: VecDeque<f64>,
    total_rows: usize,
}

impl StreamState {
    pub fn new(machines: usize, ts: f64, capacity: usize, start_time: f64) -> Result<Self> {
        if machines == 0 {
            return Err(invalid("machines", "need at least one machine"));
        }
        if capacity == 0 {
            return Err(invalid("capacity", "need room for at least one row"));
        }
        if !(ts > 0.0) {
            return Err(invalid("ts", "sample period must be positive"));
        }
        Ok(StreamState {
            ts,
            machines,
            capacity,
            start_time,
            buf: VecDeque::with_capacity(machines * capacity),
            total_rows: 0,
        })
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn machines(&self) -> usize {
        self.machines
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Rows currently held.
    pub fn len(&self) -> usize {
        self.buf.len() / self.machines
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Rows appended since creation, including evicted ones.
    pub fn total_rows(&self) -> usize {
        self.total_rows
    }

    /// Appends rows, evicting the oldest beyond capacity. Nothing is written
    /// if any row is invalid.
    pub fn append_samples(&mut self, rows: &DMatrix<f64>) -> Result<()> {
        if rows.ncols() != self.machines {
            return Err(Error::DimensionMismatch {
                context: "appended rows",
                expected: self.machines,
                found: rows.ncols(),
            });
        }
        check_finite(rows)?;
        for r in 0..rows.nrows() {
            for c in 0..self.machines {
                self.buf.push_back(rows[(r, c)]);
            }
        }
        let excess = self.len().saturating_sub(self.capacity);
        self.buf.drain(..excess * self.machines);
        self.total_rows += rows.nrows();
        Ok(())
    }

    /// Appends one row given as a slice.
    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        self.append_samples(&DMatrix::from_row_slice(1, row.len(), row))
    }

    /// Snapshot of the most recent `n` rows.
    pub fn extract_window(&self, n: usize) -> Result<MeasurementWindow> {
        let held = self.len();
        if n == 0 || n > held {
            return Err(Error::InsufficientHistory {
                requested: n,
                available: held,
            });
        }
        let skip = (held - n) * self.machines;
        let data: Vec<f64> = self.buf.iter().skip(skip).copied().collect();
        let first_row = self.total_rows - n;
        MeasurementWindow::new(
            self.ts,
            self.start_time + first_row as f64 * self.ts,
            DMatrix::from_row_slice(n, self.machines, &data),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rows(n: usize, m: usize, offset: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |r, c| offset + r as f64 * 10.0 + c as f64)
    }

    #[test]
    fn single_row_append() {
        let mut s = StreamState::new(3, 0.01, 10, 0.0).unwrap();
        s.append_samples(&rows(1, 3, 0.0)).unwrap();
        assert_eq!(s.extract_window(1).unwrap().len(), 1);
    }

    #[test]
    fn eviction_keeps_last_rows() {
        let mut s = StreamState::new(2, 0.01, 10, 0.0).unwrap();
        let r = rows(12, 2, 0.0);
        s.append_samples(&r).unwrap();
        let w = s.extract_window(10).unwrap();
        assert_eq!(w.samples(), &r.rows(2, 10).into_owned());
        assert!((w.start_time() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn split_append_matches_batch() {
        let r = rows(10, 3, 1.0);
        let mut a = StreamState::new(3, 0.01, 8, 0.0).unwrap();
        a.append_samples(&r.rows(0, 5).into_owned()).unwrap();
        a.append_samples(&r.rows(5, 5).into_owned()).unwrap();
        let mut b = StreamState::new(3, 0.01, 8, 0.0).unwrap();
        b.append_samples(&r).unwrap();
        assert_eq!(a.extract_window(8).unwrap(), b.extract_window(8).unwrap());
    }

    #[test]
    fn rejects_bad_rows_atomically() {
        let mut s = StreamState::new(2, 0.01, 10, 0.0).unwrap();
        assert!(matches!(
            s.append_samples(&rows(2, 3, 0.0)),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut bad = rows(3, 2, 0.0);
        bad[(2, 1)] = f64::NAN;
        assert!(matches!(s.append_samples(&bad), Err(Error::NonFinite { row: 2, col: 1 })));
        assert!(s.is_empty());
    }

    #[test]
    fn window_is_a_snapshot() {
        let mut s = StreamState::new(2, 0.01, 600, 0.0).unwrap();
        s.append_samples(&rows(500, 2, 0.0)).unwrap();
        let w = s.extract_window(500).unwrap();
        let copy = w.clone();
        s.append_samples(&rows(50, 2, 7.0)).unwrap();
        assert_eq!(w, copy);
        assert!((w.len() as f64 * w.ts() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn extract_requires_history() {
        let s = StreamState::new(2, 0.01, 10, 0.0).unwrap();
        assert!(matches!(
            s.extract_window(1),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn detect_on_zero_window() {
        let w = MeasurementWindow::new(0.01, 0.0, DMatrix::zeros(50, 4)).unwrap();
        assert_eq!(detect_disturbance(&w, 1e-4).unwrap(), None);
    }

    #[test]
    fn detect_constant_column() {
        let mut m = DMatrix::zeros(20, 3);
        m.column_mut(1).fill(0.01);
        let w = MeasurementWindow::new(0.01, 1.0, m).unwrap();
        let e = detect_disturbance(&w, 0.005).unwrap().unwrap();
        assert!((e.magnitude - 0.01).abs() < 1e-15);
        assert_eq!(e.time, 1.0);
    }

    #[test]
    fn detect_rejects_nonpositive_threshold() {
        let w = MeasurementWindow::new(0.01, 0.0, DMatrix::zeros(2, 1)).unwrap();
        assert!(detect_disturbance(&w, 0.0).is_err());
    }

    #[test]
    fn prbs_is_binary_and_chipped() {
        let p = ProbeSignal::prbs(MachineId::from_column(0), 100, 0.02, 10, 3);
        assert!(p.values.iter().all(|v| v.abs() == 0.02));
        for c in p.values.chunks(10) {
            assert!(c.iter().all(|v| *v == c[0]));
        }
        assert_eq!(p, ProbeSignal::prbs(MachineId::from_column(0), 100, 0.02, 10, 3));
    }

    #[test]
    fn probe_limit_enforced() {
        let m = MachineId::new(1).unwrap();
        assert!(ProbeSignal::new(m, vec![0.01, -0.06], 0.05).is_err());
        assert!(ProbeSignal::new(m, vec![0.01, -0.05], 0.05).is_ok());
    }

    #[test]
    fn machine_ids_start_at_one() {
        assert!(MachineId::new(0).is_err());
        assert_eq!(MachineId::from_column(2).index(), 3);
    }
}
