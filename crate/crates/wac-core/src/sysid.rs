//! Common-denominator MIMO ARX identification by alternating least squares.
//!
//! Every (output, input) pair shares the denominator `1 + a₁z⁻¹ + … + a_kz⁻¹ᵏ`
//! and has its own strictly proper numerator, so that
//!
//! `Δω(j) = Σᵢ bᵢ u(j−1−i) − Σᵢ aᵢ Δω(j−i)`.
//!
//! The denominator and numerators are solved in turn. The denominator
//! sweeps are accelerated with Anderson mixing, which keeps each step a pair
//! of ordinary least-squares solves but converges in a handful of iterations
//! where plain alternation crawls.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::error::invalid;
use crate::linalg::{lstsq, poly_roots};
use crate::measurements::{MachineId, MeasurementWindow, ProbeSignal};
use crate::{Error, Result, C64};

/// Initial value of every b₀ before the first denominator solve.
pub const INITIAL_B0: f64 = 1e-3;

/// One (output, input) transfer path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pair {
    pub output: MachineId,
    pub input: MachineId,
}

impl Pair {
    pub fn new(output: MachineId, input: MachineId) -> Self {
        Pair { output, input }
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.output, self.input)
    }
}

/// Output window recorded while the listed probes were injected. Every
/// window column becomes an output of a pair with every probe.
#[derive(Debug, Clone)]
pub struct ProbeExperiment {
    pub window: MeasurementWindow,
    pub probes: Vec<ProbeSignal>,
}

/// Lagged regressors for each pair, rows ordered from the most recent sample
/// backwards.
#[derive(Debug, Clone)]
pub struct RegressorSet {
    pub order_k: usize,
    pub window_n: usize,
    pub pairs: Vec<Pair>,
    /// Most recent sample index of the window each pair was built from.
    pub sample_j: Vec<usize>,
    pub x_his: Vec<DVector<f64>>,
    /// `N × (k+1)` input lags `u(t−1) … u(t−1−k)`.
    pub x_num_basis: Vec<DMatrix<f64>>,
    /// `N × k` output lags `Δω(t−1) … Δω(t−k)`.
    pub x_den_basis: Vec<DMatrix<f64>>,
}

struct PairData {
    pair: Pair,
    j: usize,
    his: DVector<f64>,
    num: DMatrix<f64>,
    den: DMatrix<f64>,
}

fn pair_rows(y: &[f64], u: &[f64], k: usize, n: usize) -> (usize, DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let j = y.len() - 1;
    let his = DVector::from_fn(n, |r, _| y[j - r]);
    let den = DMatrix::from_fn(n, k, |r, c| y[j - r - 1 - c]);
    let num = DMatrix::from_fn(n, k + 1, |r, c| u[j - r - 1 - c]);
    (j, his, num, den)
}

/// Regressors for a single window and its probe set.
pub fn build_regressors(
    outputs: &MeasurementWindow,
    inputs: &[ProbeSignal],
    order_k: usize,
    n: usize,
) -> Result<RegressorSet> {
    RegressorSet::from_experiments(
        &[ProbeExperiment {
            window: outputs.clone(),
            probes: inputs.to_vec(),
        }],
        order_k,
        Some(n),
    )
}

impl RegressorSet {
    /// Regressors over several experiments. With `n = None` the largest `N`
    /// every experiment supports is used.
    pub fn from_experiments(
        experiments: &[ProbeExperiment],
        order_k: usize,
        n: Option<usize>,
    ) -> Result<Self> {
        if order_k == 0 {
            return Err(invalid("order_k", "must be at least 1"));
        }
        if experiments.is_empty() {
            return Err(invalid("experiments", "no data"));
        }
        let shortest = experiments.iter().map(|e| e.window.len()).min().unwrap();
        let n = match n {
            Some(n) => n,
            None => shortest.saturating_sub(order_k + 1),
        };
        if n == 0 || shortest < n + order_k + 1 {
            return Err(Error::InsufficientHistory {
                requested: n + order_k + 1,
                available: shortest,
            });
        }
        let ts = experiments[0].window.ts();
        let mut data: Vec<PairData> = Vec::new();
        for e in experiments {
            if (e.window.ts() - ts).abs() > 1e-12 * ts {
                return Err(invalid("experiments", "sample periods differ"));
            }
            if e.probes.is_empty() {
                return Err(invalid("experiments", "experiment without probes"));
            }
            for p in &e.probes {
                if p.len() != e.window.len() {
                    return Err(Error::DimensionMismatch {
                        context: "probe length",
                        expected: e.window.len(),
                        found: p.len(),
                    });
                }
                for col in 0..e.window.machines() {
                    let out = MachineId::from_column(col);
                    let y: Vec<f64> = e.window.samples().column(col).iter().copied().collect();
                    let (j, his, num, den) = pair_rows(&y, &p.values, order_k, n);
                    data.push(PairData {
                        pair: Pair::new(out, p.machine),
                        j,
                        his,
                        num,
                        den,
                    });
                }
            }
        }
        data.sort_by_key(|a| a.pair);
        for w in data.windows(2) {
            if w[0].pair == w[1].pair {
                return Err(invalid("experiments", "a pair appears in more than one experiment"));
            }
        }
        let mut r = RegressorSet {
            order_k,
            window_n: n,
            pairs: Vec::new(),
            sample_j: Vec::new(),
            x_his: Vec::new(),
            x_num_basis: Vec::new(),
            x_den_basis: Vec::new(),
        };
        for d in data {
            r.pairs.push(d.pair);
            r.sample_j.push(d.j);
            r.x_his.push(d.his);
            r.x_num_basis.push(d.num);
            r.x_den_basis.push(d.den);
        }
        Ok(r)
    }

    pub fn stacked_his(&self) -> DVector<f64> {
        let n = self.window_n;
        let mut v = DVector::zeros(n * self.pairs.len());
        for (h, x) in self.x_his.iter().enumerate() {
            v.rows_mut(h * n, n).copy_from(x);
        }
        v
    }

    pub fn stacked_den(&self) -> DMatrix<f64> {
        let n = self.window_n;
        let mut m = DMatrix::zeros(n * self.pairs.len(), self.order_k);
        for (h, x) in self.x_den_basis.iter().enumerate() {
            m.rows_mut(h * n, n).copy_from(x);
        }
        m
    }

    /// Copy with outputs divided by `sy` and inputs by `su`.
    pub fn scaled(&self, sy: f64, su: f64) -> Self {
        RegressorSet {
            order_k: self.order_k,
            window_n: self.window_n,
            pairs: self.pairs.clone(),
            sample_j: self.sample_j.clone(),
            x_his: self.x_his.iter().map(|x| x / sy).collect(),
            x_num_basis: self.x_num_basis.iter().map(|x| x / su).collect(),
            x_den_basis: self.x_den_basis.iter().map(|x| x / sy).collect(),
        }
    }

    /// Stacked residual `X_His − X_Num·b + X_Den·a` norm.
    pub fn residual(&self, den: &DVector<f64>, nums: &[DVector<f64>]) -> f64 {
        let mut acc = 0.0;
        for h in 0..self.pairs.len() {
            let e = &self.x_his[h] - &self.x_num_basis[h] * &nums[h] + &self.x_den_basis[h] * den;
            acc += e.norm_squared();
        }
        Float::sqrt(acc)
    }

    fn rms(vs: impl Iterator<Item = f64>) -> f64 {
        let (mut s, mut c) = (0.0, 0usize);
        for v in vs {
            s += v * v;
            c += 1;
        }
        if c == 0 {
            0.0
        } else {
            Float::sqrt(s / c as f64)
        }
    }

    /// Global RMS of the outputs and of the inputs, 1 where a signal is zero.
    pub fn signal_scales(&self) -> (f64, f64) {
        let sy = Self::rms(self.x_his.iter().flat_map(|x| x.iter().copied()));
        let su = Self::rms(self.x_num_basis.iter().flat_map(|x| x.column(0).iter().copied().collect::<Vec<_>>()));
        (
            if sy > 0.0 { sy } else { 1.0 },
            if su > 0.0 { su } else { 1.0 },
        )
    }
}

/// Solution of a least-squares step with its conditioning flag.
#[derive(Debug, Clone)]
pub struct Solved<T> {
    pub value: T,
    pub rank_deficient: bool,
}

/// Shared denominator for fixed numerators.
pub fn solve_denominator(r: &RegressorSet, nums: &[DVector<f64>]) -> Result<Solved<DVector<f64>>> {
    if nums.len() != r.pairs.len() {
        return Err(Error::DimensionMismatch {
            context: "numerator count",
            expected: r.pairs.len(),
            found: nums.len(),
        });
    }
    let n = r.window_n;
    let mut rhs = DVector::zeros(n * r.pairs.len());
    for h in 0..r.pairs.len() {
        if nums[h].len() != r.order_k + 1 {
            return Err(Error::DimensionMismatch {
                context: "numerator length",
                expected: r.order_k + 1,
                found: nums[h].len(),
            });
        }
        let part = &r.x_his[h] - &r.x_num_basis[h] * &nums[h];
        rhs.rows_mut(h * n, n).copy_from(&part);
    }
    let s = lstsq(&(-r.stacked_den()), &rhs)?;
    Ok(Solved {
        value: s.x,
        rank_deficient: s.rank_deficient,
    })
}

/// Per-pair numerators for a fixed denominator.
pub fn solve_numerators(r: &RegressorSet, den: &DVector<f64>) -> Result<Solved<Vec<DVector<f64>>>> {
    if den.len() != r.order_k {
        return Err(Error::DimensionMismatch {
            context: "denominator length",
            expected: r.order_k,
            found: den.len(),
        });
    }
    let mut out = Vec::with_capacity(r.pairs.len());
    let mut deficient = false;
    for h in 0..r.pairs.len() {
        let rhs = &r.x_his[h] + &r.x_den_basis[h] * den;
        let s = lstsq(&r.x_num_basis[h], &rhs)?;
        deficient |= s.rank_deficient;
        out.push(s.x);
    }
    Ok(Solved {
        value: out,
        rank_deficient: deficient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentifyOptions {
    pub order_k: usize,
    /// Observation rows per pair; `None` uses all available.
    pub n_obs: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    /// Anderson memory; 0 gives plain alternation.
    pub anderson: usize,
    /// Scale outputs and inputs to unit RMS before solving.
    pub normalize: bool,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions {
            order_k: 10,
            n_obs: None,
            tol: 1e-4,
            max_iter: 100,
            anderson: 10,
            normalize: true,
        }
    }
}

/// Identified common-denominator model.
#[derive(Debug, Clone, PartialEq)]
pub struct ArxCommonDen {
    pub order_k: usize,
    pub ts: f64,
    /// `a₁ … a_k`
    pub den: Vec<f64>,
    /// `b₀ … b_k` per pair, physical units.
    pub num: BTreeMap<Pair, Vec<f64>>,
    /// Smallest stacked residual norm seen (normalized units when normalizing).
    pub fit: f64,
    pub iterations: usize,
    pub converged: bool,
    /// All denominator roots strictly inside the unit circle.
    pub stable: bool,
    /// RMS output level used for normalization.
    pub output_scale: f64,
    /// RMS input level used for normalization.
    pub input_scale: f64,
    /// A least-squares step fell back to ridge regularization.
    pub rank_deficient: bool,
}

impl ArxCommonDen {
    /// Builds a model from coefficients, computing the stability flag.
    pub fn from_coefficients(ts: f64, den: Vec<f64>, num: BTreeMap<Pair, Vec<f64>>) -> Result<Self> {
        let order_k = den.len();
        if order_k == 0 {
            return Err(invalid("den", "order must be at least 1"));
        }
        if let Some((p, b)) = num.iter().find(|(_, b)| b.len() != order_k + 1) {
            return Err(invalid(
                "num",
                alloc::format!("pair {p} has {} coefficients, expected {}", b.len(), order_k + 1),
            ));
        }
        let stable = denominator_stable(&den)?;
        Ok(ArxCommonDen {
            order_k,
            ts,
            den,
            num,
            fit: 0.0,
            iterations: 0,
            converged: true,
            stable,
            output_scale: 1.0,
            input_scale: 1.0,
            rank_deficient: false,
        })
    }

    pub fn pairs(&self) -> Vec<Pair> {
        self.num.keys().copied().collect()
    }

    /// Denominator in powers of `z⁻¹`, leading 1 included.
    pub fn den_poly(&self) -> Vec<f64> {
        let mut d = vec![1.0];
        d.extend_from_slice(&self.den);
        d
    }

    /// Numerator in powers of `z⁻¹` (zero constant term).
    pub fn num_poly(&self, pair: Pair) -> Result<Vec<f64>> {
        let b = self.num.get(&pair).ok_or(Error::UnknownPair {
            output: pair.output.index(),
            input: pair.input.index(),
        })?;
        let mut n = vec![0.0];
        n.extend_from_slice(b);
        Ok(n)
    }

    /// `G(z)` of one pair.
    pub fn eval(&self, pair: Pair, z: C64) -> Result<C64> {
        let w = z.inv();
        let num = self.num_poly(pair)?;
        Ok(zinv_eval(&num, w) / zinv_eval(&self.den_poly(), w))
    }

    pub fn poles(&self) -> Result<Vec<C64>> {
        poly_roots(&self.den_poly())
    }
}

/// Evaluates `Σ cᵢ wⁱ`.
pub fn zinv_eval(c: &[f64], w: C64) -> C64 {
    c.iter().rev().fold(C64::new(0.0, 0.0), |acc, &v| acc * w + v)
}

fn denominator_stable(den: &[f64]) -> Result<bool> {
    let mut d = vec![1.0];
    d.extend_from_slice(den);
    Ok(poly_roots(&d)?.iter().all(|z| z.norm() < 1.0))
}

/// Alternating least squares from the default start (`b₀ = 1e−3`, rest 0).
pub fn identify(r: &RegressorSet, ts: f64, opts: &IdentifyOptions) -> Result<ArxCommonDen> {
    let mut init = DVector::zeros(r.order_k + 1);
    init[0] = INITIAL_B0;
    identify_inner(r, ts, opts, None, init)
}

/// Alternating least squares started from given numerators (physical units).
pub fn identify_from(
    r: &RegressorSet,
    ts: f64,
    opts: &IdentifyOptions,
    init: &[DVector<f64>],
) -> Result<ArxCommonDen> {
    identify_inner(r, ts, opts, Some(init), DVector::zeros(0))
}

/// Regressors from experiments, then [`identify`].
pub fn identify_experiments(experiments: &[ProbeExperiment], opts: &IdentifyOptions) -> Result<ArxCommonDen> {
    let r = RegressorSet::from_experiments(experiments, opts.order_k, opts.n_obs)?;
    identify(&r, experiments[0].window.ts(), opts)
}

/// Splits a record of one-at-a-time probing into experiments.
///
/// A segment starts where a probe becomes active and runs until another
/// probe takes over, so each segment sees exactly one input. Rows before the
/// first active probe are dropped. If two probes are ever active on the same
/// row the whole record is returned as one simultaneous experiment.
pub fn segment_experiments(window: &MeasurementWindow, probes: &[ProbeSignal]) -> Result<Vec<ProbeExperiment>> {
    let n = window.len();
    if let Some(p) = probes.iter().find(|p| p.len() != n) {
        return Err(Error::DimensionMismatch {
            context: "probe length",
            expected: n,
            found: p.len(),
        });
    }
    let mut owner: Vec<Option<usize>> = Vec::with_capacity(n);
    let mut current = None;
    for r in 0..n {
        let mut active = probes.iter().enumerate().filter(|(_, p)| p.values[r] != 0.0);
        match (active.next(), active.next()) {
            (Some(_), Some(_)) => {
                return Ok(vec![ProbeExperiment {
                    window: window.clone(),
                    probes: probes.to_vec(),
                }])
            }
            (Some((i, _)), None) => current = Some(i),
            _ => {}
        }
        owner.push(current);
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let o = owner[start];
        let mut end = start + 1;
        while end < n && owner[end] == o {
            end += 1;
        }
        if let Some(i) = o {
            out.push(ProbeExperiment {
                window: window.slice(start, end - start)?,
                probes: vec![probes[i].slice(start, end - start)],
            });
        }
        start = end;
    }
    if out.is_empty() {
        return Err(invalid("probes", "no probe is ever active"));
    }
    Ok(out)
}

fn identify_inner(
    raw: &RegressorSet,
    ts: f64,
    opts: &IdentifyOptions,
    init: Option<&[DVector<f64>]>,
    default_init: DVector<f64>,
) -> Result<ArxCommonDen> {
    if opts.order_k != raw.order_k {
        return Err(invalid("order_k", "options and regressors disagree"));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(invalid("tol", "tolerance and iteration cap must be positive"));
    }
    let (sy, su) = if opts.normalize { raw.signal_scales() } else { (1.0, 1.0) };
    let r = if opts.normalize { raw.scaled(sy, su) } else { raw.clone() };
    let np = r.pairs.len();
    let mut b: Vec<DVector<f64>> = match init {
        Some(v) => {
            if v.len() != np {
                return Err(Error::DimensionMismatch {
                    context: "initial numerators",
                    expected: np,
                    found: v.len(),
                });
            }
            v.iter().map(|x| x * (su / sy)).collect()
        }
        None => vec![default_init; np],
    };

    let mut deficient = false;
    let s = solve_denominator(&r, &b)?;
    deficient |= s.rank_deficient;
    let mut a = s.value;

    let mut best: Option<(f64, DVector<f64>, Vec<DVector<f64>>)> = None;
    let mut hist_g: Vec<DVector<f64>> = Vec::new();
    let mut hist_f: Vec<DVector<f64>> = Vec::new();
    // More differences than unknowns only adds collinear columns.
    let memory = opts.anderson.min(r.order_k);
    // Plain alternation never raises the residual; an accelerated step that
    // does is replaced by the plain one it came from.
    let mut fallback: Option<DVector<f64>> = None;
    let mut prev_res = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=opts.max_iter {
        iterations = it;
        let s = solve_numerators(&r, &a)?;
        deficient |= s.rank_deficient;
        b = s.value;
        let mut res = r.residual(&a, &b);
        if let Some(g) = fallback.take() {
            if res > prev_res {
                a = g;
                let s = solve_numerators(&r, &a)?;
                deficient |= s.rank_deficient;
                b = s.value;
                res = r.residual(&a, &b);
            }
        }
        if best.as_ref().is_none_or(|(f, _, _)| res < *f) {
            best = Some((res, a.clone(), b.clone()));
        }
        if res <= opts.tol {
            converged = true;
            break;
        }
        prev_res = res;
        let s = solve_denominator(&r, &b)?;
        deficient |= s.rank_deficient;
        let g = s.value;
        let f = &g - &a;
        hist_g.push(g.clone());
        hist_f.push(f.clone());
        if hist_g.len() > memory + 1 {
            hist_g.remove(0);
            hist_f.remove(0);
        }
        match anderson_step(&hist_g, &hist_f, &f) {
            Some(next) => {
                a = next;
                fallback = Some(g);
            }
            None => a = g,
        }
    }

    let (fit, a, b) = best.expect("at least one iteration runs");
    let den: Vec<f64> = a.iter().copied().collect();
    let mut num = BTreeMap::new();
    for (h, p) in r.pairs.iter().enumerate() {
        num.insert(*p, b[h].iter().map(|v| v * sy / su).collect());
    }
    let stable = denominator_stable(&den)?;
    Ok(ArxCommonDen {
        order_k: r.order_k,
        ts,
        den,
        num,
        fit,
        iterations,
        converged,
        stable,
        output_scale: sy,
        input_scale: su,
        rank_deficient: deficient,
    })
}

/// Type-II Anderson update from the last iterates `g` and their residuals `f`.
fn anderson_step(g: &[DVector<f64>], f: &[DVector<f64>], f_last: &DVector<f64>) -> Option<DVector<f64>> {
    let m = g.len();
    if m < 2 {
        return None;
    }
    let dim = f_last.len();
    let df = DMatrix::from_fn(dim, m - 1, |r, c| f[c + 1][r] - f[c][r]);
    let dg = DMatrix::from_fn(dim, m - 1, |r, c| g[c + 1][r] - g[c][r]);
    let svd = df.svd(true, true);
    let cut = 1e-12 * svd.singular_values.max();
    if !(cut > 0.0) {
        return None;
    }
    let gamma = svd.solve(f_last, cut).ok()?;
    let next = &g[m - 1] - dg * gamma;
    if next.iter().all(|v| v.is_finite()) {
        Some(next)
    } else {
        None
    }
}
