//! Poles and residues of the identified model, order reduction, dominant
//! inter-area mode and residue-based control loop selection.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::coherency::CoherencyGrouping;
use crate::error::invalid;
use crate::linalg::{cln, horner, horner_deriv, mode_of, poly_from_roots, poly_roots};
use crate::measurements::MachineId;
use crate::sysid::{zinv_eval, ArxCommonDen, Pair};
use crate::{Error, Result, C64};

/// Poles closer than this are treated as one repeated pole.
pub const REPEATED_POLE_TOL: f64 = 1e-7;
/// Default inter-area band (Hz).
pub const INTER_AREA_BAND: (f64, f64) = (0.1, 0.8);
/// Default relative residue threshold for order reduction.
pub const DEFAULT_REDUCE_THRESHOLD: f64 = 1e-3;
/// Default rejection level for a group's best normalized residue.
pub const DEFAULT_REJECT_BELOW: f64 = 0.05;

/// Partial-fraction expansion `Σ rⱼ/(x − pⱼ) + direct`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialFractions {
    pub poles: Vec<C64>,
    pub residues: Vec<C64>,
    /// Polynomial part. For [`residue`] these are descending powers of the
    /// variable; for the `z⁻¹` forms they multiply `z⁰, z⁻¹, …`.
    pub direct: Vec<f64>,
    /// Number of poles folded into a neighbour as near-repeated.
    pub merged: usize,
}

impl PartialFractions {
    fn pole_part(&self, x: C64) -> C64 {
        self.poles
            .iter()
            .zip(self.residues.iter())
            .fold(C64::new(0.0, 0.0), |acc, (p, r)| acc + r / (x - p))
    }

    /// Value at `s` of an expansion built by [`residue`].
    pub fn eval_desc(&self, s: C64) -> C64 {
        self.pole_part(s) + horner(&self.direct, s)
    }

    /// Value at `z` of an expansion built from a `z⁻¹` rational function.
    pub fn eval_z(&self, z: C64) -> C64 {
        self.pole_part(z) + zinv_eval(&self.direct, z.inv())
    }
}

fn trim_trailing(c: &[f64]) -> Vec<f64> {
    let mut v = c.to_vec();
    while v.len() > 1 && *v.last().unwrap() == 0.0 {
        v.pop();
    }
    v
}

fn trim_leading(c: &[f64]) -> Vec<f64> {
    let first = c.iter().position(|&v| v != 0.0).unwrap_or(c.len().saturating_sub(1));
    c[first..].to_vec()
}

/// Groups poles within [`REPEATED_POLE_TOL`]; returns cluster centers and
/// the member indices of each.
fn cluster_poles(poles: &[C64]) -> Vec<(C64, Vec<usize>)> {
    let mut out: Vec<(C64, Vec<usize>)> = Vec::new();
    for (i, &p) in poles.iter().enumerate() {
        match out.iter_mut().find(|(c, _)| (c - p).norm() < REPEATED_POLE_TOL) {
            Some((c, members)) => {
                let k = members.len() as f64;
                *c = (*c * k + p) / (k + 1.0);
                members.push(i);
            }
            None => out.push((p, vec![i])),
        }
    }
    out
}

fn merge(poles: Vec<C64>, residues: Vec<C64>) -> (Vec<C64>, Vec<C64>, usize) {
    let clusters = cluster_poles(&poles);
    let merged = poles.len() - clusters.len();
    let mut p = Vec::with_capacity(clusters.len());
    let mut r = Vec::with_capacity(clusters.len());
    for (c, members) in clusters {
        p.push(c);
        r.push(members.iter().map(|&i| residues[i]).sum());
    }
    (p, r, merged)
}

/// Expansion of `b(x)/a(x)` with both polynomials in descending powers.
pub fn residue(b: &[f64], a: &[f64]) -> Result<PartialFractions> {
    let a = trim_leading(a);
    if a.is_empty() || a[0] == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let mut rem = trim_leading(b);
    if rem.is_empty() {
        rem = vec![0.0];
    }
    let na = a.len() - 1;
    let mut quotient = Vec::new();
    while rem.len() > na {
        let c = rem[0] / a[0];
        quotient.push(c);
        for i in 0..a.len() {
            rem[i] -= c * a[i];
        }
        rem.remove(0);
    }
    if quotient.is_empty() {
        quotient.push(0.0);
    }
    let poles = poly_roots(&a)?;
    let residues: Vec<C64> = poles
        .iter()
        .map(|&p| horner(&rem, p) / horner_deriv(&a, p))
        .collect();
    let (poles, residues, merged) = merge(poles, residues);
    Ok(PartialFractions {
        poles,
        residues,
        direct: quotient,
        merged,
    })
}

/// Expansion in `z` of `N(z⁻¹)/A(z⁻¹)`, coefficients ascending in `z⁻¹`.
pub fn partial_fractions_zinv(num: &[f64], den: &[f64]) -> Result<PartialFractions> {
    let den = trim_trailing(den);
    if den.is_empty() || den[0] == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let num = trim_trailing(num);
    let poles = poly_roots(&den)?;
    Ok(partial_fractions_with_poles(&num, &den, poles))
}

fn residue_at(num: &[f64], den: &[f64], p: C64) -> C64 {
    let na = den.len() - 1;
    let w = p.inv();
    zinv_eval(num, w) * p.powi(na as i32) / horner_deriv(den, p)
}

/// Direct polynomial of a `z⁻¹` rational given its (merged) poles and residues.
fn direct_terms(num: &[f64], den: &[f64], poles: &[C64], residues: &[C64]) -> Vec<f64> {
    let na = den.len() - 1;
    let nb = num.len().saturating_sub(1);
    let len = nb.saturating_sub(na) + 1;
    let mut h = vec![0.0; len];
    for i in 0..len {
        let mut v = num.get(i).copied().unwrap_or(0.0);
        for l in 1..=i.min(na) {
            v -= den[l] * h[i - l];
        }
        h[i] = v / den[0];
    }
    (0..len)
        .map(|i| {
            if i == 0 {
                h[0]
            } else {
                let pole_part: C64 = poles
                    .iter()
                    .zip(residues.iter())
                    .map(|(p, r)| r * p.powi(i as i32 - 1))
                    .sum();
                h[i] - pole_part.re
            }
        })
        .collect()
}

fn partial_fractions_with_poles(num: &[f64], den: &[f64], poles: Vec<C64>) -> PartialFractions {
    let residues: Vec<C64> = poles.iter().map(|&p| residue_at(num, den, p)).collect();
    let (poles, residues, merged) = merge(poles, residues);
    let direct = direct_terms(num, den, &poles, &residues);
    PartialFractions {
        poles,
        residues,
        direct,
        merged,
    }
}

/// Expansion of one pair of an identified model.
pub fn partial_fractions(model: &ArxCommonDen, pair: Pair) -> Result<PartialFractions> {
    partial_fractions_zinv(&model.num_poly(pair)?, &model.den_poly())
}

/// Non-fatal conditions met while decomposing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModalWarning {
    /// Near-repeated poles were merged and their residues summed.
    MergedPoles { count: usize },
    /// A pole on the nonpositive real axis; its continuous image sits on the
    /// branch cut of the logarithm.
    BranchCut { pole_index: usize },
}

/// Matched map `s = ln(z)/ts` with residues scaled by `1/ts`. Returns the
/// mapped poles, residues, and indices of poles on the nonpositive real axis.
pub fn to_continuous(z_poles: &[C64], residues: &[C64], ts: f64) -> Result<(Vec<C64>, Vec<C64>, Vec<usize>)> {
    if !(ts > 0.0) {
        return Err(invalid("ts", "sample period must be positive"));
    }
    if z_poles.len() != residues.len() {
        return Err(Error::DimensionMismatch {
            context: "poles and residues",
            expected: z_poles.len(),
            found: residues.len(),
        });
    }
    let mut s = Vec::with_capacity(z_poles.len());
    let mut branch = Vec::new();
    for (i, &z) in z_poles.iter().enumerate() {
        if z.norm() == 0.0 {
            return Err(invalid("z_poles", "pole at the origin has no continuous image"));
        }
        if z.im == 0.0 && z.re <= 0.0 {
            branch.push(i);
        }
        s.push(cln(z) / ts);
    }
    let r = residues.iter().map(|r| r / ts).collect();
    Ok((s, r, branch))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeDescriptor {
    pub frequency_hz: f64,
    pub damping_ratio: f64,
    pub pole_index: usize,
}

/// Poles shared by all pairs with per-pair residues and direct terms.
#[derive(Debug, Clone)]
pub struct ModalDecomposition {
    pub ts: f64,
    pub z_poles: Vec<C64>,
    pub s_poles: Vec<C64>,
    /// z-domain residues, one per pole, for each pair.
    pub residues: BTreeMap<Pair, Vec<C64>>,
    /// Continuous residues (`r/ts`).
    pub s_residues: BTreeMap<Pair, Vec<C64>>,
    /// Direct terms in powers of `z⁻¹`.
    pub direct: BTreeMap<Pair, Vec<f64>>,
    pub warnings: Vec<ModalWarning>,
    pub output_scale: f64,
    pub input_scale: f64,
}

impl ModalDecomposition {
    /// One root-finding on the shared denominator serves every pair.
    pub fn new(model: &ArxCommonDen) -> Result<Self> {
        let den = trim_trailing(&model.den_poly());
        let poles = if den.len() > 1 { poly_roots(&den)? } else { Vec::new() };
        let mut residues = BTreeMap::new();
        let mut direct = BTreeMap::new();
        let mut z_poles = Vec::new();
        let mut merged = 0;
        for pair in model.pairs() {
            let num = trim_trailing(&model.num_poly(pair)?);
            let pf = partial_fractions_with_poles(&num, &den, poles.clone());
            z_poles = pf.poles;
            merged = pf.merged;
            residues.insert(pair, pf.residues);
            direct.insert(pair, pf.direct);
        }
        let mut warnings = Vec::new();
        if merged > 0 {
            warnings.push(ModalWarning::MergedPoles { count: merged });
        }
        let zero = vec![C64::new(0.0, 0.0); z_poles.len()];
        let (s_poles, _, branch) = to_continuous(&z_poles, &zero, model.ts)?;
        warnings.extend(branch.into_iter().map(|i| ModalWarning::BranchCut { pole_index: i }));
        let s_residues = residues
            .iter()
            .map(|(p, r)| (*p, r.iter().map(|v| v / model.ts).collect()))
            .collect();
        Ok(ModalDecomposition {
            ts: model.ts,
            z_poles,
            s_poles,
            residues,
            s_residues,
            direct,
            warnings,
            output_scale: model.output_scale,
            input_scale: model.input_scale,
        })
    }

    pub fn order(&self) -> usize {
        self.z_poles.len()
    }

    pub fn pairs(&self) -> Vec<Pair> {
        self.residues.keys().copied().collect()
    }

    /// `G(z)` of a pair rebuilt from the expansion.
    pub fn eval(&self, pair: Pair, z: C64) -> Result<C64> {
        let r = self.residues.get(&pair).ok_or(Error::UnknownPair {
            output: pair.output.index(),
            input: pair.input.index(),
        })?;
        let pole_part: C64 = self
            .z_poles
            .iter()
            .zip(r.iter())
            .map(|(p, r)| r / (z - p))
            .sum();
        Ok(pole_part + zinv_eval(&self.direct[&pair], z.inv()))
    }

    pub fn mode(&self, pole_index: usize) -> ModeDescriptor {
        let (hz, zeta) = mode_of(self.s_poles[pole_index]);
        ModeDescriptor {
            frequency_hz: hz,
            damping_ratio: zeta,
            pole_index,
        }
    }

    /// Largest residue magnitude of each pole across pairs.
    pub fn pole_strength(&self) -> Vec<f64> {
        (0..self.order())
            .map(|j| {
                self.residues
                    .values()
                    .map(|r| r[j].norm())
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    fn keep(&self, keep: &[usize]) -> ModalDecomposition {
        let pick = |v: &Vec<C64>| keep.iter().map(|&j| v[j]).collect::<Vec<_>>();
        ModalDecomposition {
            ts: self.ts,
            z_poles: pick(&self.z_poles),
            s_poles: pick(&self.s_poles),
            residues: self.residues.iter().map(|(p, r)| (*p, pick(r))).collect(),
            s_residues: self.s_residues.iter().map(|(p, r)| (*p, pick(r))).collect(),
            direct: self.direct.clone(),
            warnings: self.warnings.clone(),
            output_scale: self.output_scale,
            input_scale: self.input_scale,
        }
    }

    /// Real rational model with the retained poles: denominator `Π(1 − pⱼz⁻¹)`
    /// and per-pair numerators from the residues and direct terms.
    pub fn to_model(&self) -> Result<ArxCommonDen> {
        if self.z_poles.is_empty() {
            return Err(invalid("decomposition", "no poles to build a model from"));
        }
        let den_full = poly_from_roots(&self.z_poles);
        let p = self.z_poles.len();
        let mut nums: BTreeMap<Pair, Vec<f64>> = BTreeMap::new();
        let mut order_k = p;
        for (pair, r) in &self.residues {
            let mut acc = vec![C64::new(0.0, 0.0); p + 1];
            for (j, &rj) in r.iter().enumerate() {
                let others: Vec<C64> = self
                    .z_poles
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != j)
                    .map(|(_, &z)| z)
                    .collect();
                let prod = poly_from_roots_c(&others);
                for (i, c) in prod.iter().enumerate() {
                    acc[i + 1] += rj * c;
                }
            }
            let mut num: Vec<f64> = acc.iter().map(|c| c.re).collect();
            let d = &self.direct[pair];
            let dlen = d.len() + den_full.len() - 1;
            if num.len() < dlen {
                num.resize(dlen, 0.0);
            }
            for (i, di) in d.iter().enumerate() {
                for (l, al) in den_full.iter().enumerate() {
                    num[i + l] += di * al;
                }
            }
            if num[0].abs() > 0.0 {
                let scale = num.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if num[0].abs() > 1e-9 * scale {
                    return Err(invalid("decomposition", format!("pair {pair} has a feedthrough term")));
                }
            }
            let num = trim_trailing(&num);
            order_k = order_k.max(num.len().saturating_sub(2));
            nums.insert(*pair, num);
        }
        let mut den: Vec<f64> = den_full[1..].to_vec();
        den.resize(order_k, 0.0);
        let nums = nums
            .into_iter()
            .map(|(pair, n)| {
                let mut b: Vec<f64> = n.into_iter().skip(1).collect();
                b.resize(order_k + 1, 0.0);
                (pair, b)
            })
            .collect();
        let mut m = ArxCommonDen::from_coefficients(self.ts, den, nums)?;
        m.output_scale = self.output_scale;
        m.input_scale = self.input_scale;
        Ok(m)
    }
}

fn poly_from_roots_c(roots: &[C64]) -> Vec<C64> {
    let mut c = vec![C64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![C64::new(0.0, 0.0); c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * r;
        }
        c = next;
    }
    c
}

/// Drops poles whose largest residue is below `rel_threshold` times the
/// largest residue overall. Conjugate poles share their strength, so pairs
/// are kept or dropped together.
pub fn reduce_order(decomp: &ModalDecomposition, rel_threshold: f64) -> Result<ModalDecomposition> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(invalid("rel_threshold", "must lie in (0, 1)"));
    }
    let strength = decomp.pole_strength();
    let global = strength.iter().copied().fold(0.0, f64::max);
    if global == 0.0 {
        return Ok(decomp.clone());
    }
    let mut keep = Vec::new();
    for j in 0..decomp.order() {
        let z = decomp.z_poles[j];
        let mate = (0..decomp.order())
            .filter(|&i| i != j && z.im != 0.0)
            .find(|&i| (decomp.z_poles[i] - z.conj()).norm() < REPEATED_POLE_TOL);
        let s = mate.map_or(strength[j], |i| strength[j].max(strength[i]));
        if s >= rel_threshold * global {
            keep.push(j);
        }
    }
    Ok(decomp.keep(&keep))
}

/// The least-damped oscillatory pole inside `band` (Hz).
pub fn dominant_mode(decomp: &ModalDecomposition, band: (f64, f64)) -> Result<ModeDescriptor> {
    let mut best: Option<ModeDescriptor> = None;
    for j in 0..decomp.order() {
        if decomp.s_poles[j].im <= 0.0 {
            continue;
        }
        let m = decomp.mode(j);
        if m.frequency_hz < band.0 || m.frequency_hz > band.1 {
            continue;
        }
        if best.is_none_or(|b| m.damping_ratio < b.damping_ratio) {
            best = Some(m);
        }
    }
    best.ok_or(Error::NoModeInBand { lo: band.0, hi: band.1 })
}

/// Normalized residue magnitudes at one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidueMatrix {
    /// Rows follow `outputs`, columns follow `inputs`.
    pub values: DMatrix<f64>,
    pub outputs: Vec<MachineId>,
    pub inputs: Vec<MachineId>,
    pub mode: ModeDescriptor,
    /// Position of the single 1.0 entry.
    pub argmax: (usize, usize),
}

impl ResidueMatrix {
    /// Builds a matrix from raw magnitudes, normalizing by the global
    /// maximum. Entries tied with the maximum (other than the first, in
    /// row-major order) are set one ulp below 1.0 so the argmax stays unique.
    pub fn from_magnitudes(
        raw: DMatrix<f64>,
        outputs: Vec<MachineId>,
        inputs: Vec<MachineId>,
        mode: ModeDescriptor,
    ) -> Result<Self> {
        if raw.nrows() != outputs.len() || raw.ncols() != inputs.len() {
            return Err(Error::DimensionMismatch {
                context: "residue matrix",
                expected: outputs.len() * inputs.len(),
                found: raw.len(),
            });
        }
        let mut argmax = (0, 0);
        let mut max = f64::NEG_INFINITY;
        for r in 0..raw.nrows() {
            for c in 0..raw.ncols() {
                if raw[(r, c)] > max {
                    max = raw[(r, c)];
                    argmax = (r, c);
                }
            }
        }
        if !(max > 0.0 && max.is_finite()) {
            return Err(Error::DegenerateResidues);
        }
        let mut values = raw / max;
        for r in 0..values.nrows() {
            for c in 0..values.ncols() {
                if (r, c) == argmax {
                    values[(r, c)] = 1.0;
                } else if values[(r, c)] >= 1.0 {
                    values[(r, c)] = 1.0f64.next_down();
                }
            }
        }
        Ok(ResidueMatrix {
            values,
            outputs,
            inputs,
            mode,
            argmax,
        })
    }

    pub fn value(&self, output: MachineId, input: MachineId) -> Option<f64> {
        let r = self.outputs.iter().position(|&m| m == output)?;
        let c = self.inputs.iter().position(|&m| m == input)?;
        Some(self.values[(r, c)])
    }
}

/// `|r_mp|` at `mode` over every output and input of the decomposition.
/// Pairs absent from the model contribute 0.
pub fn residue_matrix_at_mode(decomp: &ModalDecomposition, mode: &ModeDescriptor) -> Result<ResidueMatrix> {
    if mode.pole_index >= decomp.order() {
        return Err(invalid("mode", "pole index out of range"));
    }
    let mut outputs: Vec<MachineId> = decomp.residues.keys().map(|p| p.output).collect();
    outputs.dedup();
    let mut inputs: Vec<MachineId> = decomp.residues.keys().map(|p| p.input).collect();
    inputs.sort();
    inputs.dedup();
    let raw = DMatrix::from_fn(outputs.len(), inputs.len(), |r, c| {
        decomp
            .s_residues
            .get(&Pair::new(outputs[r], inputs[c]))
            .map_or(0.0, |v| v[mode.pole_index].norm())
    });
    ResidueMatrix::from_magnitudes(raw, outputs, inputs, *mode)
}

/// One wide-area loop: measure `output`, actuate `input`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedLoop {
    pub group: usize,
    pub output: MachineId,
    pub input: MachineId,
    pub residue: f64,
}

impl SelectedLoop {
    pub fn pair(&self) -> Pair {
        Pair::new(self.output, self.input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlLoopSelection {
    pub loops: Vec<SelectedLoop>,
    /// Best candidate of each group that fell below the rejection level.
    pub rejected: Vec<SelectedLoop>,
    pub mode: ModeDescriptor,
}

/// Per group, the in-group (output, input) pair with the largest normalized
/// residue; ties go to the lowest (output, input). Groups whose best residue
/// is below `reject_below` are rejected.
pub fn select_loops(
    rm: &ResidueMatrix,
    grouping: &CoherencyGrouping,
    reject_below: f64,
) -> Result<ControlLoopSelection> {
    for m in rm.outputs.iter().chain(rm.inputs.iter()) {
        if grouping.group_of(*m).is_none() {
            return Err(Error::UnknownMachine(m.index()));
        }
    }
    let mut loops = Vec::new();
    let mut rejected = Vec::new();
    for g in 1..=grouping.k {
        if grouping.assignment.iter().all(|&a| a != g) {
            continue;
        }
        let mut best: Option<SelectedLoop> = None;
        for (r, &out) in rm.outputs.iter().enumerate() {
            if grouping.group_of(out) != Some(g) {
                continue;
            }
            for (c, &inp) in rm.inputs.iter().enumerate() {
                if grouping.group_of(inp) != Some(g) {
                    continue;
                }
                let v = rm.values[(r, c)];
                if best.is_none_or(|b| v > b.residue) {
                    best = Some(SelectedLoop {
                        group: g,
                        output: out,
                        input: inp,
                        residue: v,
                    });
                }
            }
        }
        let best = best.ok_or_else(|| {
            invalid(
                "grouping",
                format!("group {g} has no measured output and probed input"),
            )
        })?;
        if best.residue < reject_below {
            rejected.push(best);
        } else {
            loops.push(best);
        }
    }
    Ok(ControlLoopSelection {
        loops,
        rejected,
        mode: rm.mode,
    })
}
