//! Coherency grouping: Gaussian similarity between machine speed traces,
//! Nyström approximation of the similarity matrix, normalized-Laplacian
//! spectral embedding and k-means.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::{timed, Clock};
use crate::error::invalid;
use crate::measurements::{MachineId, MeasurementWindow};
use crate::{Error, Result};

/// Regularization added to the landmark block before inversion.
pub const A_REG: f64 = 1e-10;
/// Iteration cap for Lloyd's algorithm.
pub const KMEANS_MAX_ITER: usize = 300;
/// k-means++ restarts per clustering; the lowest-inertia run is kept.
pub const KMEANS_RESTARTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma {
    /// Median heuristic over landmark distances.
    Auto,
    Fixed(f64),
}

/// Whether the Euclidean distance enters the kernel squared or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceForm {
    /// `exp(−‖xᵢ − xⱼ‖ / 2σ²)`
    #[default]
    Unsquared,
    /// `exp(−‖xᵢ − xⱼ‖² / 2σ²)`
    Squared,
}

/// Landmark and cross blocks of the similarity matrix. The block between
/// non-landmarks is never formed.
#[derive(Debug, Clone)]
pub struct SimilarityFactors {
    pub a_block: DMatrix<f64>,
    pub b_block: DMatrix<f64>,
    pub sigma: f64,
    pub l: usize,
    pub n: usize,
    pub form: DistanceForm,
    /// `order[i]` is the machine column sitting at block position `i`; the
    /// first `l` entries are the landmarks.
    pub order: Vec<usize>,
}

impl SimilarityFactors {
    pub fn kernel(&self, dist: f64) -> f64 {
        kernel(self.form, self.sigma, dist)
    }
}

fn kernel(form: DistanceForm, sigma: f64, dist: f64) -> f64 {
    let x = match form {
        DistanceForm::Unsquared => dist,
        DistanceForm::Squared => dist * dist,
    };
    Float::exp(-x / (2.0 * sigma * sigma))
}

fn column_distance(s: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    Float::sqrt(
        s.column(i)
            .iter()
            .zip(s.column(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>(),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Builds the Nyström blocks for the machine columns of `window`.
pub fn similarity_factors(
    window: &MeasurementWindow,
    sigma: Sigma,
    form: DistanceForm,
    l: usize,
    seed: u64,
) -> Result<SimilarityFactors> {
    let n = window.machines();
    if n < 2 {
        return Err(invalid("window", "need at least two machines"));
    }
    if l == 0 || l > n {
        return Err(invalid("l", "landmark count must be in 1..=n"));
    }
    let s = window.samples();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let sigma = match sigma {
        Sigma::Fixed(v) if v > 0.0 && v.is_finite() => v,
        Sigma::Fixed(_) => return Err(invalid("sigma", "must be positive")),
        Sigma::Auto => {
            let mut d = Vec::new();
            for a in 0..l {
                for b in (a + 1)..l {
                    d.push(column_distance(s, order[a], order[b]));
                }
            }
            if d.is_empty() {
                d = (1..n).map(|b| column_distance(s, order[0], order[b])).collect();
            }
            let med = median(d);
            if med > 0.0 {
                match form {
                    DistanceForm::Unsquared => Float::sqrt(med / 2.0),
                    DistanceForm::Squared => med / core::f64::consts::SQRT_2,
                }
            } else {
                1.0
            }
        }
    };

    let a_block = DMatrix::from_fn(l, l, |i, j| {
        if i == j {
            1.0
        } else {
            kernel(form, sigma, column_distance(s, order[i], order[j]))
        }
    });
    let b_block = DMatrix::from_fn(l, n - l, |i, j| {
        kernel(form, sigma, column_distance(s, order[i], order[l + j]))
    });
    Ok(SimilarityFactors {
        a_block,
        b_block,
        sigma,
        l,
        n,
        form,
        order,
    })
}

fn regularized(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut r = a.clone();
    for i in 0..r.nrows() {
        r[(i, i)] += A_REG;
    }
    r
}

/// Row sums of the Nyström-approximated similarity, in machine order.
pub fn approximate_row_sums(f: &SimilarityFactors) -> Result<DVector<f64>> {
    let l = f.l;
    let ones_r = DVector::from_element(f.n - l, 1.0);
    let ones_l = DVector::from_element(l, 1.0);
    let b1 = &f.b_block * &ones_r;
    let top = &f.a_block * &ones_l + &b1;
    let a_reg = regularized(&f.a_block);
    let ainv_b1 = match a_reg.clone().cholesky() {
        Some(c) => c.solve(&b1),
        None => a_reg.lu().solve(&b1).ok_or(Error::Singular("landmark block"))?,
    };
    let bottom = f.b_block.transpose() * &ones_l + f.b_block.transpose() * ainv_b1;
    let mut d = DVector::zeros(f.n);
    for i in 0..l {
        d[f.order[i]] = top[i];
    }
    for i in 0..(f.n - l) {
        d[f.order[l + i]] = bottom[i];
    }
    Ok(d)
}

/// Spectral coordinates of each machine.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    /// Row-normalized eigenvector entries, one row per machine.
    pub u_rows: DMatrix<f64>,
    /// The `j` smallest Laplacian eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub degree: DVector<f64>,
    /// Machines whose eigenvector row was zero and could not be normalized.
    pub degenerate_rows: Vec<MachineId>,
    /// All Laplacian eigenvalues the approximation yields (`l` of them), ascending.
    pub spectrum: Vec<f64>,
}

impl SpectralEmbedding {
    /// Cluster count suggested by the largest gap in `spectrum`.
    pub fn eigengap_k(&self) -> usize {
        let mut best = (1, f64::NEG_INFINITY);
        for i in 1..self.spectrum.len() {
            let gap = self.spectrum[i] - self.spectrum[i - 1];
            if gap > best.1 {
                best = (i, gap);
            }
        }
        best.0
    }
}

/// Eigenvectors of the approximated normalized Laplacian for its `j`
/// smallest eigenvalues, orthogonalized in one shot from the Nyström blocks.
pub fn laplacian_embedding(
    f: &SimilarityFactors,
    degree: &DVector<f64>,
    j: usize,
) -> Result<SpectralEmbedding> {
    let (l, n) = (f.l, f.n);
    if j == 0 || j > l {
        return Err(invalid("j", "eigenvector count must be in 1..=l"));
    }
    if degree.len() != n {
        return Err(Error::DimensionMismatch {
            context: "degree vector",
            expected: n,
            found: degree.len(),
        });
    }
    for (i, &d) in degree.iter().enumerate() {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::NonPositiveDegree { index: i, value: d });
        }
    }
    let dinv: Vec<f64> = f
        .order
        .iter()
        .map(|&m| 1.0 / Float::sqrt(degree[m]))
        .collect();
    let a_hat = DMatrix::from_fn(l, l, |r, c| f.a_block[(r, c)] * dinv[r] * dinv[c]);
    let b_hat = DMatrix::from_fn(l, n - l, |r, c| f.b_block[(r, c)] * dinv[r] * dinv[l + c]);

    let eig_a = SymmetricEigen::new(regularized(&a_hat));
    if eig_a.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Singular("normalized landmark block"));
    }
    let inv_sqrt = DVector::from_iterator(l, eig_a.eigenvalues.iter().map(|&v| 1.0 / Float::sqrt(v)));
    let a_isqrt =
        &eig_a.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig_a.eigenvectors.transpose();

    let mut r = &a_hat + &a_isqrt * &b_hat * b_hat.transpose() * &a_isqrt;
    crate::linalg::symmetrize(&mut r);
    let eig_r = SymmetricEigen::new(r);
    let mut idx: Vec<usize> = (0..l).collect();
    idx.sort_by(|&a, &b| {
        eig_r.eigenvalues[b]
            .partial_cmp(&eig_r.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let spectrum: Vec<f64> = idx.iter().map(|&i| 1.0 - eig_r.eigenvalues[i]).collect();

    let mut stacked = DMatrix::zeros(n, l);
    stacked.rows_mut(0, l).copy_from(&a_hat);
    stacked.rows_mut(l, n - l).copy_from(&b_hat.transpose());
    let proj = stacked * a_isqrt;

    let mut v = DMatrix::zeros(n, j);
    for (col, &i) in idx.iter().take(j).enumerate() {
        let lam = eig_r.eigenvalues[i];
        if !(lam > 0.0) {
            return Err(Error::Singular("Nyström eigenvector recovery"));
        }
        let vc = &proj * eig_r.eigenvectors.column(i) / Float::sqrt(lam);
        v.set_column(col, &vc);
    }

    let mut u_rows = DMatrix::zeros(n, j);
    let mut degenerate_rows = Vec::new();
    for pos in 0..n {
        let machine = f.order[pos];
        let row = v.row(pos);
        let nrm = row.norm();
        if nrm > 0.0 {
            u_rows.set_row(machine, &(row / nrm));
        } else {
            degenerate_rows.push(MachineId::from_column(machine));
        }
    }
    degenerate_rows.sort();
    Ok(SpectralEmbedding {
        u_rows,
        eigenvalues: spectrum[..j].to_vec(),
        degree: degree.clone(),
        degenerate_rows,
        spectrum,
    })
}

/// Similarity settings recorded alongside a grouping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityInfo {
    pub sigma: f64,
    pub landmarks: usize,
    pub form: DistanceForm,
}

/// Machine-to-group assignment.
#[derive(Debug, Clone)]
pub struct CoherencyGrouping {
    /// Group id (1..=k) of each machine, indexed by column.
    pub assignment: Vec<usize>,
    pub k: usize,
    /// `k × j` cluster centers, row `g − 1` for group `g`.
    pub centers: DMatrix<f64>,
    pub inertia: f64,
    pub elapsed: f64,
    pub seed: u64,
    /// Group ids that ended up with no machines.
    pub empty_groups: Vec<usize>,
    pub embedding: SpectralEmbedding,
    pub similarity: Option<SimilarityInfo>,
}

impl CoherencyGrouping {
    pub fn machines(&self) -> usize {
        self.assignment.len()
    }

    pub fn group_of(&self, m: MachineId) -> Option<usize> {
        self.assignment.get(m.column()).copied()
    }

    /// Members of each group, index `g − 1` for group `g`.
    pub fn groups(&self) -> Vec<Vec<MachineId>> {
        let mut g = vec![Vec::new(); self.k];
        for (i, &a) in self.assignment.iter().enumerate() {
            g[a - 1].push(MachineId::from_column(i));
        }
        g
    }

    /// True when both groupings split the machines the same way, whatever
    /// the labels.
    pub fn same_partition(&self, other: &CoherencyGrouping) -> bool {
        same_partition(&self.assignment, &other.assignment)
    }
}

/// Label-free comparison of two assignments.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len()
        && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

fn sq_dist(a: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, g: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(c.row(g).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn nearest(rows: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for g in 0..centers.nrows() {
        let d = sq_dist(rows, i, centers, g);
        if d < best.1 {
            best = (g, d);
        }
    }
    best.0
}

fn kmeans_pp(rows: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = rows.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    while chosen.len() < k {
        let w: Vec<f64> = (0..n)
            .map(|i| {
                chosen
                    .iter()
                    .map(|&c| {
                        rows.row(i)
                            .iter()
                            .zip(rows.row(c).iter())
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = w.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &wi) in w.iter().enumerate() {
                acc += wi;
                if wi > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| w[i] > 0.0).unwrap())
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(pick);
    }
    rows.select_rows(chosen.iter())
}

fn lloyd(rows: &DMatrix<f64>, mut centers: DMatrix<f64>) -> (Vec<usize>, DMatrix<f64>) {
    let (n, dim) = rows.shape();
    let k = centers.nrows();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let next: Vec<usize> = (0..n).map(|i| nearest(rows, i, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
        for g in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == g).collect();
            if members.is_empty() {
                continue;
            }
            let mut c = DVector::zeros(dim);
            for &i in &members {
                c += rows.row(i).transpose();
            }
            c /= members.len() as f64;
            centers.set_row(g, &c.transpose());
        }
    }
    (assign, centers)
}

/// Single-point moves that lower the inertia once the centers follow the
/// move. The result is also a Lloyd fixed point, usually a better one.
fn hartigan(rows: &DMatrix<f64>, mut assign: Vec<usize>, mut centers: DMatrix<f64>) -> (Vec<usize>, DMatrix<f64>) {
    let n = rows.nrows();
    let k = centers.nrows();
    let mut size = vec![0usize; k];
    for &a in &assign {
        size[a] += 1;
    }
    for _ in 0..KMEANS_MAX_ITER {
        let mut moved = false;
        for i in 0..n {
            let a = assign[i];
            if size[a] <= 1 {
                continue;
            }
            let na = size[a] as f64;
            let leave = na / (na - 1.0) * sq_dist(rows, i, &centers, a);
            let mut best = (a, 0.0);
            for b in 0..k {
                if b == a {
                    continue;
                }
                let nb = size[b] as f64;
                let gain = nb / (nb + 1.0) * sq_dist(rows, i, &centers, b) - leave;
                if gain < best.1 - 1e-15 {
                    best = (b, gain);
                }
            }
            let b = best.0;
            if b != a {
                let x = rows.row(i).into_owned();
                let na1 = na - 1.0;
                let nb = size[b] as f64;
                let ca = (centers.row(a) * na - &x) / na1;
                let cb = (centers.row(b) * nb + &x) / (nb + 1.0);
                centers.set_row(a, &ca);
                centers.set_row(b, &cb);
                size[a] -= 1;
                size[b] += 1;
                assign[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    (assign, centers)
}

/// Lloyd's algorithm from k-means++ seeds followed by Hartigan refinement,
/// best of [`KMEANS_RESTARTS`] seeded restarts by inertia. Group ids are relabeled so that
/// groups are numbered in order of their lowest machine.
pub fn kmeans_cluster(embedding: &SpectralEmbedding, k: usize, seed: u64) -> Result<CoherencyGrouping> {
    let rows = &embedding.u_rows;
    let (n, dim) = rows.shape();
    if n == 0 || dim == 0 {
        return Err(invalid("embedding", "empty embedding"));
    }
    if k == 0 || k > n {
        return Err(invalid("k", "cluster count must be in 1..=n"));
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(invalid("embedding", "non-finite entries"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>, DMatrix<f64>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (assign, centers) = lloyd(rows, kmeans_pp(rows, k, &mut rng));
        let (assign, centers) = hartigan(rows, assign, centers);
        let cost: f64 = (0..n).map(|i| sq_dist(rows, i, &centers, assign[i])).sum();
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, assign, centers));
        }
    }
    let (_, assign, centers) = best.expect("at least one restart");

    let mut relabel = vec![usize::MAX; k];
    let mut next_label = 0;
    for &a in &assign {
        if relabel[a] == usize::MAX {
            relabel[a] = next_label;
            next_label += 1;
        }
    }
    let mut empty_groups = Vec::new();
    for r in relabel.iter_mut() {
        if *r == usize::MAX {
            *r = next_label;
            next_label += 1;
            empty_groups.push(*r + 1);
        }
    }
    let mut new_centers = DMatrix::zeros(k, dim);
    for g in 0..k {
        new_centers.set_row(relabel[g], &centers.row(g));
    }
    let assignment: Vec<usize> = assign.iter().map(|&a| relabel[a] + 1).collect();
    let inertia = (0..n)
        .map(|i| sq_dist(rows, i, &new_centers, assignment[i] - 1))
        .sum();
    Ok(CoherencyGrouping {
        assignment,
        k,
        centers: new_centers,
        inertia,
        elapsed: 0.0,
        seed,
        empty_groups,
        embedding: embedding.clone(),
        similarity: None,
    })
}

/// Settings for [`group_machines`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupingParams {
    pub sigma: Sigma,
    pub form: DistanceForm,
    /// Landmark count; `None` uses every machine.
    pub landmarks: Option<usize>,
    pub seed: u64,
}

impl Default for GroupingParams {
    fn default() -> Self {
        GroupingParams {
            sigma: Sigma::Auto,
            form: DistanceForm::Unsquared,
            landmarks: None,
            seed: 0,
        }
    }
}

/// Similarity, row sums, embedding with `j = k`, then k-means.
pub fn group_machines(
    window: &MeasurementWindow,
    k: usize,
    params: &GroupingParams,
    clock: &dyn Clock,
) -> Result<CoherencyGrouping> {
    let (res, elapsed) = timed(clock, || -> Result<CoherencyGrouping> {
        let l = params.landmarks.unwrap_or(window.machines());
        let f = similarity_factors(window, params.sigma, params.form, l, params.seed)?;
        let d = approximate_row_sums(&f)?;
        let emb = laplacian_embedding(&f, &d, k)?;
        let mut g = kmeans_cluster(&emb, k, params.seed)?;
        g.similarity = Some(SimilarityInfo {
            sigma: f.sigma,
            landmarks: l,
            form: f.form,
        });
        Ok(g)
    });
    let mut g = res?;
    g.elapsed = elapsed;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::NoClock;

    fn window(cols: &[&[f64]]) -> MeasurementWindow {
        let n = cols[0].len();
        MeasurementWindow::new(0.01, 0.0, DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r])).unwrap()
    }

    #[test]
    fn identical_columns_have_unit_similarity() {
        let w = window(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]]);
        let f = similarity_factors(&w, Sigma::Fixed(0.7), DistanceForm::Unsquared, 2, 1).unwrap();
        assert_eq!(f.a_block[(0, 1)], 1.0);
    }

    #[test]
    fn distance_equal_to_two_sigma_squared() {
        let sigma: f64 = 0.5;
        let w = window(&[&[0.0, 0.0], &[2.0 * sigma * sigma, 0.0]]);
        let f = similarity_factors(&w, Sigma::Fixed(sigma), DistanceForm::Unsquared, 2, 0).unwrap();
        assert!((f.a_block[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn similarity_rejects_bad_arguments() {
        let w = window(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(similarity_factors(&w, Sigma::Fixed(0.0), DistanceForm::Unsquared, 2, 0).is_err());
        assert!(similarity_factors(&w, Sigma::Auto, DistanceForm::Unsquared, 3, 0).is_err());
    }

    #[test]
    fn full_rank_row_sums_are_exact() {
        let w = window(&[&[0.0, 1.0, 0.2], &[1.0, 0.0, 0.1], &[0.3, 0.3, 0.3]]);
        let f = similarity_factors(&w, Sigma::Auto, DistanceForm::Unsquared, 3, 5).unwrap();
        let d = approximate_row_sums(&f).unwrap();
        for (pos, &m) in f.order.iter().enumerate() {
            assert!((d[m] - f.a_block.row(pos).sum()).abs() < 1e-14);
        }
    }

    #[test]
    fn all_ones_similarity_gives_degree_n() {
        let c: &[f64] = &[0.1, -0.2, 0.3];
        let w = window(&[c, c, c, c, c]);
        for l in 1..=5 {
            let f = similarity_factors(&w, Sigma::Auto, DistanceForm::Unsquared, l, 9).unwrap();
            let d = approximate_row_sums(&f).unwrap();
            assert!(d.iter().all(|v| (v - 5.0).abs() < 1e-6), "l = {l}: {d:?}");
        }
    }

    #[test]
    fn two_identical_machines() {
        let w = window(&[&[1.0, 2.0], &[1.0, 2.0]]);
        let f = similarity_factors(&w, Sigma::Auto, DistanceForm::Unsquared, 2, 0).unwrap();
        let d = approximate_row_sums(&f).unwrap();
        let e = laplacian_embedding(&f, &d, 1).unwrap();
        assert!(e.eigenvalues[0].abs() < 1e-8);
        assert!((e.u_rows[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert_eq!(e.u_rows[(0, 0)], e.u_rows[(1, 0)]);
    }

    #[test]
    fn embedding_rejects_bad_arguments() {
        let w = window(&[&[1.0, 2.0], &[1.5, 2.0], &[0.0, 0.0]]);
        let f = similarity_factors(&w, Sigma::Auto, DistanceForm::Unsquared, 2, 0).unwrap();
        let d = approximate_row_sums(&f).unwrap();
        assert!(laplacian_embedding(&f, &d, 3).is_err());
        let mut bad = d.clone();
        bad[1] = 0.0;
        assert!(matches!(
            laplacian_embedding(&f, &bad, 1),
            Err(Error::NonPositiveDegree { index: 1, .. })
        ));
    }

    fn emb(rows: &[[f64; 2]]) -> SpectralEmbedding {
        SpectralEmbedding {
            u_rows: DMatrix::from_fn(rows.len(), 2, |r, c| rows[r][c]),
            eigenvalues: vec![0.0, 0.0],
            degree: DVector::from_element(rows.len(), 1.0),
            degenerate_rows: Vec::new(),
            spectrum: vec![0.0, 0.0],
        }
    }

    #[test]
    fn kmeans_separated_rows() {
        let e = emb(&[[0.0, 1.0], [0.01, 1.0], [1.0, 0.0], [1.0, 0.01]]);
        let g = kmeans_cluster(&e, 2, 3).unwrap();
        assert_eq!(g.assignment, vec![1, 1, 2, 2]);
        assert!(g.inertia >= 0.0 && g.empty_groups.is_empty());
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let e = emb(&[[0.0, 1.0], [2.0, 1.0], [1.0, 4.0]]);
        let g = kmeans_cluster(&e, 1, 0).unwrap();
        assert_eq!(g.assignment, vec![1, 1, 1]);
        assert!((g.centers[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((g.centers[(0, 1)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn kmeans_rejects_k_above_n() {
        let e = emb(&[[0.0, 1.0], [1.0, 0.0]]);
        assert!(kmeans_cluster(&e, 3, 0).is_err());
        assert!(kmeans_cluster(&e, 0, 0).is_err());
    }

    #[test]
    fn identical_signals_single_group() {
        let c: &[f64] = &[0.0, 0.4, -0.2, 0.1];
        let w = window(&[c, c, c]);
        let g = group_machines(&w, 1, &GroupingParams::default(), &NoClock).unwrap();
        assert_eq!(g.assignment, vec![1, 1, 1]);
    }

    #[test]
    fn partition_comparison_ignores_labels() {
        assert!(same_partition(&[1, 1, 2, 3], &[3, 3, 1, 2]));
        assert!(!same_partition(&[1, 1, 2, 2], &[1, 2, 1, 2]));
    }

    #[test]
    fn eigengap_suggestion() {
        let mut e = emb(&[[0.0, 1.0]]);
        e.spectrum = vec![0.0, 0.01, 0.9, 0.95];
        assert_eq!(e.eigengap_k(), 2);
    }
}
