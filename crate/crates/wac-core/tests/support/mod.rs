//! Reference implementations used as test oracles. Written for clarity, not
//! speed, and kept independent of the library code paths they check.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use wac_core::coherency::DistanceForm;
use wac_core::measurements::MeasurementWindow;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gauss(r))
}

/// Full similarity matrix from a double loop over machine columns.
pub fn dense_similarity(samples: &DMatrix<f64>, sigma: f64, form: DistanceForm) -> DMatrix<f64> {
    let n = samples.ncols();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut d2 = 0.0;
            for t in 0..samples.nrows() {
                let e = samples[(t, i)] - samples[(t, j)];
                d2 += e * e;
            }
            let x = match form {
                DistanceForm::Unsquared => d2.sqrt(),
                DistanceForm::Squared => d2,
            };
            s[(i, j)] = (-x / (2.0 * sigma * sigma)).exp();
        }
    }
    s
}

/// `I − D^(−1/2) S D^(−1/2)` with `D` the row sums of `S`.
pub fn dense_laplacian(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    let d: Vec<f64> = (0..n).map(|i| s.row(i).sum()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - s[(i, j)] / (d[i] * d[j]).sqrt()
    })
}

/// Smallest `k` eigenvalues of the dense Laplacian and the row-normalized
/// eigenvector matrix.
pub fn dense_embedding(s: &DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(dense_laplacian(s));
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals: Vec<f64> = idx[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut u = DMatrix::from_fn(s.nrows(), k, |r, c| eig.eigenvectors[(r, idx[c])]);
    for r in 0..u.nrows() {
        let nrm = u.row(r).norm();
        if nrm > 0.0 {
            let row = u.row(r) / nrm;
            u.set_row(r, &row);
        }
    }
    (vals, u)
}

/// Sum of squared distances of rows to the mean of their label.
pub fn inertia(rows: &DMatrix<f64>, labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for g in 0..k {
        let members: Vec<usize> = (0..rows.nrows()).filter(|&i| labels[i] == g).collect();
        if members.is_empty() {
            continue;
        }
        let mut c = DVector::zeros(rows.ncols());
        for &i in &members {
            c += rows.row(i).transpose();
        }
        c /= members.len() as f64;
        for &i in &members {
            total += (rows.row(i).transpose() - &c).norm_squared();
        }
    }
    total
}

/// Globally optimal k-partition of the rows by exhaustive labeling.
pub fn best_partition(rows: &DMatrix<f64>, k: usize) -> Vec<usize> {
    let n = rows.nrows();
    let total = k.pow(n as u32);
    let mut best = (f64::INFINITY, vec![0; n]);
    let mut labels = vec![0; n];
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        let v = inertia(rows, &labels, k);
        if v < best.0 - 1e-12 {
            best = (v, labels.clone());
        }
    }
    best.1
}

/// Dense spectral clustering: materialized similarity, dense Laplacian
/// eigenvectors, exhaustive best partition of the embedding.
pub fn dense_spectral_grouping(samples: &DMatrix<f64>, k: usize, sigma: f64, form: DistanceForm) -> (Vec<f64>, Vec<usize>) {
    let s = dense_similarity(samples, sigma, form);
    let (vals, u) = dense_embedding(&s, k);
    (vals, best_partition(&u, k))
}

/// Windows whose machines follow `k` planted templates plus small noise.
pub fn planted_window(r: &mut ChaCha8Rng, n: usize, k: usize, t: usize, noise: f64) -> (MeasurementWindow, Vec<usize>) {
    let templates = random_matrix(r, t, k);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let samples = DMatrix::from_fn(t, n, |row, col| templates[(row, labels[col])]);
    let samples = samples + random_matrix(r, t, n) * noise;
    (MeasurementWindow::new(0.01, 0.0, samples).unwrap(), labels)
}

/// Finite-horizon LQR gain by explicit backward dynamic programming over
/// `horizon` stages, with terminal cost 0.
pub fn dp_lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut p = DMatrix::<f64>::zeros(n, n);
    let mut k = DMatrix::zeros(b.ncols(), n);
    for _ in 0..horizon {
        let s = r + b.transpose() * &p * b;
        let s_inv = s.try_inverse().expect("R + BᵀPB invertible");
        k = &s_inv * b.transpose() * &p * a;
        let acl = a - b * &k;
        // Joseph-style stage cost: x'Qx + u'Ru with u = −Kx.
        p = q + k.transpose() * r * &k + acl.transpose() * &p * &acl;
        p = (&p + p.transpose()) * 0.5;
    }
    k
}

/// Random `(A, B, C)` with spectral radius near `radius` and generic (hence
/// controllable and observable) input and output maps.
pub fn random_system(r: &mut ChaCha8Rng, n: usize, inputs: usize, radius: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let a = random_matrix(r, n, n);
    let rho = wac_core::linalg::spectral_radius(&a).max(1e-6);
    let a = a * (radius / rho);
    (a, random_matrix(r, n, inputs), random_matrix(r, 1, n))
}

/// Direct simulation of `y(t) = Σ bᵢ u(t−1−i) − Σ aᵢ y(t−i)` from rest.
pub fn simulate_arx(den: &[f64], num: &[f64], u: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; u.len()];
    for t in 0..u.len() {
        let mut v = 0.0;
        for (i, b) in num.iter().enumerate() {
            if t > i {
                v += b * u[t - 1 - i];
            }
        }
        for (i, a) in den.iter().enumerate() {
            if t > i {
                v -= a * y[t - 1 - i];
            }
        }
        y[t] = v;
    }
    y
}

/// Multi-input ARX output with a shared denominator.
pub fn simulate_arx_mimo(den: &[f64], nums: &[Vec<f64>], inputs: &[Vec<f64>]) -> Vec<f64> {
    let n = inputs[0].len();
    let mut y = vec![0.0; n];
    for (num, u) in nums.iter().zip(inputs) {
        let part = simulate_arx(&[], num, u);
        for t in 0..n {
            y[t] += part[t];
        }
    }
    // Apply 1/A by recursion on the summed numerator output.
    let mut out = vec![0.0; n];
    for t in 0..n {
        let mut v = y[t];
        for (i, a) in den.iter().enumerate() {
            if t > i {
                v -= a * out[t - 1 - i];
            }
        }
        out[t] = v;
    }
    out
}

/// Monic polynomial (ascending in z⁻¹, leading 1) with the given roots.
pub fn den_from_roots(roots: &[(f64, f64)]) -> Vec<f64> {
    // roots given as (re, im); complex ones must come with their conjugate.
    let mut c: Vec<(f64, f64)> = vec![(1.0, 0.0)];
    for &(re, im) in roots {
        let mut next = vec![(0.0, 0.0); c.len() + 1];
        for (i, &(cr, ci)) in c.iter().enumerate() {
            next[i].0 += cr;
            next[i].1 += ci;
            next[i + 1].0 -= cr * re - ci * im;
            next[i + 1].1 -= cr * im + ci * re;
        }
        c = next;
    }
    c.iter().map(|v| v.0).collect()
}

/// Scalar Kalman gain fixed point iterated until the gain moves < 1e−15.
pub fn scalar_kalman_fixed_point(a: f64, h: f64, q: f64, r: f64) -> f64 {
    let mut l = 1.0;
    let mut g_prev = f64::NAN;
    for _ in 0..1_000_000 {
        let lb = a * l * a + q;
        let g = lb * h / (h * lb * h + r);
        l = lb - g * h * lb;
        if (g - g_prev).abs() < 1e-15 {
            return g;
        }
        g_prev = g;
    }
    g_prev
}

/// Random stable common-denominator model over `machines` outputs and inputs,
/// denominator roots inside radius 0.95.
pub fn random_arx_model(r: &mut ChaCha8Rng, order: usize, machines: usize, ts: f64) -> wac_core::sysid::ArxCommonDen {
    use wac_core::measurements::MachineId;
    use wac_core::sysid::{ArxCommonDen, Pair};
    let mut roots = Vec::new();
    while roots.len() + 2 <= order {
        let rad = r.random_range(0.2..0.95);
        let th: f64 = r.random_range(0.1..3.0);
        roots.push((rad * th.cos(), rad * th.sin()));
        roots.push((rad * th.cos(), -rad * th.sin()));
    }
    if roots.len() < order {
        roots.push((r.random_range(-0.9..0.9), 0.0));
    }
    let den = den_from_roots(&roots);
    let mut nums = std::collections::BTreeMap::new();
    for o in 1..=machines {
        for i in 1..=machines {
            let b: Vec<f64> = (0..=order).map(|_| gauss(r)).collect();
            nums.insert(Pair::new(MachineId::new(o).unwrap(), MachineId::new(i).unwrap()), b);
        }
    }
    ArxCommonDen::from_coefficients(ts, den[1..].to_vec(), nums).unwrap()
}
