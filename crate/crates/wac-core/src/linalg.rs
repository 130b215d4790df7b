//! Dense linear-algebra helpers shared by the pipeline stages.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{ComplexField, DMatrix, DVector};
use num_traits::Float;

use crate::{Error, Result, C64};

/// Ridge added to the normal equations when a least-squares problem is rank deficient.
pub const RIDGE: f64 = 1e-8;

/// Least-squares solution together with the path that produced it.
#[derive(Debug, Clone)]
pub struct LsSolution {
    pub x: DVector<f64>,
    pub rank_deficient: bool,
}

/// Minimizes `‖a x − b‖₂`. QR when `a` has full column rank, ridge-regularized
/// normal equations otherwise.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LsSolution> {
    let (rows, cols) = a.shape();
    if b.len() != rows {
        return Err(Error::DimensionMismatch {
            context: "least squares right-hand side",
            expected: rows,
            found: b.len(),
        });
    }
    if cols == 0 {
        return Ok(LsSolution {
            x: DVector::zeros(0),
            rank_deficient: false,
        });
    }
    if rows >= cols {
        let qr = a.clone().qr();
        let r = qr.r();
        let max_diag = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = f64::EPSILON * (rows.max(cols) as f64) * max_diag;
        let full_rank = max_diag > 0.0 && r.diagonal().iter().all(|v| v.abs() > tol);
        if full_rank {
            let mut qtb = b.clone();
            qr.q_tr_mul(&mut qtb);
            let head = qtb.rows(0, cols).into_owned();
            if let Some(x) = r.solve_upper_triangular(&head) {
                if x.iter().all(|v| v.is_finite()) {
                    return Ok(LsSolution {
                        x,
                        rank_deficient: false,
                    });
                }
            }
        }
    }
    let mut ata = a.transpose() * a;
    for i in 0..cols {
        ata[(i, i)] += RIDGE;
    }
    let atb = a.transpose() * b;
    let chol = ata.cholesky().ok_or(Error::Singular("ridge least squares"))?;
    let x = chol.solve(&atb);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("ridge least squares"));
    }
    Ok(LsSolution {
        x,
        rank_deficient: true,
    })
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm1 > THETA13 {
        Float::ceil(Float::log2(norm1 / THETA13)) as i32
    } else {
        0
    };
    let a = a * Float::powi(2.0, -s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9])
        + &a6 * B[7]
        + &a4 * B[5]
        + &a2 * B[3]
        + &id * B[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8])
        + &a6 * B[6]
        + &a4 * B[4]
        + &a2 * B[2]
        + &id * B[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is nonsingular");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Diagonal similarity `D⁻¹AD` with power-of-two `D` that evens out row and
/// column norms. Returns the balanced matrix and the diagonal of `D`.
pub fn balance(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let mut b = a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let total = c + r;
            let mut f = 1.0;
            let (mut cc, rr) = (c, r);
            while cc < rr / 2.0 {
                cc *= 4.0;
                f *= 2.0;
            }
            while cc >= rr * 2.0 {
                cc /= 4.0;
                f /= 2.0;
            }
            if (c * f + r / f) < 0.95 * total {
                done = false;
                d[i] *= f;
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
    }
    (b, d)
}

/// Eigenvalues of a real square matrix (complex pairs are exact conjugates).
/// The matrix is balanced first. Returns NaNs if the QR iteration fails.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<C64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let b = balance(a).0;
    let n = b.nrows();
    let max_niter = 100 * n.max(10);
    // nalgebra's QR sweep has no exceptional shifts and can cycle forever,
    // so the iteration is capped and retried on shifted or transposed copies.
    let scale = max_abs(&b).max(1.0);
    let tries = [(false, 0.0), (true, 0.0), (false, 0.37 * scale), (true, -0.61 * scale)];
    for (transpose, shift) in tries {
        let mut m = if transpose { b.transpose() } else { b.clone() };
        for i in 0..n {
            m[(i, i)] += shift;
        }
        if let Some(s) = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, max_niter) {
            return s.complex_eigenvalues().iter().map(|z| z - shift).collect();
        }
    }
    vec![C64::new(f64::NAN, f64::NAN); n]
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Replaces `m` by `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Evaluates a polynomial with coefficients in descending powers.
pub fn horner(desc: &[f64], z: C64) -> C64 {
    desc.iter().fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Evaluates the derivative of a descending-power polynomial.
pub fn horner_deriv(desc: &[f64], z: C64) -> C64 {
    let n = desc.len();
    if n < 2 {
        return C64::new(0.0, 0.0);
    }
    desc[..n - 1]
        .iter()
        .enumerate()
        .fold(C64::new(0.0, 0.0), |acc, (i, &c)| {
            acc * z + c * ((n - 1 - i) as f64)
        })
}

/// Real monic polynomial (descending powers) with the given roots. Roots are
/// expected to be conjugate-closed; imaginary round-off is discarded.
pub fn poly_from_roots(roots: &[C64]) -> Vec<f64> {
    let mut c = vec![C64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![C64::new(0.0, 0.0); c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * r;
        }
        c = next;
    }
    c.iter().map(|z| z.re).collect()
}

/// Roots of a real polynomial given in descending powers, from the eigenvalues
/// of its companion matrix followed by a few Newton refinements. The result is
/// conjugate-closed.
pub fn poly_roots(desc: &[f64]) -> Result<Vec<C64>> {
    let lead = desc.first().copied().unwrap_or(0.0);
    if lead == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let n = desc.len() - 1;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        comp[(0, j)] = -desc[j + 1] / lead;
    }
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    let raw = eigenvalues(&comp);
    let upper: Vec<C64> = raw.iter().copied().filter(|z| z.im > 0.0).collect();
    let real: Vec<C64> = raw.iter().copied().filter(|z| z.im == 0.0).collect();
    if 2 * upper.len() + real.len() != n {
        return Ok(raw);
    }
    let mut out = Vec::with_capacity(n);
    for z in real {
        let z = polish(desc, z);
        out.push(C64::new(z.re, 0.0));
    }
    for z in upper {
        let z = polish(desc, z);
        out.push(z);
        out.push(z.conj());
    }
    Ok(out)
}

fn polish(desc: &[f64], z0: C64) -> C64 {
    let mut z = z0;
    let mut fz = horner(desc, z).norm();
    for _ in 0..4 {
        let d = horner_deriv(desc, z);
        if d.norm() == 0.0 {
            break;
        }
        let cand = z - horner(desc, z) / d;
        let fc = horner(desc, cand).norm();
        if !(fc < fz) {
            break;
        }
        z = cand;
        fz = fc;
    }
    z
}

/// Right eigenvector of `a` for an eigenvalue estimate `lambda`, by shifted
/// inverse iteration. Normalized to unit 2-norm.
pub fn eigenvector(a: &DMatrix<C64>, lambda: C64) -> DVector<C64> {
    let n = a.nrows();
    let shift = lambda + C64::new(1.0, 1.0) * (1e-10 * lambda.norm().max(1.0));
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] -= shift;
    }
    let lu = m.lu();
    let mut x = DVector::from_element(n, C64::new(1.0, 0.0));
    for _ in 0..6 {
        match lu.solve(&x) {
            Some(y) => {
                let nrm = y.norm();
                if !(nrm.is_finite() && nrm > 0.0) {
                    break;
                }
                x = y.unscale(nrm);
            }
            None => break,
        }
    }
    x
}

/// Normalized participation factors `|v_k w_k| / Σ |v_i w_i|` of each state in
/// the mode `lambda` of `a`.
pub fn participation(a: &DMatrix<f64>, lambda: C64) -> Vec<f64> {
    // Diagonal similarity leaves v_k w_k unchanged and conditions the solves.
    let ac = balance(a).0.map(|v| C64::new(v, 0.0));
    let v = eigenvector(&ac, lambda);
    let w = eigenvector(&ac.transpose(), lambda);
    let p: Vec<f64> = v.iter().zip(w.iter()).map(|(a, b)| (a * b).norm()).collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.iter().map(|x| x / total).collect()
    } else {
        p
    }
}

/// Complex participation factors `v_k w_k / (wᵀv)` of mode `lambda`; they sum
/// to one. Partial sums stay meaningful for nearly repeated eigenvalues,
/// where the magnitudes `|v_k w_k|` blow up and cancel.
pub fn participation_factors(a: &DMatrix<f64>, lambda: C64) -> Vec<C64> {
    let ac = balance(a).0.map(|v| C64::new(v, 0.0));
    let v = eigenvector(&ac, lambda);
    let w = eigenvector(&ac.transpose(), lambda);
    let p: Vec<C64> = v.iter().zip(w.iter()).map(|(a, b)| a * b).collect();
    let total: C64 = p.iter().sum();
    if total.norm() > 0.0 {
        p.iter().map(|x| x / total).collect()
    } else {
        p
    }
}

/// Frequency in Hz and damping ratio of a continuous-time pole.
pub fn mode_of(s: C64) -> (f64, f64) {
    let mag = s.norm();
    let hz = s.im.abs() / (2.0 * core::f64::consts::PI);
    let zeta = if mag > 0.0 { -s.re / mag } else { 1.0 };
    (hz, zeta)
}

/// Principal complex logarithm.
pub fn cln(z: C64) -> C64 {
    ComplexField::ln(z)
}
