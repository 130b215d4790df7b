//! Per-group wide-area controller: canonical realization of the selected
//! loop, discrete LQR gain, and a Kalman filter feeding `u = −K x̂`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::clock::{timed, Clock};
use crate::error::invalid;
use crate::linalg::{max_abs, spectral_radius, symmetrize};
use crate::modal::SelectedLoop;
use crate::sysid::{ArxCommonDen, Pair};
use crate::{Error, Result, C64};

/// Discrete-time state-space model `x⁺ = Ax + Bu`, `y = Cx + Du`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub ts: f64,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>, ts: f64) -> Result<Self> {
        let n = a.nrows();
        let check = |ctx, exp, got| {
            if exp == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: exp,
                    found: got,
                })
            }
        };
        check("A columns", n, a.ncols())?;
        check("B rows", n, b.nrows())?;
        check("C columns", n, c.ncols())?;
        check("D rows", c.nrows(), d.nrows())?;
        check("D columns", b.ncols(), d.ncols())?;
        if !(ts > 0.0) {
            return Err(invalid("ts", "sample period must be positive"));
        }
        Ok(StateSpace { a, b, c, d, ts })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `C (zI − A)⁻¹ B + D`.
    pub fn transfer(&self, z: C64) -> Result<DMatrix<C64>> {
        let n = self.order();
        let mut m = self.a.map(|v| C64::new(-v, 0.0));
        for i in 0..n {
            m[(i, i)] += z;
        }
        let bc = self.b.map(|v| C64::new(v, 0.0));
        let x = m.lu().solve(&bc).ok_or(Error::Singular("resolvent"))?;
        Ok(self.c.map(|v| C64::new(v, 0.0)) * x + self.d.map(|v| C64::new(v, 0.0)))
    }

    pub fn is_stable(&self) -> bool {
        spectral_radius(&self.a) < 1.0
    }
}

fn trim_trailing(c: &[f64]) -> Vec<f64> {
    let mut v = c.to_vec();
    while v.len() > 1 && *v.last().unwrap() == 0.0 {
        v.pop();
    }
    v
}

/// Controllable canonical form of `N(z⁻¹)/A(z⁻¹)` (coefficients ascending in
/// `z⁻¹`): first row of `A` is `−a₁ … −aₙ`, ones on the subdiagonal, `B = e₁`.
pub fn realize_tf(num: &[f64], den: &[f64], ts: f64) -> Result<StateSpace> {
    let den = trim_trailing(den);
    if den.is_empty() || den[0] == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let num = trim_trailing(num);
    let n = (den.len() - 1).max(num.len().saturating_sub(1));
    if n == 0 {
        return Err(invalid("den", "realization needs order at least 1"));
    }
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0) / den[0];
    let d0 = at(&num, 0);
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        a[(0, j)] = -at(&den, j + 1);
    }
    for i in 1..n {
        a[(i, i - 1)] = 1.0;
    }
    let mut b = DMatrix::zeros(n, 1);
    b[(0, 0)] = 1.0;
    let c = DMatrix::from_fn(1, n, |_, j| at(&num, j + 1) - d0 * at(&den, j + 1));
    StateSpace::new(a, b, c, DMatrix::from_element(1, 1, d0), ts)
}

/// Realization of one loop of an identified model.
pub fn realize(model: &ArxCommonDen, pair: Pair) -> Result<StateSpace> {
    realize_tf(&model.num_poly(pair)?, &model.den_poly(), model.ts)
}

/// Converged (or best) discrete Riccati solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    pub gain: DMatrix<f64>,
    pub riccati: DMatrix<f64>,
    pub rho: f64,
    pub horizon_used: usize,
    pub converged: bool,
}

pub const LQR_TOL: f64 = 1e-9;
pub const LQR_MAX_ITER: usize = 10_000;

/// Riccati iteration from `P = 0` with `Q = CᵀC`, `R = ρI` until
/// `‖P_new − P‖_∞ ≤ tol`.
pub fn dlqr(ss: &StateSpace, rho: f64, tol: f64, max_iter: usize) -> Result<LqrSolution> {
    if !(rho > 0.0) {
        return Err(invalid("rho", "must be positive"));
    }
    let q = ss.c.transpose() * &ss.c;
    let r = DMatrix::<f64>::identity(ss.inputs(), ss.inputs()) * rho;
    let (a, b) = (&ss.a, &ss.b);
    let gain_for = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let s = &r + b.transpose() * p * b;
        let rhs = b.transpose() * p * a;
        s.cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or(Error::Singular("R + BᵀPB"))
    };
    let mut p = DMatrix::zeros(ss.order(), ss.order());
    let mut converged = false;
    let mut used = 0;
    for it in 1..=max_iter {
        used = it;
        let k = gain_for(&p)?;
        let mut next = &q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        symmetrize(&mut next);
        let diff = max_abs(&(&next - &p));
        p = next;
        if !diff.is_finite() {
            break;
        }
        if diff <= tol {
            converged = true;
            break;
        }
    }
    let gain = gain_for(&p)?;
    Ok(LqrSolution {
        gain,
        riccati: p,
        rho,
        horizon_used: used,
        converged,
    })
}

/// Kalman filter state: estimate, covariance, gain and noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x_hat: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub q_noise: DMatrix<f64>,
    pub r_noise: DMatrix<f64>,
    pub h_mat: DMatrix<f64>,
}

impl KalmanState {
    pub fn new(
        h_mat: DMatrix<f64>,
        q_noise: DMatrix<f64>,
        r_noise: DMatrix<f64>,
        x0: DVector<f64>,
        cov0: DMatrix<f64>,
    ) -> Result<Self> {
        let n = h_mat.ncols();
        let m = h_mat.nrows();
        if q_noise.shape() != (n, n) || cov0.shape() != (n, n) || x0.len() != n {
            return Err(Error::DimensionMismatch {
                context: "Kalman state size",
                expected: n,
                found: x0.len(),
            });
        }
        if r_noise.shape() != (m, m) {
            return Err(Error::DimensionMismatch {
                context: "measurement noise size",
                expected: m,
                found: r_noise.nrows(),
            });
        }
        Ok(KalmanState {
            x_hat: x0,
            cov: cov0,
            gain: DMatrix::zeros(n, m),
            q_noise,
            r_noise,
            h_mat,
        })
    }

    /// `x̂ = 0`, `L = I`, `Q_n = qI`, `R_n = rI`, `H = C`.
    pub fn for_realization(ss: &StateSpace, q: f64, r: f64) -> Self {
        let n = ss.order();
        let m = ss.outputs();
        KalmanState {
            x_hat: DVector::zeros(n),
            cov: DMatrix::identity(n, n),
            gain: DMatrix::zeros(n, m),
            q_noise: DMatrix::identity(n, n) * q,
            r_noise: DMatrix::identity(m, m) * r,
            h_mat: ss.c.clone(),
        }
    }

    /// `x̄ = A x̂ + B u`, `L̄ = A L Aᵀ + Q_n`.
    pub fn predict_with(&mut self, a: &DMatrix<f64>, b: &DMatrix<f64>, u: &DVector<f64>) {
        self.x_hat = a * &self.x_hat + b * u;
        let mut l = a * &self.cov * a.transpose() + &self.q_noise;
        symmetrize(&mut l);
        self.cov = l;
    }

    pub fn predict(&mut self, ss: &StateSpace, u: &DVector<f64>) {
        self.predict_with(&ss.a, &ss.b, u);
    }

    /// `G = L̄Hᵀ (H L̄ Hᵀ + R_n)⁻¹`, stored and returned.
    pub fn compute_gain(&mut self) -> Result<&DMatrix<f64>> {
        let h = &self.h_mat;
        let s = h * &self.cov * h.transpose() + &self.r_noise;
        let pht = &self.cov * h.transpose();
        let g = match s.clone().cholesky() {
            Some(c) => c.solve(&pht.transpose()).transpose(),
            None => {
                let inv = s.try_inverse().ok_or(Error::Singular("innovation covariance"))?;
                pht * inv
            }
        };
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("innovation covariance"));
        }
        self.gain = g;
        Ok(&self.gain)
    }

    /// `x̂ = x̄ + G(z − Hx̄)`, `L = L̄ − G H L̄`.
    pub fn correct(&mut self, z: &DVector<f64>) {
        let innov = z - &self.h_mat * &self.x_hat;
        self.x_hat += &self.gain * innov;
        let mut l = &self.cov - &self.gain * &self.h_mat * &self.cov;
        symmetrize(&mut l);
        self.cov = l;
    }

    /// Gain the filter converges to on `(a, h)` by iterating the covariance
    /// recursion until the gain moves less than `tol`.
    pub fn steady_state_gain(&self, a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
        let mut kf = self.clone();
        let zero_b = DMatrix::zeros(a.nrows(), 1);
        let zero_u = DVector::zeros(1);
        let mut prev: Option<DMatrix<f64>> = None;
        for _ in 0..max_iter {
            kf.predict_with(a, &zero_b, &zero_u);
            let g = kf.compute_gain()?.clone();
            let l = &kf.cov - &g * &kf.h_mat * &kf.cov;
            kf.cov = l;
            symmetrize(&mut kf.cov);
            if let Some(p) = &prev {
                if max_abs(&(&g - p)) <= tol {
                    return Ok(g);
                }
            }
            prev = Some(g);
        }
        prev.ok_or(Error::Singular("steady-state Kalman gain"))
    }
}

/// Design weights and limits for [`synthesize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerTuning {
    /// Control weight in normalized units.
    pub rho: f64,
    pub q_noise: f64,
    pub r_noise: f64,
    pub u_limit: f64,
    pub lqr_tol: f64,
    pub lqr_max_iter: usize,
}

impl Default for ControllerTuning {
    fn default() -> Self {
        ControllerTuning {
            rho: 10.0,
            q_noise: 1e-5,
            r_noise: 1e-3,
            u_limit: 0.05,
            lqr_tol: LQR_TOL,
            lqr_max_iter: LQR_MAX_ITER,
        }
    }
}

/// Output and input levels that map physical signals to the unit-scale
/// signals the controller was designed on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalScale {
    pub output: f64,
    pub input: f64,
}

/// Controller for one coherent group.
#[derive(Debug, Clone, PartialEq)]
pub struct WacController {
    pub selected: SelectedLoop,
    /// Realization of the normalized loop `G·input/output`.
    pub ss: StateSpace,
    pub lqr: LqrSolution,
    pub kf: KalmanState,
    pub u_limit: f64,
    pub scale: SignalScale,
    pub elapsed: f64,
    /// Last control value applied (physical units).
    pub last_u: f64,
    pub unstable_realization: bool,
}

/// Realization, LQR and Kalman filter for the selected loop of a (reduced)
/// model.
pub fn synthesize(
    model: &ArxCommonDen,
    selected: &SelectedLoop,
    tuning: &ControllerTuning,
    clock: &dyn Clock,
) -> Result<WacController> {
    if !(tuning.u_limit > 0.0) {
        return Err(invalid("u_limit", "must be positive"));
    }
    let (res, elapsed) = timed(clock, || -> Result<WacController> {
        let scale = SignalScale {
            output: model.output_scale,
            input: model.input_scale,
        };
        let mut ss = realize(model, selected.pair())?;
        ss.c *= scale.input / scale.output;
        ss.d *= scale.input / scale.output;
        let lqr = dlqr(&ss, tuning.rho, tuning.lqr_tol, tuning.lqr_max_iter)?;
        let kf = KalmanState::for_realization(&ss, tuning.q_noise, tuning.r_noise);
        let unstable_realization = !ss.is_stable();
        Ok(WacController {
            selected: *selected,
            ss,
            lqr,
            kf,
            u_limit: tuning.u_limit,
            scale,
            elapsed: 0.0,
            last_u: 0.0,
            unstable_realization,
        })
    });
    let mut c = res?;
    c.elapsed = elapsed;
    Ok(c)
}

impl WacController {
    /// One predict-gain-correct cycle on measurement `z`, then
    /// `u = clamp(−K x̂, ±u_limit)`.
    pub fn step(&mut self, z: f64) -> f64 {
        let u_prev = DVector::from_element(1, self.last_u / self.scale.input);
        self.kf.predict(&self.ss, &u_prev);
        if self.kf.compute_gain().is_ok() && z.is_finite() {
            self.kf
                .correct(&DVector::from_element(1, z / self.scale.output));
        }
        let un = -(&self.lqr.gain * &self.kf.x_hat)[0];
        let u = un * self.scale.input;
        let u = if u.is_finite() {
            u.clamp(-self.u_limit, self.u_limit)
        } else {
            0.0
        };
        self.last_u = u;
        u
    }

    /// Clears the estimator and the applied control.
    pub fn reset(&mut self) {
        let n = self.ss.order();
        self.kf.x_hat = DVector::zeros(n);
        self.kf.cov = DMatrix::identity(n, n);
        self.last_u = 0.0;
    }

    pub fn order(&self) -> usize {
        self.ss.order()
    }
}
