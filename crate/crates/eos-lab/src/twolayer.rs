//! Two-layer linear network `f(x) = A^T W x / sqrt(m)` trained by full-batch GD
//! on the mean squared error, with the closed-form matrices that govern its
//! residual dynamics and exact one-step identities for them.

use crate::dataset::Dataset;
use crate::linalg::{self, dot, norm, norm_sq, orthonormal_columns, sym_eig, LinalgError, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TwoLayerError {
    #[error("width m = {0} must be even")]
    OddWidth(usize),
    #[error("half width m/2 = {half} is smaller than input dim d = {d}")]
    TooNarrow { half: usize, d: usize },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("divergence: non-finite parameters after a GD step")]
    Diverged,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    /// Output weights, length `m`.
    pub a: Vec<f64>,
    /// Hidden weights, `m x d`.
    pub w: Matrix,
}

impl TwoLayerNet {
    pub fn new(a: Vec<f64>, w: Matrix) -> Result<Self, TwoLayerError> {
        if a.len() != w.rows() {
            return Err(TwoLayerError::Shape(format!("A has length {} but W has {} rows", a.len(), w.rows())));
        }
        Ok(TwoLayerNet { a, w })
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn d(&self) -> usize {
        self.w.cols()
    }

    pub fn anorm2(&self) -> f64 {
        norm_sq(&self.a)
    }

    /// `F = (A^T W X)^T / sqrt(m)`, one output per column of `X`.
    pub fn forward(&self, x: &Matrix) -> Result<Vec<f64>, TwoLayerError> {
        if x.rows() != self.d() {
            return Err(TwoLayerError::Shape(format!("X has {} rows, net expects d = {}", x.rows(), self.d())));
        }
        // Sum the two halves separately so antisymmetric pairs cancel bit-exactly.
        let half = self.m() / 2;
        let mut u = vec![0.0; self.d()];
        let mut lower = vec![0.0; self.d()];
        for q in 0..self.m() {
            let acc = if q < half { &mut u } else { &mut lower };
            linalg::axpy(self.a[q], self.w.row(q), acc);
        }
        linalg::axpy(1.0, &lower, &mut u);
        let s = 1.0 / (self.m() as f64).sqrt();
        Ok(x.tr_matvec(&u).into_iter().map(|v| v * s).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().all(|v| v.is_finite()) && self.w.is_finite()
    }
}

/// Antisymmetric output pairs and duplicated hidden halves, so `F(0) = 0` and
/// `W^T W = (m/d) w_scale^2 I`.
pub fn init_symmetric(m: usize, d: usize, seed: u64, w_scale: f64) -> Result<TwoLayerNet, TwoLayerError> {
    if !m.is_multiple_of(2) {
        return Err(TwoLayerError::OddWidth(m));
    }
    let half = m / 2;
    if half < d || d == 0 {
        return Err(TwoLayerError::TooNarrow { half, d });
    }
    let q = orthonormal_columns(half, d, seed ^ 0x5EED_0001)?;
    let c = (m as f64 / (2.0 * d as f64)).sqrt() * w_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0002);
    let top: Vec<f64> = (0..half).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let mut a = top.clone();
    a.extend(top.iter().map(|v| -v));
    let w = Matrix::from_fn(m, d, |i, j| c * q[(i % half, j)]);
    Ok(TwoLayerNet { a, w })
}

/// Sharpness at symmetric initialization, `2 lambda_1 (d+1) / (n d)`.
pub fn lambda0(ds: &Dataset) -> f64 {
    let (n, d) = (ds.n() as f64, ds.d() as f64);
    2.0 * ds.lambda1() * (d + 1.0) / (n * d)
}

/// `n d / ((d+1) lambda_1)`, which equals `2 / Lambda(0)`.
pub fn eta_max(ds: &Dataset) -> f64 {
    let (n, d) = (ds.n() as f64, ds.d() as f64);
    n * d / ((d + 1.0) * ds.lambda1())
}

/// Gradients of the MSE loss: `(dL/dA, dL/dW)`.
pub fn gradients(net: &TwoLayerNet, ds: &Dataset, resid: &[f64]) -> (Vec<f64>, Matrix) {
    let n = ds.n() as f64;
    let c = 2.0 / (n * (net.m() as f64).sqrt());
    let xd = ds.x().matvec(resid);
    let ga = linalg::scale(&net.w.matvec(&xd), c);
    let gw = Matrix::outer(&net.a, &xd).scaled(c);
    (ga, gw)
}

/// One full-batch GD step; both layers use time-`t` values.
pub fn gd_step(net: &TwoLayerNet, ds: &Dataset, eta: f64) -> Result<TwoLayerNet, TwoLayerError> {
    let f = net.forward(ds.x())?;
    let resid = linalg::sub(&f, ds.y());
    let (ga, gw) = gradients(net, ds, &resid);
    let mut a = net.a.clone();
    linalg::axpy(-eta, &ga, &mut a);
    let mut w = net.w.clone();
    w.add_scaled(-eta, &gw);
    let next = TwoLayerNet { a, w };
    if !next.is_finite() {
        return Err(TwoLayerError::Diverged);
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMatrices {
    /// `(2/(mn)) (||A||^2 K + X^T W^T W X)`.
    pub m: Matrix,
    /// `M - (4 eta / (n^2 m)) (D^T F) K`.
    pub mstar: Matrix,
    /// `(2/(mn)) (X^T W^T W X - (m/d) K)`.
    pub gamma: Matrix,
    /// `v_1^T M v_1` with `v_1` the top eigenvector of `K`.
    pub lambda_star: f64,
    pub dtf: f64,
}

/// `d x d` cores `Q` with `M = X^T Q_M X`, `M* = X^T Q_M* X`, `Gamma = X^T Q_Gamma X`
/// and output-layer part `M_A = X^T Q_A X`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cores {
    pub m: Matrix,
    pub mstar: Matrix,
    pub gamma: Matrix,
    pub m_a: Matrix,
}

/// `S = (X X^T)^{1/2}`. Nonzero eigenvalues of `X^T Q X` equal those of `S Q S`,
/// so spectra of the two-layer matrices can be read off `d x d` problems.
#[derive(Debug, Clone)]
pub struct DataRoot {
    s: Matrix,
    /// `X^T S^+` (n x d): lifts a core eigenvector to an eigenvector of `X^T Q X`.
    lift: Matrix,
}

impl DataRoot {
    pub fn new(ds: &Dataset) -> Result<Self, TwoLayerError> {
        let xxt = ds.x().matmul_tr(ds.x());
        let e = sym_eig(&xxt)?;
        let d = ds.d();
        let cut = crate::dataset::RANK_TOL * e.values.first().copied().unwrap_or(0.0).max(0.0);
        let mut s = Matrix::zeros(d, d);
        let mut pinv = Matrix::zeros(d, d);
        for (lam, v) in e.values.iter().zip(&e.vectors) {
            let r = lam.max(0.0).sqrt();
            let ri = if *lam > cut { 1.0 / r } else { 0.0 };
            for i in 0..d {
                for j in 0..d {
                    s[(i, j)] += r * v[i] * v[j];
                    pinv[(i, j)] += ri * v[i] * v[j];
                }
            }
        }
        s.symmetrize();
        let lift = ds.x().tr_matmul(&pinv);
        Ok(DataRoot { s, lift })
    }

    /// Top two eigenvalues of `X^T Q X` and a unit top eigenvector (length n).
    pub fn top_pair(&self, q: &Matrix) -> Result<(f64, f64, Vec<f64>), TwoLayerError> {
        let mut c = self.s.matmul(q).matmul(&self.s);
        c.symmetrize();
        let mut vals = linalg::sym_eigvals(&c)?;
        let u = match linalg::top_k_eig(&c, 1, 1e-12, 10_000) {
            Ok(e) => e.vectors[0].clone(),
            Err(LinalgError::NotConverged { .. }) => sym_eig(&c)?.vectors[0].clone(),
            Err(e) => return Err(e.into()),
        };
        let n = self.lift.rows();
        // Zero eigenvalues of the n x n matrix not represented in the core.
        if n > vals.len() {
            vals.push(0.0);
            vals.sort_by(|a, b| b.total_cmp(a));
        }
        let v = linalg::normalized(&self.lift.matvec(&u));
        Ok((vals[0], vals.get(1).copied().unwrap_or(0.0), v))
    }

    fn core_spectrum(&self, q: &Matrix) -> Result<Vec<f64>, TwoLayerError> {
        let mut c = self.s.matmul(q).matmul(&self.s);
        c.symmetrize();
        Ok(linalg::sym_eigvals(&c)?)
    }

    /// Spectral norm of `X^T Q X`.
    pub fn sym_norm(&self, q: &Matrix) -> Result<f64, TwoLayerError> {
        Ok(self.core_spectrum(q)?.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }

    /// Largest eigenvalue of `X^T Q X` (at least 0 when `d < n`).
    pub fn top_eig(&self, q: &Matrix) -> Result<f64, TwoLayerError> {
        Ok(self.core_spectrum(q)?.first().copied().unwrap_or(0.0))
    }
}

/// Network plus everything derived from it at one time step.
#[derive(Debug, Clone)]
pub struct TwoLayerState {
    pub net: TwoLayerNet,
    pub f: Vec<f64>,
    /// Residual `D = F - Y`.
    pub resid: Vec<f64>,
    pub mats: StepMatrices,
    pub cores: Cores,
}

impl TwoLayerState {
    pub fn new(net: TwoLayerNet, ds: &Dataset, eta: f64) -> Result<Self, TwoLayerError> {
        let f = net.forward(ds.x())?;
        let resid = linalg::sub(&f, ds.y());
        let (mats, cores) = matrices_from(&net, ds, eta, &f, &resid);
        Ok(TwoLayerState { net, f, resid, mats, cores })
    }

    pub fn loss(&self) -> f64 {
        norm_sq(&self.resid) / self.resid.len() as f64
    }
}

fn matrices_from(net: &TwoLayerNet, ds: &Dataset, eta: f64, f: &[f64], resid: &[f64]) -> (StepMatrices, Cores) {
    let (n, m, d) = (ds.n() as f64, net.m() as f64, net.d() as f64);
    let k = ds.gram();
    let wtw = net.w.gram();
    let c = 2.0 / (m * n);
    let dtf = dot(resid, f);
    let m_a = wtw.scaled(c);
    let mut core_m = m_a.clone();
    core_m.add_diag(c * net.anorm2());
    let mut core_mstar = core_m.clone();
    core_mstar.add_diag(-4.0 * eta / (n * n * m) * dtf);
    let mut core_gamma = m_a.clone();
    core_gamma.add_diag(-c * m / d);
    let cores = Cores { m: core_m, mstar: core_mstar, gamma: core_gamma, m_a };
    let xg = ds.x().tr_matmul(&wtw);
    let mut xwwx = xg.matmul(ds.x());
    xwwx.symmetrize();
    let mut gram = k.scaled(net.anorm2());
    gram.add_scaled(1.0, &xwwx);
    gram.scale_mut(c);
    let mut gamma = xwwx;
    gamma.add_scaled(-m / d, k);
    gamma.scale_mut(c);
    let mut mstar = gram.clone();
    mstar.add_scaled(-4.0 * eta / (n * n * m) * dtf, k);
    let v1 = ds.v1();
    let lambda_star = gram.quad(v1, v1);
    (StepMatrices { m: gram, mstar, gamma, lambda_star, dtf }, cores)
}

pub fn step_matrices(net: &TwoLayerNet, ds: &Dataset, eta: f64) -> Result<StepMatrices, TwoLayerError> {
    Ok(TwoLayerState::new(net.clone(), ds, eta)?.mats)
}

/// `||D(t+1) - (I - eta M*(t)) D(t)|| / max(||D(t)||, 1)`.
pub fn check_residual_update(s0: &TwoLayerState, s1: &TwoLayerState, eta: f64) -> f64 {
    let md = s0.mats.mstar.matvec(&s0.resid);
    let mut pred = s0.resid.clone();
    linalg::axpy(-eta, &md, &mut pred);
    norm(&linalg::sub(&s1.resid, &pred)) / norm(&s0.resid).max(1.0)
}

/// Right-hand side of the exact one-step Gram update.
pub fn gram_update_rhs(ds: &Dataset, s0: &TwoLayerState, eta: f64) -> Matrix {
    let (n, m) = (ds.n() as f64, s0.net.m() as f64);
    let k = ds.gram();
    let (f, dv) = (&s0.f, &s0.resid);
    let kd = k.matvec(dv);
    let ftd = dot(f, dv);
    // F D^T K + K D F^T = F (K D)^T + (K D) F^T.
    let sym = Matrix::outer(f, &kd).add(&Matrix::outer(&kd, f));
    let mut rhs = k.scaled(2.0 * ftd);
    rhs.add_scaled(1.0, &sym);
    rhs.scale_mut(-4.0 * eta / (n * n * m));
    let wxd = s0.net.w.matvec(&ds.x().matvec(dv));
    let c2 = 8.0 * eta * eta / (n * n * n * m * m);
    rhs.add_scaled(c2 * norm_sq(&wxd), k);
    rhs.add_scaled(c2 * s0.net.anorm2(), &Matrix::outer(&kd, &kd));
    rhs
}

/// `||M(t+1) - M(t) - RHS|| / ||M(t)||` in Frobenius norm.
pub fn check_gram_update(ds: &Dataset, s0: &TwoLayerState, s1: &TwoLayerState, eta: f64) -> f64 {
    let rhs = gram_update_rhs(ds, s0, eta);
    let mut diff = s1.mats.m.sub(&s0.mats.m);
    diff.add_scaled(-1.0, &rhs);
    diff.frobenius() / s0.mats.m.frobenius().max(f64::MIN_POSITIVE)
}

/// Predicted one-step change of `Lambda* = v_1^T M v_1` (six-term bracket).
pub fn key_equation_rhs(ds: &Dataset, s0: &TwoLayerState, eta: f64) -> f64 {
    let (n, m, d) = (ds.n() as f64, s0.net.m() as f64, s0.net.d() as f64);
    let lambda1 = ds.lambda1();
    let v1 = ds.v1();
    let (f, dv) = (&s0.f, &s0.resid);
    let s = dot(dv, v1);
    let r = linalg::project_out(dv, v1);
    let gamma = &s0.mats.gamma;
    let gr = gamma.matvec(&r);
    let bracket = dot(f, dv) + dot(f, v1) * s
        - 0.5 * eta * s * s * s0.mats.lambda_star
        - 0.5 * eta * dot(&r, &gr)
        - eta * dot(&gr, v1) * s
        - eta / (m * n) * (m / d) * ds.gram().quad(&r, &r);
    -8.0 * eta * lambda1 / (m * n * n) * bracket
}

/// `|Delta Lambda* - RHS| / max(|Lambda*(t)|, 1)`.
pub fn check_key_equation(ds: &Dataset, s0: &TwoLayerState, s1: &TwoLayerState, eta: f64) -> f64 {
    let lhs = s1.mats.lambda_star - s0.mats.lambda_star;
    (lhs - key_equation_rhs(ds, s0, eta)).abs() / s0.mats.lambda_star.abs().max(1.0)
}

/// `|Delta ||A||^2 - (-(4 eta/n) F^T D + eta^2 ||dL/dA||^2)| / max(||A||^2, 1)`.
pub fn check_anorm_update(ds: &Dataset, s0: &TwoLayerState, s1: &TwoLayerState, eta: f64) -> f64 {
    let n = ds.n() as f64;
    let (ga, _) = gradients(&s0.net, ds, &s0.resid);
    let pred = -4.0 * eta / n * dot(&s0.f, &s0.resid) + eta * eta * norm_sq(&ga);
    let lhs = s1.net.anorm2() - s0.net.anorm2();
    (lhs - pred).abs() / s0.net.anorm2().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolation {
    pub ks: f64,
    /// Spectral norm of `M* - (1-ks) M(t) - ks M(t+1)`.
    pub residual: f64,
    /// `ks` outside `[0, 1)`.
    pub out_of_range: bool,
}

/// Least-squares `ks` with `M* ~ (1-ks) M(t) + ks M(t+1)` in Frobenius norm.
pub fn check_interpolation(root: &DataRoot, s0: &TwoLayerState, s1: &TwoLayerState) -> Result<Interpolation, TwoLayerError> {
    let e = s0.mats.mstar.sub(&s0.mats.m);
    let delta = s1.mats.m.sub(&s0.mats.m);
    let dd = norm_sq(delta.as_slice());
    let ks = if dd == 0.0 { 0.0 } else { dot(e.as_slice(), delta.as_slice()) / dd };
    let mut q = s0.cores.mstar.sub(&s0.cores.m);
    q.add_scaled(-ks, &s1.cores.m.sub(&s0.cores.m));
    Ok(Interpolation { ks, residual: root.sym_norm(&q)?, out_of_range: !(0.0..1.0).contains(&ks) })
}
