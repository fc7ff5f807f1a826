//! Dense row-major matrices, a cyclic Jacobi eigensolver, power iteration with
//! Hotelling deflation, and seeded orthonormal factors.
//!
//! Everything here is `f64` and allocation-per-call; sizes of interest are a
//! few hundred rows, so clarity wins over blocking or SIMD.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt;
use std::ops::{Index, IndexMut};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not symmetric: max |S - S^T| = {asym:.3e} exceeds {limit:.3e}")]
    NotSymmetric { asym: f64, limit: f64 },
    #[error("power iteration for eigenpair {index} did not converge in {iterations} iterations (residual {residual:.3e})")]
    NotConverged { index: usize, iterations: usize, residual: f64 },
    #[error("non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row: Vec<String> = self.row(i).iter().take(8).map(|v| format!("{v:.6e}")).collect();
            writeln!(f, "  {}", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Shape(format!("{} entries for a {rows}x{cols} matrix", data.len())));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite(k / cols.max(1), k % cols.max(1)));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::Shape("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let c = cols.len();
        let r = cols.first().map_or(0, |v| v.len());
        if cols.iter().any(|v| v.len() != r) {
            return Err(LinalgError::Shape("columns of unequal length".into()));
        }
        Ok(Self::from_fn(r, c, |i, j| cols[j][i]))
    }

    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[f64]) {
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn transpose(&self) -> Matrix {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T * other` without forming the transpose.
    pub fn tr_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "tr_matmul shape mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let brow = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn matmul_tr(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_tr shape mismatch");
        Self::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    /// `self^T * self`, symmetric by construction.
    pub fn gram(&self) -> Matrix {
        let mut g = self.tr_matmul(self);
        g.symmetrize();
        g
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self^T * x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "tr_matvec shape mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    /// `u^T S v`.
    pub fn quad(&self, u: &[f64], v: &[f64]) -> f64 {
        dot(u, &self.matvec(v))
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        let mut out = self.clone();
        out.add_scaled(1.0, other);
        out
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        let mut out = self.clone();
        out.add_scaled(-1.0, other);
        out
    }

    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "hadamard shape mismatch");
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect() }
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest |S_ij - S_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Replace with `(S + S^T) / 2`.
    pub fn symmetrize(&mut self) {
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = m;
                self[(j, i)] = m;
            }
        }
    }

    pub fn add_diag(&mut self, s: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += s;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// Unit vector in the direction of `a`; zero stays zero.
pub fn normalized(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    if n == 0.0 {
        a.to_vec()
    } else {
        scale(a, 1.0 / n)
    }
}

/// `(I - v v^T) x` for unit `v`.
pub fn project_out(x: &[f64], v: &[f64]) -> Vec<f64> {
    let c = dot(x, v);
    let mut out = x.to_vec();
    axpy(-c, v, &mut out);
    out
}

/// Eigenpairs sorted by descending eigenvalue; `vectors[i]` pairs with `values[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl EigenResult {
    /// `sum_i values[i] v_i v_i^T`.
    pub fn reconstruct(&self, n: usize) -> Matrix {
        let mut out = Matrix::zeros(n, n);
        for (lam, v) in self.values.iter().zip(&self.vectors) {
            for i in 0..n {
                let s = lam * v[i];
                for j in 0..n {
                    out[(i, j)] += s * v[j];
                }
            }
        }
        out
    }
}

fn check_symmetric(s: &Matrix) -> Result<(), LinalgError> {
    if !s.is_square() {
        return Err(LinalgError::Shape(format!("expected square matrix, got {}x{}", s.rows(), s.cols())));
    }
    let limit = 1e-10 * s.max_abs().max(f64::MIN_POSITIVE);
    let asym = s.asymmetry();
    if asym > limit {
        return Err(LinalgError::NotSymmetric { asym, limit });
    }
    Ok(())
}

/// Full symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(s: &Matrix) -> Result<EigenResult, LinalgError> {
    check_symmetric(s)?;
    let n = s.rows();
    let mut a = s.clone();
    a.symmetrize();
    let a = &mut a.data;
    // Rows of `vt` are the eigenvector estimates.
    let mut vt = Matrix::identity(n).data;
    let total = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= 1e-16 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Skip rotations that would not change the diagonal in floating point.
                if apq.abs() * 1e18 < app.abs().min(aqq.abs()) {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[p * n + k];
                    let akq = a[q * n + k];
                    let np = c * akp - sn * akq;
                    let nq = sn * akp + c * akq;
                    a[p * n + k] = np;
                    a[k * n + p] = np;
                    a[q * n + k] = nq;
                    a[k * n + q] = nq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                let (head, tail) = vt.split_at_mut(q * n);
                let vp = &mut head[p * n..(p + 1) * n];
                let vq = &mut tail[..n];
                for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - sn * xq;
                    *y = sn * xp + c * xq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    Ok(EigenResult { values: order.iter().map(|&i| a[i * n + i]).collect(), vectors: order.iter().map(|&i| vt[i * n..(i + 1) * n].to_vec()).collect() })
}

/// Eigenvalues only (descending), via Householder tridiagonalization and
/// implicit QL. Cheaper than [`sym_eig`] when vectors are not needed.
pub fn sym_eigvals(s: &Matrix) -> Result<Vec<f64>, LinalgError> {
    check_symmetric(s)?;
    let n = s.rows();
    if n == 0 {
        return Ok(vec![]);
    }
    let mut a = s.clone();
    a.symmetrize();
    let a = &mut a.data;
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in (1..n).rev() {
        let l = i - 1;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[i * n + k].abs()).sum();
            if scale == 0.0 {
                e[i] = a[i * n + l];
                continue;
            }
            let mut h = 0.0;
            for k in 0..=l {
                a[i * n + k] /= scale;
                h += a[i * n + k] * a[i * n + k];
            }
            let f = a[i * n + l];
            let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
            e[i] = scale * g;
            h -= f * g;
            a[i * n + l] = f - g;
            let mut f = 0.0;
            for j in 0..=l {
                let mut g = 0.0;
                for k in 0..=j {
                    g += a[j * n + k] * a[i * n + k];
                }
                for k in (j + 1)..=l {
                    g += a[k * n + j] * a[i * n + k];
                }
                e[j] = g / h;
                f += e[j] * a[i * n + j];
            }
            let hh = f / (h + h);
            for j in 0..=l {
                let f = a[i * n + j];
                let g = e[j] - hh * f;
                e[j] = g;
                for k in 0..=j {
                    a[j * n + k] -= f * e[k] + g * a[i * n + k];
                }
            }
        } else {
            e[i] = a[i * n + l];
        }
    }
    for (i, di) in d.iter_mut().enumerate() {
        *di = a[i * n + i];
    }
    // Implicit QL on (d, e).
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(LinalgError::NotConverged { index: l, iterations: iter, residual: e[l].abs() });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|x, y| y.total_cmp(x));
    Ok(d)
}

/// Deterministic start vector: all-ones plus a small fixed ripple so that it is
/// never exactly orthogonal to structured eigenvectors such as the ones-vector complement.
fn start_vector(n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|i| 1.0 + 0.05 * ((i as f64 + 1.0) * 0.7548776662466927).sin()).collect();
    normalized(&v)
}

/// Top-`k` eigenpairs by power iteration with Hotelling deflation.
///
/// Convergence is declared when `||S v - mu v|| <= tol * |lambda_1|`. Intended for
/// positive semidefinite inputs; on indefinite matrices it returns the pairs of
/// largest magnitude.
pub fn top_k_eig(s: &Matrix, k: usize, tol: f64, max_iter: usize) -> Result<EigenResult, LinalgError> {
    check_symmetric(s)?;
    let n = s.rows();
    if k == 0 || k > n {
        return Err(LinalgError::Shape(format!("k = {k} outside 1..={n}")));
    }
    if tol <= 0.0 {
        return Err(LinalgError::Shape(format!("tolerance must be positive, got {tol}")));
    }
    let mut work = s.clone();
    work.symmetrize();
    let mut values = Vec::with_capacity(k);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut scale = 0.0f64;
    for index in 0..k {
        let mut x = start_vector(n);
        for prev in &vectors {
            x = project_out(&x, prev);
        }
        x = normalized(&x);
        let mut mu = 0.0;
        let mut converged = false;
        let mut residual = f64::INFINITY;
        for _ in 0..max_iter {
            let y = work.matvec(&x);
            mu = dot(&x, &y);
            let mut r = y.clone();
            axpy(-mu, &x, &mut r);
            residual = norm(&r);
            let ny = norm(&y);
            let reference = if index == 0 { mu.abs() } else { scale };
            if ny == 0.0 || residual <= tol * reference.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
            let mut next = scale_vec_owned(y, 1.0 / ny);
            for prev in &vectors {
                next = project_out(&next, prev);
            }
            x = normalized(&next);
        }
        if !converged {
            return Err(LinalgError::NotConverged { index, iterations: max_iter, residual });
        }
        if index == 0 {
            scale = mu.abs();
        }
        for i in 0..n {
            let s_i = mu * x[i];
            let row = work.row_mut(i);
            for (w, xj) in row.iter_mut().zip(&x) {
                *w -= s_i * xj;
            }
        }
        values.push(mu);
        vectors.push(x);
    }
    Ok(EigenResult { values, vectors })
}

fn scale_vec_owned(mut v: Vec<f64>, s: f64) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x *= s);
    v
}

/// Spectral norm of a symmetric matrix, `max |lambda_i|`.
///
/// Power iteration on `||S x||`, which is non-decreasing for symmetric `S`;
/// falls back to the full solver if the iteration stalls.
pub fn sym_spectral_norm(s: &Matrix) -> f64 {
    let n = s.rows();
    if n == 0 || s.max_abs() == 0.0 {
        return 0.0;
    }
    let mut x = start_vector(n);
    let mut est = 0.0;
    for it in 0..20_000 {
        let y = s.matvec(&x);
        let ny = norm(&y);
        if ny == 0.0 {
            break;
        }
        if it > 3 && (ny - est).abs() <= 1e-14 * ny {
            return ny;
        }
        est = ny;
        x = scale_vec_owned(y, 1.0 / ny);
    }
    match sym_eig(s) {
        Ok(e) => e.values.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        Err(_) => est,
    }
}

/// Smallest eigenvalue of a symmetric matrix whose spectrum lies in `[?, upper]`,
/// by power iteration on `upper * I - S`.
pub fn min_eig(s: &Matrix, upper: f64, tol: f64, max_iter: usize) -> Result<f64, LinalgError> {
    let mut shifted = s.scaled(-1.0);
    shifted.add_diag(upper);
    match top_k_eig(&shifted, 1, tol, max_iter) {
        Ok(e) => Ok(upper - e.values[0]),
        Err(LinalgError::NotConverged { .. }) => {
            let e = sym_eig(s)?;
            Ok(*e.values.last().unwrap_or(&0.0))
        }
        Err(e) => Err(e),
    }
}

/// `rows x cols` matrix with orthonormal columns, from a seeded Gaussian fill
/// orthonormalized by two passes of modified Gram-Schmidt.
pub fn orthonormal_columns(rows: usize, cols: usize, seed: u64) -> Result<Matrix, LinalgError> {
    if rows < cols {
        return Err(LinalgError::Shape(format!("need rows >= cols, got {rows} < {cols}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = (0..cols).map(|_| (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    for j in 0..cols {
        for _pass in 0..2 {
            for i in 0..j {
                let (done, rest) = q.split_at_mut(j);
                let c = dot(&rest[0], &done[i]);
                axpy(-c, &done[i], &mut rest[0]);
            }
        }
        let nj = norm(&q[j]);
        if nj < 1e-12 {
            return Err(LinalgError::Shape("degenerate Gaussian draw".into()));
        }
        q[j] = scale(&q[j], 1.0 / nj);
    }
    Matrix::from_columns(&q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spectrum() {
        let e = sym_eig(&Matrix::identity(4)).unwrap();
        assert_eq!(e.values, vec![1.0; 4]);
    }

    #[test]
    fn diag_two() {
        let e = sym_eig(&Matrix::from_diag(&[1.0, 3.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert!((e.vectors[0][1].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_asymmetric_and_rectangular() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&m), Err(LinalgError::NotSymmetric { .. })));
        assert!(matches!(sym_eig(&Matrix::zeros(2, 3)), Err(LinalgError::Shape(_))));
        assert!(orthonormal_columns(2, 3, 0).is_err());
    }

    #[test]
    fn eigvals_match_jacobi() {
        for n in [1usize, 2, 5, 17, 40] {
            let mut a = Matrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin() + if i == j { 0.5 } else { 0.0 });
            a.symmetrize();
            let v = sym_eigvals(&a).unwrap();
            let w = sym_eig(&a).unwrap().values;
            for (x, y) in v.iter().zip(&w) {
                assert!((x - y).abs() < 1e-11 * (1.0 + a.frobenius()), "{n}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn top_k_diag() {
        let e = top_k_eig(&Matrix::from_diag(&[5.0, 2.0, 1.0]), 2, 1e-12, 10_000).unwrap();
        assert!((e.values[0] - 5.0).abs() < 1e-10 && (e.values[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 5.0);
        let b = Matrix::from_fn(3, 2, |i, j| (i as f64) * 0.5 - j as f64);
        assert_eq!(a.tr_matmul(&b), a.transpose().matmul(&b));
        assert_eq!(b.transpose().matmul_tr(&a.transpose()), b.transpose().matmul(&a));
        assert_eq!(a.tr_matvec(&[1.0, 2.0, 3.0]), a.transpose().matvec(&[1.0, 2.0, 3.0]));
    }
}
