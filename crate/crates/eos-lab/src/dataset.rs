//! Datasets with a cached eigendecomposition of the sample Gram matrix `K = X^T X`.
//!
//! `X` is stored `d x n` (one column per sample). Synthetic generators build
//! `X = U_d diag(sqrt(lambda)) U_n^T` from seeded orthonormal factors, so the
//! nonzero spectrum of `K` is exactly the requested one and its eigenvectors
//! are known in closed form.

use crate::linalg::{self, dot, norm, orthonormal_columns, sym_eig, LinalgError, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Eigenvalues below this fraction of `lambda_1` count as zero when measuring rank.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("invalid label mode: {0}")]
    LabelMode(String),
    #[error("csv row {row}: {msg}")]
    Csv { row: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Signed,
    Real,
}

/// How labels are drawn relative to the eigenvectors of `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Independent uniform signs.
    RandomSign,
    /// `Y = sqrt(n) v_i`, with `i` 1-based.
    AlignEigvec(usize),
    /// `Y = sqrt(n) sum c_i v_i` with every `|c_i| >= kappa` and `sum c_i^2 = 1`.
    ProjectionFloor(f64),
    /// `Y = sqrt(n) sum c_i v_i` with `c_i^2` proportional to `lambda_i^-p` and random signs.
    ProjectionPower(f64),
}

impl LabelMode {
    /// Parses `random_sign`, `align_eigvec:1`, `projection_floor:0.05`, `projection_power:1`.
    pub fn parse(s: &str) -> Result<Self, DatasetError> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64, DatasetError> {
            a.ok_or_else(|| DatasetError::LabelMode(format!("`{head}` needs an argument")))?
                .parse::<f64>()
                .map_err(|e| DatasetError::LabelMode(format!("`{s}`: {e}")))
        };
        match head {
            "random_sign" => Ok(LabelMode::RandomSign),
            "align_eigvec" => {
                let i = num(arg)?;
                if i < 1.0 || i.fract() != 0.0 {
                    return Err(DatasetError::LabelMode(format!("eigenvector index must be a positive integer, got {i}")));
                }
                Ok(LabelMode::AlignEigvec(i as usize))
            }
            "projection_floor" => Ok(LabelMode::ProjectionFloor(num(arg)?)),
            "projection_power" => Ok(LabelMode::ProjectionPower(num(arg)?)),
            _ => Err(DatasetError::LabelMode(format!("unknown label mode `{s}`"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            LabelMode::RandomSign => "random_sign".into(),
            LabelMode::AlignEigvec(i) => format!("align_eigvec:{i}"),
            LabelMode::ProjectionFloor(k) => format!("projection_floor:{k}"),
            LabelMode::ProjectionPower(p) => format!("projection_power:{p}"),
        }
    }
}

/// Nonzero eigenpairs of `K`, descending, with label projections `z_i = Y^T v_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpectrum {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    y: Vec<f64>,
    label_kind: LabelKind,
    gram: Matrix,
    spectrum: DataSpectrum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumStats {
    /// `max lambda_i / lambda_{i+1}`; absent when rank < 2.
    pub chi: Option<f64>,
    /// `min |z_i| / sqrt(n)`.
    pub kappa: f64,
    pub lambda1: f64,
    pub lambda_r: f64,
    pub r: usize,
    /// `lambda_1 >= 2 lambda_2`.
    pub top_gap: bool,
}

fn label_kind_of(y: &[f64]) -> LabelKind {
    if !y.is_empty() && y.iter().all(|&v| v == 1.0 || v == -1.0) {
        LabelKind::Signed
    } else {
        LabelKind::Real
    }
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ stream)
}

/// Flip each eigenvector so its first non-negligible entry is positive.
fn canonical_sign(v: &mut [f64]) {
    let big = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * big) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn make_labels(mode: LabelMode, values: &[f64], vectors: &[Vec<f64>], n: usize, seed: u64) -> Result<Vec<f64>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let r = values.len();
    let sqrt_n = (n as f64).sqrt();
    let combine = |c: &[f64]| -> Vec<f64> {
        let mut y = vec![0.0; n];
        for (ci, v) in c.iter().zip(vectors) {
            linalg::axpy(sqrt_n * ci, v, &mut y);
        }
        y
    };
    match mode {
        LabelMode::RandomSign => Ok((0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()),
        LabelMode::AlignEigvec(i) => {
            if i == 0 || i > r {
                return Err(DatasetError::LabelMode(format!("align_eigvec:{i} outside 1..={r}")));
            }
            Ok(vectors[i - 1].iter().map(|v| sqrt_n * v).collect())
        }
        LabelMode::ProjectionFloor(kappa) => {
            if !(kappa >= 0.0) || (r as f64) * kappa * kappa > 1.0 {
                return Err(DatasetError::LabelMode(format!("projection floor {kappa} infeasible for rank {r} (need r * kappa^2 <= 1)")));
            }
            let w: Vec<f64> = (0..r).map(|_| rng.random::<f64>() + 1e-3).collect();
            let ws: f64 = w.iter().sum();
            let slack = 1.0 - r as f64 * kappa * kappa;
            let c: Vec<f64> = w
                .iter()
                .map(|wi| {
                    let mag = (kappa * kappa + slack * wi / ws).sqrt();
                    if rng.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            Ok(combine(&c))
        }
        LabelMode::ProjectionPower(p) => {
            if r == 0 {
                return Err(DatasetError::LabelMode("rank-zero data".into()));
            }
            let mut c: Vec<f64> = values
                .iter()
                .map(|&l| {
                    let mag = l.powf(-p / 2.0);
                    if rng.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            let nc = norm(&c);
            c.iter_mut().for_each(|v| *v /= nc);
            Ok(combine(&c))
        }
    }
}

impl Dataset {
    /// Builds a dataset from `X` (`d x n`) and labels, computing the spectrum numerically.
    pub fn from_parts(x: Matrix, y: Vec<f64>) -> Result<Self, DatasetError> {
        if x.cols() != y.len() {
            return Err(DatasetError::Shape(format!("X has {} columns but {} labels", x.cols(), y.len())));
        }
        if x.cols() == 0 || x.rows() == 0 {
            return Err(DatasetError::Shape("empty dataset".into()));
        }
        let gram = x.gram();
        let (values, vectors) = numeric_spectrum(&x, &gram)?;
        Ok(Self::assemble(x, y, gram, values, vectors))
    }

    fn assemble(x: Matrix, y: Vec<f64>, gram: Matrix, values: Vec<f64>, vectors: Vec<Vec<f64>>) -> Self {
        let z = vectors.iter().map(|v| dot(&y, v)).collect();
        Dataset { label_kind: label_kind_of(&y), x, y, gram, spectrum: DataSpectrum { values, vectors, z } }
    }

    /// Same inputs, new labels.
    pub fn with_labels(&self, y: Vec<f64>) -> Result<Self, DatasetError> {
        if y.len() != self.n() {
            return Err(DatasetError::Shape(format!("{} labels for {} samples", y.len(), self.n())));
        }
        Ok(Self::assemble(self.x.clone(), y, self.gram.clone(), self.spectrum.values.clone(), self.spectrum.vectors.clone()))
    }

    /// Replace labels by their signs (zero maps to +1).
    pub fn sign_labels(&self) -> Self {
        let y = self.y.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
        self.with_labels(y).expect("same length")
    }

    /// Relabel according to `mode`, using this dataset's spectrum.
    pub fn relabel(&self, mode: LabelMode, seed: u64) -> Result<Self, DatasetError> {
        let y = make_labels(mode, &self.spectrum.values, &self.spectrum.vectors, self.n(), seed)?;
        self.with_labels(y)
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    /// `K = X^T X`, `n x n`.
    pub fn gram(&self) -> &Matrix {
        &self.gram
    }
    pub fn spectrum(&self) -> &DataSpectrum {
        &self.spectrum
    }
    pub fn label_kind(&self) -> LabelKind {
        self.label_kind
    }
    pub fn n(&self) -> usize {
        self.x.cols()
    }
    pub fn d(&self) -> usize {
        self.x.rows()
    }
    pub fn rank(&self) -> usize {
        self.spectrum.values.len()
    }
    pub fn lambda1(&self) -> f64 {
        self.spectrum.values.first().copied().unwrap_or(0.0)
    }
    pub fn lambda_r(&self) -> f64 {
        self.spectrum.values.last().copied().unwrap_or(0.0)
    }
    /// Top eigenvector of `K`.
    pub fn v1(&self) -> &[f64] {
        &self.spectrum.vectors[0]
    }
    pub fn y_norm(&self) -> f64 {
        norm(&self.y)
    }
}

fn numeric_spectrum(x: &Matrix, gram: &Matrix) -> Result<(Vec<f64>, Vec<Vec<f64>>), DatasetError> {
    let (d, n) = (x.rows(), x.cols());
    let mut pairs: Vec<(f64, Vec<f64>)> = if d < n {
        // Nonzero spectrum of X^T X from the smaller X X^T: v = X^T u / sqrt(lambda).
        let small = x.matmul_tr(x);
        let e = sym_eig(&small)?;
        let top = e.values.first().copied().unwrap_or(0.0);
        e.values.iter().zip(&e.vectors).filter(|(l, _)| **l > RANK_TOL * top).map(|(&l, u)| (l, linalg::normalized(&x.tr_matvec(u)))).collect()
    } else {
        let e = sym_eig(gram)?;
        let top = e.values.first().copied().unwrap_or(0.0);
        e.values.into_iter().zip(e.vectors).filter(|(l, _)| *l > RANK_TOL * top).collect()
    };
    for (_, v) in pairs.iter_mut() {
        canonical_sign(v);
    }
    Ok(pairs.into_iter().unzip())
}

/// Synthetic dataset whose `X^T X` has exactly the given nonzero spectrum.
pub fn gen_spectrum_dataset(n: usize, d: usize, spectrum: &[f64], label_mode: LabelMode, seed: u64) -> Result<Dataset, DatasetError> {
    let r = spectrum.len();
    if r == 0 || r > n.min(d) {
        return Err(DatasetError::InvalidSpectrum(format!("rank {r} must lie in 1..=min(d, n) = {}", n.min(d))));
    }
    if spectrum.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(DatasetError::InvalidSpectrum("eigenvalues must be finite and positive".into()));
    }
    if spectrum.windows(2).any(|w| w[1] > w[0]) {
        return Err(DatasetError::InvalidSpectrum("eigenvalues must be non-increasing".into()));
    }
    let ud = orthonormal_columns(d, r, derive_seed(seed, 1))?;
    let un = orthonormal_columns(n, r, derive_seed(seed, 2))?;
    let roots: Vec<f64> = spectrum.iter().map(|l| l.sqrt()).collect();
    let scaled = Matrix::from_fn(d, r, |i, k| ud[(i, k)] * roots[k]);
    let x = scaled.matmul_tr(&un);
    let gram = x.gram();
    let vectors: Vec<Vec<f64>> = (0..r).map(|k| un.column(k)).collect();
    let y = make_labels(label_mode, spectrum, &vectors, n, seed)?;
    Ok(Dataset::assemble(x, y, gram, spectrum.to_vec(), vectors))
}

/// One large eigenvalue followed by a geometric tail from `tail_hi` down to `tail_lo`.
pub fn outlier_geometric_spectrum(rank: usize, lambda1: f64, tail_hi: f64, tail_lo: f64) -> Vec<f64> {
    let mut s = vec![lambda1];
    let tail = rank.saturating_sub(1);
    for k in 0..tail {
        let frac = if tail > 1 { k as f64 / (tail - 1) as f64 } else { 0.0 };
        s.push(tail_hi * (tail_lo / tail_hi).powf(frac));
    }
    s
}

/// Geometric spectrum `top, top/ratio, top/ratio^2, ...`.
pub fn geometric_spectrum(rank: usize, top: f64, ratio: f64) -> Vec<f64> {
    (0..rank).map(|k| top / ratio.powi(k as i32)).collect()
}

/// i.i.d. Gaussian inputs with standard deviation `input_scale`.
pub fn gaussian_dataset(n: usize, d: usize, input_scale: f64, label_mode: LabelMode, seed: u64) -> Result<Dataset, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4));
    let x = Matrix::from_fn(d, n, |_, _| {
        let g: f64 = StandardNormal.sample(&mut rng);
        input_scale * g
    });
    let base = Dataset::from_parts(x, vec![0.0; n])?;
    base.relabel(label_mode, seed)
}

/// Subtract the per-feature mean across samples and recompute the spectrum.
pub fn mean_subtract(ds: &Dataset) -> Result<Dataset, DatasetError> {
    let (d, n) = (ds.d(), ds.n());
    if n < 2 {
        return Err(DatasetError::Shape("mean subtraction needs at least two samples".into()));
    }
    let mut x = ds.x.clone();
    for i in 0..d {
        let row = x.row_mut(i);
        let mean = row.iter().sum::<f64>() / n as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    Dataset::from_parts(x, ds.y.clone())
}

pub fn spectrum_stats(ds: &Dataset) -> SpectrumStats {
    let s = &ds.spectrum;
    let r = s.values.len();
    let chi = (r >= 2).then(|| s.values.windows(2).map(|w| w[0] / w[1]).fold(f64::NEG_INFINITY, f64::max));
    let sqrt_n = (ds.n() as f64).sqrt();
    let kappa = s.z.iter().map(|z| z.abs() / sqrt_n).fold(f64::INFINITY, f64::min);
    SpectrumStats {
        chi,
        kappa: if kappa.is_finite() { kappa } else { 0.0 },
        lambda1: ds.lambda1(),
        lambda_r: ds.lambda_r(),
        r,
        top_gap: r < 2 || s.values[0] >= 2.0 * s.values[1],
    }
}

/// Reads rows of `d` features followed by one label.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| DatasetError::Csv { row: 0, msg: e.to_string() })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let offset = usize::from(has_header) + 1;
    for (idx, rec) in reader.records().enumerate() {
        let row = idx + offset;
        let rec = rec.map_err(|e| DatasetError::Csv { row, msg: e.to_string() })?;
        if rec.len() < 2 {
            return Err(DatasetError::Csv { row, msg: "need at least one feature and a label".into() });
        }
        if let Some(first) = rows.first() {
            if first.len() != rec.len() {
                return Err(DatasetError::Csv { row, msg: format!("expected {} columns, found {}", first.len(), rec.len()) });
            }
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(DatasetError::Csv { row, msg: format!("column {}: `{cell}` is not a finite number", c + 1) }),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(DatasetError::Csv { row: 0, msg: "no data rows".into() });
    }
    let d = rows[0].len() - 1;
    let n = rows.len();
    let x = Matrix::from_fn(d, n, |i, j| rows[j][i]);
    let y = rows.iter().map(|r| r[d]).collect();
    Dataset::from_parts(x, y)
}

/// Writes one row per sample; floats use shortest round-trip formatting.
pub fn export_csv(ds: &Dataset, path: impl AsRef<Path>, header: bool) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| DatasetError::Csv { row: 0, msg: e.to_string() })?;
    let io = |e: csv::Error| DatasetError::Csv { row: 0, msg: e.to_string() };
    if header {
        let mut h: Vec<String> = (0..ds.d()).map(|i| format!("x{i}")).collect();
        h.push("y".into());
        w.write_record(&h).map_err(io)?;
    }
    for j in 0..ds.n() {
        let mut rec: Vec<String> = (0..ds.d()).map(|i| format!("{}", ds.x[(i, j)])).collect();
        rec.push(format!("{}", ds.y[j]));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
