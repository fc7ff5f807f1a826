//! Bias-free fully connected networks with manual backpropagation.
//!
//! Layer `l` is a `width_l x width_{l-1}` matrix; the activation follows every
//! layer except the last, whose single output is multiplied by `output_scale`.
//! The Gram matrix is assembled per layer from backprop signals `G_l` and layer
//! inputs `H_{l-1}` as `(2/n) (G_l^T G_l) o (H_{l-1}^T H_{l-1})`, which never
//! materializes the Jacobian.

use crate::dataset::Dataset;
use crate::linalg::{self, norm_sq, LinalgError, Matrix};
use crate::twolayer::TwoLayerNet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MlpError {
    #[error("layer dims need at least two entries ending in 1, got {0:?}")]
    BadDims(Vec<usize>),
    #[error("input has {got} rows, first layer expects {want}")]
    InputDim { got: usize, want: usize },
    #[error("freeze mask has {got} entries for {want} layers")]
    FreezeMask { got: usize, want: usize },
    #[error("divergence: non-finite parameters after a GD step")]
    Diverged,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Tanh,
    Relu,
    Elu,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "linear" => Some(Activation::Linear),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "elu" => Some(Activation::Elu),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Elu => "elu",
        }
    }

    /// Value and derivative. ReLU'(0) = 0; ELU uses alpha = 1.
    #[inline]
    pub fn eval(self, z: f64) -> (f64, f64) {
        match self {
            Activation::Linear => (z, 1.0),
            Activation::Tanh => {
                let t = z.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    let e = z.exp();
                    (e - 1.0, e)
                }
            }
        }
    }

    fn has_kink(self) -> bool {
        matches!(self, Activation::Relu | Activation::Elu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    pub layers: Vec<Matrix>,
    pub activation: Activation,
    pub freeze: Vec<bool>,
    /// Multiplies the network output; 1 for ordinary nets.
    pub output_scale: f64,
}

/// Uniform `(-s/sqrt(fan_in), s/sqrt(fan_in))` weights, `s = init_scale`.
pub fn init_mlp(dims: &[usize], activation: Activation, seed: u64, init_scale: f64) -> Result<MlpNet, MlpError> {
    if dims.len() < 2 || *dims.last().unwrap() != 1 || dims.contains(&0) {
        return Err(MlpError::BadDims(dims.to_vec()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers: Vec<Matrix> = dims
        .windows(2)
        .map(|w| {
            let bound = init_scale / (w[0] as f64).sqrt();
            Matrix::from_fn(w[1], w[0], |_, _| bound * (2.0 * rng.random::<f64>() - 1.0))
        })
        .collect();
    let nl = layers.len();
    Ok(MlpNet { layers, activation, freeze: vec![false; nl], output_scale: 1.0 })
}

/// Intermediate values kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub f: Vec<f64>,
    /// `inputs[l]` is the input to layer `l`, `width_{l-1} x n`.
    pub inputs: Vec<Matrix>,
    /// Activation derivatives at each hidden pre-activation, `width_l x n`.
    pub derivs: Vec<Matrix>,
    /// Hidden pre-activations, kept to detect activation kinks.
    pub pre: Vec<Matrix>,
}

impl MlpNet {
    /// The same function as a two-layer linear net: layers `[W, A^T]`, scale `1/sqrt(m)`.
    pub fn from_twolayer(net: &TwoLayerNet) -> Self {
        let a = Matrix::from_vec(1, net.m(), net.a.clone()).expect("finite weights");
        MlpNet { layers: vec![net.w.clone(), a], activation: Activation::Linear, freeze: vec![false; 2], output_scale: 1.0 / (net.m() as f64).sqrt() }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.rows() * l.cols()).sum()
    }

    /// Squared Frobenius norm of the output layer.
    pub fn anorm2(&self) -> f64 {
        norm_sq(self.layers.last().unwrap().as_slice())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }

    /// Freeze the `k` layers closest to the output.
    pub fn freeze_outer(&mut self, k: usize) {
        let nl = self.layers.len();
        for (l, f) in self.freeze.iter_mut().enumerate() {
            *f = l + k >= nl;
        }
    }

    pub fn set_freeze(&mut self, mask: Vec<bool>) -> Result<(), MlpError> {
        if mask.len() != self.layers.len() {
            return Err(MlpError::FreezeMask { got: mask.len(), want: self.layers.len() });
        }
        self.freeze = mask;
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.as_slice().iter().copied()).collect()
    }

    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in self.layers.iter_mut() {
            let sz = l.rows() * l.cols();
            if idx < sz {
                return &mut l.as_mut_slice()[idx];
            }
            idx -= sz;
        }
        panic!("parameter index out of range")
    }

    pub fn forward(&self, x: &Matrix) -> Result<Vec<f64>, MlpError> {
        Ok(forward_cached(self, x)?.f)
    }
}

pub fn forward_cached(net: &MlpNet, x: &Matrix) -> Result<ForwardCache, MlpError> {
    if x.rows() != net.input_dim() {
        return Err(MlpError::InputDim { got: x.rows(), want: net.input_dim() });
    }
    let nl = net.layers.len();
    let mut inputs = Vec::with_capacity(nl);
    let mut derivs = Vec::with_capacity(nl - 1);
    let mut pre = Vec::with_capacity(nl - 1);
    let mut h = x.clone();
    for (l, w) in net.layers.iter().enumerate() {
        let z = w.matmul(&h);
        inputs.push(h);
        if l + 1 == nl {
            let f = z.row(0).iter().map(|v| v * net.output_scale).collect();
            return Ok(ForwardCache { f, inputs, derivs, pre });
        }
        let mut act = z.clone();
        let mut der = z.clone();
        for (a, d) in act.as_mut_slice().iter_mut().zip(der.as_mut_slice()) {
            let (v, dv) = net.activation.eval(*a);
            *a = v;
            *d = dv;
        }
        pre.push(z);
        derivs.push(der);
        h = act;
    }
    unreachable!("network has at least one layer")
}

/// `G_l[:, j] = d f(x_j) / d z_l`, one matrix per layer (`width_l x n`).
pub fn backward_signals(net: &MlpNet, cache: &ForwardCache) -> Vec<Matrix> {
    let nl = net.layers.len();
    let n = cache.f.len();
    let mut signals = vec![Matrix::zeros(0, 0); nl];
    let mut g = Matrix::from_vec(1, n, vec![net.output_scale; n]).expect("finite scale");
    for l in (0..nl).rev() {
        let next = if l > 0 { Some(net.layers[l].tr_matmul(&g).hadamard(&cache.derivs[l - 1])) } else { None };
        signals[l] = std::mem::replace(&mut g, next.unwrap_or_else(|| Matrix::zeros(0, 0)));
    }
    signals
}

/// Scale column `j` of `g` by `s[j]`.
fn scale_columns(g: &Matrix, s: &[f64]) -> Matrix {
    Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * s[j])
}

/// MSE loss `||F - Y||^2 / n` and its gradient per layer.
pub fn loss_and_grads(net: &MlpNet, ds: &Dataset) -> Result<(f64, Vec<Matrix>), MlpError> {
    let cache = forward_cached(net, ds.x())?;
    let resid = linalg::sub(&cache.f, ds.y());
    let n = resid.len() as f64;
    let signals = backward_signals(net, &cache);
    Ok((norm_sq(&resid) / n, grads_from(&signals, &cache, &resid)))
}

/// Per-layer loss gradients `(2/n) (G_l diag(D)) H_{l-1}^T` from precomputed signals.
pub fn grads_from(signals: &[Matrix], cache: &ForwardCache, resid: &[f64]) -> Vec<Matrix> {
    let n = resid.len() as f64;
    signals.iter().zip(&cache.inputs).map(|(g, h)| scale_columns(g, resid).matmul_tr(h).scaled(2.0 / n)).collect()
}

pub fn loss(net: &MlpNet, ds: &Dataset) -> Result<f64, MlpError> {
    let f = net.forward(ds.x())?;
    Ok(norm_sq(&linalg::sub(&f, ds.y())) / f.len() as f64)
}

/// Max relative error of backprop against central differences over
/// `samples` random coordinates. Coordinates whose perturbation moves a
/// ReLU/ELU pre-activation across zero are skipped.
pub fn grad_check(net: &MlpNet, ds: &Dataset, h: f64, samples: usize, seed: u64) -> Result<f64, MlpError> {
    let (_, grads) = loss_and_grads(net, ds)?;
    let flat: Vec<f64> = grads.iter().flat_map(|g| g.as_slice().iter().copied()).collect();
    let p = flat.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if samples >= p { (0..p).collect() } else { (0..samples).map(|_| rng.random_range(0..p)).collect() };
    let base_pattern = net.activation.has_kink().then(|| kink_pattern(net, ds)).transpose()?;
    let mut worst = 0.0f64;
    for &i in &picks {
        let mut plus = net.clone();
        *plus.param_mut(i) += h;
        let mut minus = net.clone();
        *minus.param_mut(i) -= h;
        if let Some(base) = &base_pattern {
            if &kink_pattern(&plus, ds)? != base || &kink_pattern(&minus, ds)? != base {
                continue;
            }
        }
        let fd = (loss(&plus, ds)? - loss(&minus, ds)?) / (2.0 * h);
        let denom = fd.abs().max(flat[i].abs()).max(1e-8);
        worst = worst.max((fd - flat[i]).abs() / denom);
    }
    Ok(worst)
}

fn kink_pattern(net: &MlpNet, ds: &Dataset) -> Result<Vec<bool>, MlpError> {
    let cache = forward_cached(net, ds.x())?;
    Ok(cache.pre.iter().flat_map(|z| z.as_slice().iter().map(|v| *v > 0.0)).collect())
}

/// Dense `n x p` Jacobian of the outputs, parameters layer-major then row-major.
pub fn jacobian(net: &MlpNet, x: &Matrix) -> Result<Matrix, MlpError> {
    let cache = forward_cached(net, x)?;
    let signals = backward_signals(net, &cache);
    let n = x.cols();
    let p = net.param_count();
    let mut data = vec![0.0; n * p];
    data.par_chunks_mut(p).enumerate().for_each(|(j, row)| {
        let mut off = 0;
        for (g, h) in signals.iter().zip(&cache.inputs) {
            for o in 0..g.rows() {
                let go = g[(o, j)];
                for i in 0..h.rows() {
                    row[off + o * h.rows() + i] = go * h[(i, j)];
                }
            }
            off += g.rows() * h.rows();
        }
    });
    Ok(Matrix::from_vec(n, p, data)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramSplit {
    pub m: Matrix,
    /// Output-layer contribution.
    pub m_a: Matrix,
    /// All other layers.
    pub m_w: Matrix,
}

/// Per-layer Gram blocks `(2/n) (G_l^T G_l) o (H_{l-1}^T H_{l-1})`.
pub fn layer_grams(net: &MlpNet, cache: &ForwardCache) -> Vec<Matrix> {
    layer_grams_from(&backward_signals(net, cache), cache)
}

pub fn layer_grams_from(signals: &[Matrix], cache: &ForwardCache) -> Vec<Matrix> {
    let n = cache.f.len() as f64;
    signals
        .iter()
        .zip(&cache.inputs)
        .map(|(g, h)| {
            let mut b = g.gram().hadamard(&h.gram());
            b.scale_mut(2.0 / n);
            b
        })
        .collect()
}

pub fn gram_split_cached(net: &MlpNet, cache: &ForwardCache) -> GramSplit {
    split_from(&backward_signals(net, cache), cache)
}

pub fn split_from(signals: &[Matrix], cache: &ForwardCache) -> GramSplit {
    let mut blocks = layer_grams_from(signals, cache);
    let m_a = blocks.pop().expect("at least one layer");
    let n = m_a.rows();
    let mut m_w = Matrix::zeros(n, n);
    for b in &blocks {
        m_w.add_scaled(1.0, b);
    }
    let m = m_w.add(&m_a);
    GramSplit { m, m_a, m_w }
}

pub fn gram_split(net: &MlpNet, x: &Matrix) -> Result<GramSplit, MlpError> {
    Ok(gram_split_cached(net, &forward_cached(net, x)?))
}

/// Update every unfrozen layer by `-eta * grad`; frozen layers are untouched.
pub fn gd_step_mlp(net: &MlpNet, grads: &[Matrix], eta: f64) -> Result<MlpNet, MlpError> {
    let mut next = net.clone();
    for ((layer, g), &frozen) in next.layers.iter_mut().zip(grads).zip(&net.freeze) {
        if !frozen {
            layer.add_scaled(-eta, g);
        }
    }
    if !next.is_finite() {
        return Err(MlpError::Diverged);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_and_dims() {
        let net = init_mlp(&[4, 3, 1], Activation::Linear, 0, 1.0).unwrap();
        assert_eq!(net.param_count(), 15);
        assert!(init_mlp(&[], Activation::Tanh, 0, 1.0).is_err());
        assert!(init_mlp(&[3, 2], Activation::Tanh, 0, 1.0).is_err());
    }

    #[test]
    fn freeze_outer_marks_tail() {
        let mut net = init_mlp(&[2, 2, 2, 1], Activation::Tanh, 0, 1.0).unwrap();
        net.freeze_outer(2);
        assert_eq!(net.freeze, vec![false, true, true]);
    }

    #[test]
    fn activation_derivatives() {
        assert_eq!(Activation::Relu.eval(0.0), (0.0, 0.0));
        assert_eq!(Activation::Elu.eval(0.0), (0.0, 1.0));
        let (t, dt) = Activation::Tanh.eval(0.3);
        assert!((dt - (1.0 - t * t)).abs() < 1e-15);
    }
}
