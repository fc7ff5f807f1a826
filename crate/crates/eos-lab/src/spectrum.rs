//! Per-step top-of-spectrum measurements with sign-aligned `v_1` tracking.

use crate::linalg::{dot, sym_eig, top_k_eig, LinalgError, Matrix};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;
/// Relative gap `(lambda_1 - lambda_2) / lambda_1` below which `v_1` is ill-posed.
pub const DEGENERATE_GAP: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumState {
    pub lambda1: f64,
    pub lambda2: f64,
    pub v1: Vec<f64>,
    /// `u^T M u` for the supplied reference direction, else `lambda1`.
    pub lambda_star: f64,
    /// `1 - |<v_1(prev), v_1>|`, zero without a predecessor.
    pub drift: f64,
    /// Top gap below [`DEGENERATE_GAP`]; drift is then excluded from `epsilon_2`.
    pub degenerate: bool,
}

fn top_two(m: &Matrix) -> Result<(f64, f64, Vec<f64>), LinalgError> {
    let n = m.rows();
    let k = n.min(2);
    let e = match top_k_eig(m, k, POWER_TOL, POWER_MAX_ITER) {
        Ok(e) => e,
        Err(LinalgError::NotConverged { .. }) => sym_eig(m)?,
        Err(e) => return Err(e),
    };
    let l2 = if n >= 2 { e.values[1] } else { 0.0 };
    Ok((e.values[0], l2, e.vectors[0].clone()))
}

/// Measure `Lambda`, `lambda_2` and `v_1` of a symmetric PSD matrix.
pub fn measure(m: &Matrix, prev: Option<&SpectrumState>, reference: Option<&[f64]>) -> Result<SpectrumState, LinalgError> {
    let (lambda1, lambda2, v1) = top_two(m)?;
    let lambda_star = match reference {
        Some(u) => m.quad(u, u),
        None => lambda1,
    };
    Ok(from_pair(lambda1, lambda2, v1, prev, lambda_star))
}

/// Assemble a state from an externally computed top pair, aligning `v1` to `prev`.
pub fn from_pair(lambda1: f64, lambda2: f64, mut v1: Vec<f64>, prev: Option<&SpectrumState>, lambda_star: f64) -> SpectrumState {
    let mut drift = 0.0;
    if let Some(p) = prev {
        let c = dot(&p.v1, &v1);
        if c < 0.0 {
            v1.iter_mut().for_each(|x| *x = -*x);
        }
        drift = (1.0 - c.abs()).clamp(0.0, 1.0);
    }
    let degenerate = lambda1 - lambda2 < DEGENERATE_GAP * lambda1.abs();
    SpectrumState { lambda1, lambda2, v1, lambda_star, drift, degenerate }
}

/// Largest per-step drift over `states[t0..=t1]`, skipping near-degenerate steps.
pub fn epsilon2_estimate(states: &[SpectrumState], t0: usize, t1: usize) -> f64 {
    if states.is_empty() || t0 > t1 {
        return 0.0;
    }
    let hi = t1.min(states.len() - 1);
    states[t0..=hi].iter().filter(|s| !s.degenerate).map(|s| s.drift).fold(0.0, f64::max)
}

/// Same as [`epsilon2_estimate`] over raw `(drift, degenerate)` pairs.
pub fn epsilon2_from_drifts(drifts: &[(f64, bool)]) -> f64 {
    drifts.iter().filter(|(_, deg)| !deg).map(|(d, _)| *d).filter(|d| d.is_finite()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diag_measure() {
        let s = measure(&Matrix::from_diag(&[3.0, 1.0, 1.0]), None, None).unwrap();
        assert!((s.lambda1 - 3.0).abs() < 1e-12 && (s.lambda2 - 1.0).abs() < 1e-9);
        assert!((s.v1[0].abs() - 1.0).abs() < 1e-10);
        assert_eq!(s.drift, 0.0);
    }

    #[test]
    fn one_by_one() {
        let s = measure(&Matrix::from_diag(&[2.0]), None, None).unwrap();
        assert_eq!((s.lambda1, s.lambda2), (2.0, 0.0));
    }
}
