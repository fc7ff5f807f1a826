//! Dense symmetric eigensolvers: full decomposition, top-k, and tracked top eigenpair with drift.
//!
//! `cargo run --example eigensolvers`

use eos_lab::linalg::{sym_eig, top_k_eig, Matrix};
use eos_lab::spectrum;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 40;
    let b = Matrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5);
    let m = b.matmul_tr(&b);

    let full = sym_eig(&m)?;
    let top = top_k_eig(&m, 3, 1e-12, 10_000)?;
    println!("full:  {:.6?}", &full.values[..3]);
    println!("top-3: {:.6?}", top.values);
    println!("reconstruction error: {:.2e}", full.reconstruct(n).sub(&m).max_abs());

    // Rotate slowly and follow v_1; drift is 1 - |<v_1(t-1), v_1(t)>|.
    let mut prev = spectrum::measure(&m, None, None)?;
    for t in 1..=5 {
        let p = m.add(&Matrix::from_fn(n, n, |i, j| if i == j { 0.02 * t as f64 * (i % 3) as f64 } else { 0.0 }));
        let s = spectrum::measure(&p, Some(&prev), None)?;
        println!("t={t}: lambda1 {:.6} lambda2 {:.6} drift {:.3e}", s.lambda1, s.lambda2, s.drift);
        prev = s;
    }
    Ok(())
}
