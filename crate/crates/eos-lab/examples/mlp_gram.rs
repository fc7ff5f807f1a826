//! Gram matrix of a deep tanh network: output-layer vs hidden-layer parts, and a gradient check.
//!
//! `cargo run --example mlp_gram`

use eos_lab::dataset::{gaussian_dataset, LabelMode};
use eos_lab::linalg::sym_eigvals;
use eos_lab::mlp::{grad_check, gram_split, init_mlp, Activation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = gaussian_dataset(24, 64, 1.0, LabelMode::RandomSign, 3)?;
    let net = init_mlp(&[64, 32, 32, 32, 1], Activation::Tanh, 5, 2.0)?;
    println!("parameters: {}", net.param_count());

    let split = gram_split(&net, ds.x())?;
    let top = |m| sym_eigvals(m).map(|v| v[0]);
    let (lam, lam_a, lam_w) = (top(&split.m)?, top(&split.m_a)?, top(&split.m_w)?);
    println!("Lambda = {lam:.5}, lambda_max(M_A) = {lam_a:.5} ({:.2}%), lambda_max(M_W) = {lam_w:.5}", 100.0 * lam_a / lam);
    let vals = sym_eigvals(&split.m)?;
    println!("top five eigenvalues of M: {:.4?}", &vals[..5]);

    let err = grad_check(&net, &ds, 1e-5, 200, 0)?;
    println!("max relative gradient error vs central differences: {err:.2e}");
    Ok(())
}
