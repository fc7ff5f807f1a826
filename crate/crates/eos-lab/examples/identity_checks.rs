//! Step the two-layer linear network by hand and evaluate its exact one-step identities.
//!
//! `cargo run --example identity_checks`

use eos_lab::dataset::{gen_spectrum_dataset, geometric_spectrum, LabelMode};
use eos_lab::twolayer::{self, TwoLayerState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = gen_spectrum_dataset(60, 12, &geometric_spectrum(12, 60.0, 1.3), LabelMode::ProjectionPower(1.0), 1)?;
    let eta = 1.6 / twolayer::lambda0(&ds);
    let net = twolayer::init_symmetric(80, ds.d(), 0, 1.0)?;
    println!("Lambda(0) = {:.6}, 2/eta = {:.6}", twolayer::lambda0(&ds), 2.0 / eta);
    println!("{:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "t", "Lambda", "||D||", "residual", "gram", "key", "anorm");

    let mut s0 = TwoLayerState::new(net, &ds, eta)?;
    for t in 0..400 {
        let s1 = TwoLayerState::new(twolayer::gd_step(&s0.net, &ds, eta)?, &ds, eta)?;
        if t % 40 == 0 {
            println!(
                "{t:>5} {:>10.5} {:>10.4e} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e}",
                eos_lab::linalg::sym_spectral_norm(&s0.mats.m),
                eos_lab::linalg::norm(&s0.resid),
                twolayer::check_residual_update(&s0, &s1, eta),
                twolayer::check_gram_update(&ds, &s0, &s1, eta),
                twolayer::check_key_equation(&ds, &s0, &s1, eta),
                twolayer::check_anorm_update(&ds, &s0, &s1, eta),
            );
        }
        s0 = s1;
    }
    Ok(())
}
