//! Train a preset, watch sharpness approach and hover at 2/eta, and write SVG plots.
//!
//! `cargo run --release --example eos_run [preset] [steps]`

use eos_lab::{config, plot, tracker};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "linear_eos".into());
    let mut cfg = config::preset(&name)?;
    if let Some(steps) = args.next() {
        cfg.run.steps = steps.parse()?;
    }
    let out = tracker::run(&cfg.run)?;
    println!("{name}: eta = {:.5}, Lambda(0) = {:.5}, 2/eta = {:.5}", out.eta, out.lambda0, 2.0 / out.eta);

    let stride = (out.records.len() / 20).max(1);
    println!("{:>6} {:>11} {:>9} {:>11} {:>11}", "t", "loss", "Lambda", "||A||^2", "D^T F");
    for r in out.records.iter().step_by(stride) {
        println!("{:>6} {:>11.4e} {:>9.4} {:>11.4} {:>11.4e}", r.t, r.loss, r.lambda1, r.anorm2, r.dtf);
    }
    match out.records.iter().find(|r| r.lambda1 >= r.two_over_eta) {
        Some(r) => println!("sharpness first reaches 2/eta at t = {}", r.t),
        None => println!("sharpness stays below 2/eta"),
    }

    let dir = std::env::temp_dir().join(format!("eos_lab_{name}"));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("sharpness_loss.svg"), plot::sharpness_loss(&out.records))?;
    std::fs::write(dir.join("anorm_sharpness.svg"), plot::anorm_sharpness(&out.records))?;
    println!("plots in {}", dir.display());
    Ok(())
}
