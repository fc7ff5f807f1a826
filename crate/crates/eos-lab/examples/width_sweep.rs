//! Sweep the hidden width and compare max_t ||Gamma(t)|| * m across widths.
//!
//! `cargo run --release --example width_sweep [steps]`

use eos_lab::{cli, config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = config::preset("width_sweep")?;
    if let Some(steps) = std::env::args().nth(1) {
        cfg.run.steps = steps.parse()?;
    }
    cfg.emit_plots = false;
    cfg.output_dir = std::env::temp_dir().join("eos_lab_width_sweep");
    let summary = cli::cmd_sweep(&cfg, None)?;
    for e in &summary.entries {
        println!("{}={:<5} exit {} c2 {:>8.3} cycles {:?}", summary.param, e.value, e.exit_code, e.c2_estimate.unwrap_or(f64::NAN), e.cycles);
    }
    println!("c2 spread (max/min): {:?}", summary.c2_spread);
    Ok(())
}
