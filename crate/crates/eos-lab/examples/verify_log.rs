//! Run a short experiment, write its logs, read them back and verify them like `eos-lab verify`.
//!
//! `cargo run --release --example verify_log`

use eos_lab::verify::{self, RunLogs, Status};
use eos_lab::{config, tracker};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = config::preset("linear_eos")?;
    cfg.run.steps = 800;
    let out = tracker::run(&cfg.run)?;

    let dir = tempfile_dir()?;
    let (traj, diag) = (dir.join("trajectory.csv"), dir.join("diagnostics.csv"));
    tracker::write_trajectory(&traj, &out.records)?;
    tracker::write_diagnostics(&diag, &out.diagnostics)?;

    let records = tracker::read_trajectory(&traj)?;
    let diagnostics = tracker::read_diagnostics(&diag)?;
    let report = verify::verify(&cfg, &out.context, &RunLogs { records: &records, diagnostics: Some(&diagnostics), relaxed: None });
    for c in &report.checks {
        let mark = match c.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::Skipped => "skip",
            _ => "info",
        };
        println!("{mark:>4}  {:<18} violations {:>4}", c.name, c.steps_violating);
    }
    println!("epsilon_2 = {:?}, B_Lambda = {:?}, c2 = {:?}", report.constants.epsilon2, report.constants.b_lambda, report.constants.c2_estimate);
    println!("overall: {}", if report.passed() { "pass" } else { "fail" });
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join("eos_lab_verify_log");
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
