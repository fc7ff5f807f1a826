//! Split a trajectory into the four sharpness/residual phases and count full cycles.
//!
//! `cargo run --release --example phase_segmentation [trajectory.csv]`

use eos_lab::{config, phases, tracker, verify};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = config::preset("linear_eos")?;
    let records = match std::env::args().nth(1) {
        Some(path) => tracker::read_trajectory(std::path::Path::new(&path))?,
        None => tracker::run(&cfg.run)?.records,
    };
    let eta = verify::eta_of(&records);
    let segments = phases::segment(&records, eta, cfg.smooth_window, cfg.min_len);
    for s in &segments {
        let r = &records[s.start];
        println!("{:>4} steps {:>5}..{:<5} Lambda {:>8.4} -> {:<8.4}", s.phase.name(), s.start, s.end, r.lambda1, records[s.end].lambda1);
    }
    let stats = phases::cycle_stats(&segments);
    println!("complete cycles: {}, mean period: {:.1} steps", stats.cycles, stats.mean_period);
    println!("mean length per phase: {:.1?}", stats.per_phase_mean_len);
    Ok(())
}
