//! Generate a dataset with a prescribed `X^T X` spectrum, inspect it, and export it as CSV.
//!
//! `cargo run --example dataset_gen [out.csv]`

use eos_lab::dataset::{export_csv, gen_spectrum_dataset, geometric_spectrum, load_csv, spectrum_stats, LabelMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spectrum = geometric_spectrum(8, 50.0, 1.6);
    let ds = gen_spectrum_dataset(32, 8, &spectrum, LabelMode::ProjectionPower(1.0), 7)?;
    let st = spectrum_stats(&ds);
    println!("n = {}, d = {}, rank = {}", ds.n(), ds.d(), st.r);
    println!("lambda_1 = {:.4}, lambda_r = {:.4}, chi = {:?}, kappa = {:.4}", st.lambda1, st.lambda_r, st.chi, st.kappa);
    for (i, (l, z)) in ds.spectrum().values.iter().zip(&ds.spectrum().z).enumerate() {
        println!("  eigenpair {:>2}: lambda = {l:>9.4}  Y^T v = {z:>8.4}", i + 1);
    }

    let path = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("eos_lab_dataset.csv"));
    export_csv(&ds, &path, true)?;
    let back = load_csv(&path, true)?;
    println!("wrote {} ({} rows); reload matches: {}", path.display(), back.n(), back.x() == ds.x() && back.y() == ds.y());
    Ok(())
}
