use eos_lab::dataset::{self, gen_spectrum_dataset, geometric_spectrum, load_csv, mean_subtract, spectrum_stats, Dataset, LabelKind, LabelMode};
use eos_lab::linalg::{self, sym_eig, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;

fn reconstruction_error(ds: &Dataset) -> f64 {
    let s = ds.spectrum();
    let mut k = Matrix::zeros(ds.n(), ds.n());
    for (l, v) in s.values.iter().zip(&s.vectors) {
        k.add_scaled(*l, &Matrix::outer(v, v));
    }
    k.sub(ds.gram()).max_abs()
}

#[test]
fn align_first_eigvec_projections() {
    let ds = gen_spectrum_dataset(4, 4, &[4.0, 2.0, 1.0, 0.5], LabelMode::AlignEigvec(1), 0).unwrap();
    let z = &ds.spectrum().z;
    assert!((z[0] - 2.0).abs() < 1e-12);
    for zi in &z[1..] {
        assert!(zi.abs() < 1e-12);
    }
    assert_eq!(ds.label_kind(), LabelKind::Real);
}

#[test]
fn requested_spectrum_is_exact() {
    let spec = [50.0, 20.0, 5.0, 1.0, 0.1];
    let ds = gen_spectrum_dataset(30, 8, &spec, LabelMode::RandomSign, 4).unwrap();
    // Independent oracle: eigenvalues of X^T X from a full decomposition.
    let e = sym_eig(ds.gram()).unwrap();
    for (i, l) in spec.iter().enumerate() {
        assert!((e.values[i] - l).abs() <= 1e-8 * l, "{i}: {} vs {l}", e.values[i]);
    }
    for v in &e.values[spec.len()..] {
        assert!(v.abs() <= 1e-8 * spec[0]);
    }
    assert!(reconstruction_error(&ds) <= 1e-8 * spec[0]);
}

#[test]
fn geometric_ratio_measured() {
    let ds = gen_spectrum_dataset(100, 20, &geometric_spectrum(20, 100.0, 1.5), LabelMode::RandomSign, 1).unwrap();
    let st = spectrum_stats(&ds);
    assert!((st.chi.unwrap() - 1.5).abs() < 1e-6);
    assert_eq!(st.r, 20);
}

#[test]
fn generation_is_deterministic() {
    let a = gen_spectrum_dataset(20, 6, &[3.0, 2.0, 1.0], LabelMode::ProjectionPower(1.0), 9).unwrap();
    let b = gen_spectrum_dataset(20, 6, &[3.0, 2.0, 1.0], LabelMode::ProjectionPower(1.0), 9).unwrap();
    assert_eq!(a, b);
    let c = gen_spectrum_dataset(20, 6, &[3.0, 2.0, 1.0], LabelMode::ProjectionPower(1.0), 10).unwrap();
    assert_ne!(a.x(), c.x());
}

#[test]
fn invalid_spectra_rejected() {
    assert!(gen_spectrum_dataset(3, 5, &[4.0, 3.0, 2.0, 1.0], LabelMode::RandomSign, 0).is_err());
    assert!(gen_spectrum_dataset(5, 5, &[1.0, 2.0], LabelMode::RandomSign, 0).is_err());
    assert!(gen_spectrum_dataset(5, 5, &[1.0, 0.0], LabelMode::RandomSign, 0).is_err());
    assert!(gen_spectrum_dataset(5, 5, &[2.0, 1.0], LabelMode::AlignEigvec(3), 0).is_err());
    assert!(gen_spectrum_dataset(5, 5, &[2.0, 1.0], LabelMode::ProjectionFloor(0.9), 0).is_err());
}

#[test]
fn random_sign_labels_have_norm_sqrt_n() {
    let ds = gen_spectrum_dataset(37, 5, &[3.0, 1.0], LabelMode::RandomSign, 2).unwrap();
    assert_eq!(ds.label_kind(), LabelKind::Signed);
    assert!(ds.y().iter().all(|&y| y == 1.0 || y == -1.0));
    assert!((ds.y_norm() - 37f64.sqrt()).abs() < 1e-12);
}

#[test]
fn projection_floor_respected() {
    let kappa = 0.2;
    let ds = gen_spectrum_dataset(40, 10, &geometric_spectrum(10, 30.0, 1.3), LabelMode::ProjectionFloor(kappa), 3).unwrap();
    let st = spectrum_stats(&ds);
    assert!(st.kappa >= kappa - 1e-12, "{}", st.kappa);
    assert!((ds.y_norm() - 40f64.sqrt()).abs() < 1e-10);
}

#[test]
fn stats_of_second_eigvec_labels() {
    let ds = gen_spectrum_dataset(6, 3, &[4.0, 2.0, 1.0], LabelMode::AlignEigvec(2), 0).unwrap();
    let st = spectrum_stats(&ds);
    assert!((st.chi.unwrap() - 2.0).abs() < 1e-12);
    assert!(st.kappa.abs() < 1e-12);
    assert!(st.top_gap);
    let ds = gen_spectrum_dataset(6, 3, &[6.0, 2.0, 1.0], LabelMode::RandomSign, 0).unwrap();
    assert!(spectrum_stats(&ds).top_gap);
    let ds = gen_spectrum_dataset(6, 3, &[3.0, 2.0, 1.0], LabelMode::RandomSign, 0).unwrap();
    assert!(!spectrum_stats(&ds).top_gap);
    let ds = gen_spectrum_dataset(6, 3, &[3.0], LabelMode::RandomSign, 0).unwrap();
    assert!(spectrum_stats(&ds).chi.is_none());
}

fn write_tmp(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn csv_parse_case() {
    let f = write_tmp("1,0,1\n0,1,-1\n1,1,1\n");
    let ds = load_csv(f.path(), false).unwrap();
    assert_eq!((ds.d(), ds.n()), (2, 3));
    assert_eq!(ds.y(), &[1.0, -1.0, 1.0]);
    assert_eq!(ds.x().column(1), vec![0.0, 1.0]);
    assert_eq!(ds.label_kind(), LabelKind::Signed);
}

#[test]
fn csv_errors_name_the_row() {
    let f = write_tmp("1,0,1\n0,1\n");
    match load_csv(f.path(), false) {
        Err(dataset::DatasetError::Csv { row, .. }) => assert_eq!(row, 2),
        other => panic!("{other:?}"),
    }
    let f = write_tmp("a,b,y\n1,0,1\n0,x,1\n");
    match load_csv(f.path(), true) {
        Err(dataset::DatasetError::Csv { row, msg }) => {
            assert_eq!(row, 3);
            assert!(msg.contains("column 2"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn csv_round_trip() {
    let ds = gen_spectrum_dataset(12, 4, &[5.0, 2.0, 1.0], LabelMode::ProjectionPower(1.0), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for header in [false, true] {
        let p = dir.path().join(format!("d{header}.csv"));
        dataset::export_csv(&ds, &p, header).unwrap();
        let back = load_csv(&p, header).unwrap();
        assert_eq!(back.x(), ds.x());
        assert_eq!(back.y(), ds.y());
        let again = load_csv(&p, header).unwrap();
        assert_eq!(back, again);
    }
}

#[test]
fn csv_top_eigenvalue_scales_with_n() {
    // Nonnegative "pixel" features: lambda_1 ~ n ||mean||^2, so lambda_1/n is stable across subsamples.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = 48;
    let rows: Vec<Vec<f64>> = (0..400).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
    let dir = tempfile::tempdir().unwrap();
    let mut ratios = vec![];
    for n in [100, 200, 400] {
        let p = dir.path().join(format!("n{n}.csv"));
        let mut text = String::new();
        for r in &rows[..n] {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            text.push_str(&format!("{},1\n", cells.join(",")));
        }
        std::fs::write(&p, text).unwrap();
        let ds = load_csv(&p, false).unwrap();
        ratios.push(ds.lambda1() / n as f64);
    }
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(hi / lo < 1.5, "{ratios:?}");
}

#[test]
fn mean_subtract_small_case() {
    let x = Matrix::from_columns(&[vec![1.0, 1.0], vec![3.0, 1.0]]).unwrap();
    let ds = Dataset::from_parts(x, vec![1.0, -1.0]).unwrap();
    let c = mean_subtract(&ds).unwrap();
    assert_eq!(c.x().column(0), vec![-1.0, 0.0]);
    assert_eq!(c.x().column(1), vec![1.0, 0.0]);
}

#[test]
fn mean_subtract_idempotent_and_drops_full_rank() {
    let ds = gen_spectrum_dataset(8, 8, &geometric_spectrum(8, 10.0, 1.4), LabelMode::RandomSign, 6).unwrap();
    let once = mean_subtract(&ds).unwrap();
    let twice = mean_subtract(&once).unwrap();
    assert!(once.x().sub(twice.x()).max_abs() < 1e-12);
    for i in 0..once.d() {
        assert!(once.x().row(i).iter().sum::<f64>().abs() < 1e-12);
    }
    assert_eq!(once.rank(), 7);
    // Recomputed spectrum agrees with a direct decomposition.
    let e = sym_eig(once.gram()).unwrap();
    for (a, b) in once.spectrum().values.iter().zip(&e.values) {
        assert!((a - b).abs() < 1e-9 * e.values[0]);
    }
    assert!(spectrum_stats(&once).chi.is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_datasets_reconstruct(n in 2usize..24, d in 1usize..12, seed in any::<u64>(), q in 1.05f64..3.0) {
        let r = n.min(d);
        let ds = gen_spectrum_dataset(n, d, &geometric_spectrum(r, 10.0, q), LabelMode::RandomSign, seed).unwrap();
        prop_assert!(reconstruction_error(&ds) <= 1e-8 * ds.lambda1());
        let s = ds.spectrum();
        for w in s.values.windows(2) {
            prop_assert!(w[0] >= w[1] && w[1] > 0.0);
        }
        prop_assert!((ds.y_norm() - (n as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn align_mode_projections(n in 2usize..20, seed in any::<u64>(), pick in 0usize..100) {
        let r = n.min(6);
        let i = pick % r + 1;
        let ds = gen_spectrum_dataset(n, 6, &geometric_spectrum(r, 8.0, 1.7), LabelMode::AlignEigvec(i), seed).unwrap();
        let sn = (n as f64).sqrt();
        for (j, z) in ds.spectrum().z.iter().enumerate() {
            if j + 1 == i {
                prop_assert!((z - sn).abs() <= 1e-8 * sn);
            } else {
                prop_assert!(z.abs() <= 1e-8 * sn);
            }
        }
        let v = &ds.spectrum().vectors[i - 1];
        prop_assert!((linalg::norm(v) - 1.0).abs() < 1e-12);
    }
}
