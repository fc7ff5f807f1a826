use eos_lab::cli::{self, main_with, EXIT_CHECK_FAIL, EXIT_CONFIG, EXIT_DIVERGED, EXIT_PASS, PLOT_FILES, REPORT_FILE, SUMMARY_FILE, TRAJECTORY_FILE};
use eos_lab::config::{load_config, preset, PRESETS};
use eos_lab::tracker;
use eos_lab::verify::{Status, VerificationReport};
use std::path::{Path, PathBuf};
use std::process::Command;

const SMALL: &str = r#"
[run]
model_kind = "twolayer"
width = 40
eta_fraction = 0.8
steps = 150
seed = 0

[dataset]
kind = "spectrum"
n = 40
d = 10
spectrum_kind = "outlier_geometric"
rank = 10
lambda1 = 40.0
tail_hi = 12.0
tail_lo = 0.1
label_mode = "projection_power:1.0"

[experiment]
dfpos_trials = 500
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn call(args: &[&str]) -> i32 {
    let mut v = vec!["eos-lab"];
    v.extend_from_slice(args);
    main_with(v)
}

fn report(dir: &Path) -> VerificationReport {
    VerificationReport::from_json(&std::fs::read_to_string(dir.join(REPORT_FILE)).unwrap()).unwrap()
}

#[test]
fn run_writes_logs_report_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("out");
    assert_eq!(call(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_PASS);
    for f in [TRAJECTORY_FILE, cli::DIAGNOSTICS_FILE, REPORT_FILE].iter().chain(PLOT_FILES.iter()) {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(report(&out).passed());
    let svg = std::fs::read_to_string(out.join(PLOT_FILES[0])).unwrap();
    assert!(svg.starts_with("<svg"));

    let bare = tmp.path().join("bare");
    assert_eq!(call(&["run", cfg.to_str().unwrap(), "--out", bare.to_str().unwrap(), "--no-plots"]), EXIT_PASS);
    assert!(PLOT_FILES.iter().all(|f| !bare.join(f).exists()));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    for k in ["a", "b"] {
        let out = tmp.path().join(k);
        assert_eq!(call(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_PASS);
    }
    for f in [TRAJECTORY_FILE, cli::DIAGNOSTICS_FILE, PLOT_FILES[0]] {
        assert_eq!(std::fs::read(tmp.path().join("a").join(f)).unwrap(), std::fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_override_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    call(&["run", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--no-plots"]);
    call(&["run", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--no-plots", "--seed", "5"]);
    assert_ne!(std::fs::read(a.join(TRAJECTORY_FILE)).unwrap(), std::fs::read(b.join(TRAJECTORY_FILE)).unwrap());
    assert_eq!(report(&b).run_config.run.seed, 5);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let zero = write_config(tmp.path(), "zero.toml", &SMALL.replace("steps = 150", "steps = 0"));
    assert_eq!(call(&["run", zero.to_str().unwrap()]), EXIT_CONFIG);
    let broken = write_config(tmp.path(), "broken.toml", "[run\nsteps = 3");
    assert_eq!(call(&["run", broken.to_str().unwrap()]), EXIT_CONFIG);
    let unknown = write_config(tmp.path(), "unknown.toml", &SMALL.replace("seed = 0", "seeed = 0"));
    assert_eq!(call(&["run", unknown.to_str().unwrap()]), EXIT_CONFIG);
    assert_eq!(call(&["run", tmp.path().join("missing.toml").to_str().unwrap()]), EXIT_CONFIG);
    assert_eq!(call(&["frobnicate"]), EXIT_CONFIG);
    let empty = write_config(tmp.path(), "empty.toml", &format!("{SMALL}\n[sweep]\nparam = \"width\"\nvalues = []\n"));
    assert_eq!(call(&["sweep", empty.to_str().unwrap()]), EXIT_CONFIG);
    let nosweep = write_config(tmp.path(), "nosweep.toml", SMALL);
    assert_eq!(call(&["sweep", nosweep.to_str().unwrap()]), EXIT_CONFIG);
}

#[test]
fn divergence_exits_3_with_partial_log() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &SMALL.replace("eta_fraction = 0.8", "eta_fraction = 3.0").replace("steps = 150", "steps = 400"));
    let out = tmp.path().join("out");
    assert_eq!(call(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_DIVERGED);
    let recs = tracker::read_trajectory(&out.join(TRAJECTORY_FILE)).unwrap();
    assert!(!recs.is_empty() && recs.len() < 400);
    assert!(report(&out).diverged);
}

#[test]
fn verify_reproduces_run_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("out");
    assert_eq!(call(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_PASS);
    let before = std::fs::read(out.join(REPORT_FILE)).unwrap();
    let csv = out.join(TRAJECTORY_FILE);
    assert_eq!(call(&["verify", csv.to_str().unwrap(), cfg.to_str().unwrap()]), EXIT_PASS);
    assert_eq!(std::fs::read(out.join(REPORT_FILE)).unwrap(), before);
}

#[test]
fn verify_rejects_truncated_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("out");
    call(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--no-plots"]);
    let csv = out.join(TRAJECTORY_FILE);
    let text = std::fs::read_to_string(&csv).unwrap();
    let cut = text.len() - 40;
    std::fs::write(&csv, &text[..cut]).unwrap();
    assert_eq!(call(&["verify", csv.to_str().unwrap(), cfg.to_str().unwrap()]), EXIT_CONFIG);
}

#[test]
fn verify_flags_injected_outlier_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("out");
    call(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--no-plots"]);
    let csv = out.join(TRAJECTORY_FILE);
    let mut recs = tracker::read_trajectory(&csv).unwrap();
    let eta = 2.0 / recs[0].two_over_eta;
    recs[10].lambda2 = 1.1 / eta;
    tracker::write_trajectory(&csv, &recs).unwrap();
    let rep_dir = tmp.path().join("rep");
    assert_eq!(call(&["verify", csv.to_str().unwrap(), cfg.to_str().unwrap(), "--out", rep_dir.to_str().unwrap(), "--no-plots"]), EXIT_CHECK_FAIL);
    let rep = report(&rep_dir);
    let e = rep.check("outlier").unwrap();
    assert_eq!(e.status, Status::Fail);
    assert_eq!(e.violating_steps, vec![10]);
}

#[test]
fn sweep_writes_subdirs_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{}\n[sweep]\nparam = \"width\"\nvalues = [40, 60]\n", SMALL.replace("steps = 150", "steps = 60"));
    let cfg = write_config(tmp.path(), "s.toml", &text);
    let out = tmp.path().join("sweep");
    let code = call(&["sweep", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "2", "--no-plots"]);
    let summary: cli::SweepSummary = serde_json::from_str(&std::fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary.param, "width");
    assert_eq!(summary.entries.len(), 2);
    for (e, w) in summary.entries.iter().zip(["40", "60"]) {
        assert_eq!(e.value, w);
        assert!(out.join(format!("width_{w}")).join(TRAJECTORY_FILE).exists());
        assert!(e.c2_estimate.is_some());
        assert_eq!(report(&out.join(format!("width_{w}"))).run_config.run.width.to_string(), w);
    }
    assert_eq!(code, summary.entries.iter().map(|e| e.exit_code).max().unwrap());
    assert!(summary.c2_spread.is_some());
}

#[test]
fn sweep_is_independent_of_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{}\n[sweep]\nparam = \"seed\"\nvalues = [1, 2, 3]\n", SMALL.replace("steps = 150", "steps = 30"));
    let cfg = write_config(tmp.path(), "s.toml", &text);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    call(&["sweep", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--workers", "1", "--no-plots"]);
    call(&["sweep", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--workers", "3", "--no-plots"]);
    for s in ["seed_1", "seed_2", "seed_3"] {
        assert_eq!(std::fs::read(a.join(s).join(TRAJECTORY_FILE)).unwrap(), std::fs::read(b.join(s).join(TRAJECTORY_FILE)).unwrap());
    }
}

#[test]
fn binary_exit_codes_and_worker_env() {
    let exe = env!("CARGO_BIN_EXE_eos-lab");
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &SMALL.replace("steps = 150", "steps = 20"));
    let status =
        Command::new(exe).args(["run", cfg.to_str().unwrap(), "--no-plots", "--out"]).arg(tmp.path().join("o")).env("EOS_LAB_WORKERS", "2").status().unwrap();
    assert_eq!(status.code(), Some(EXIT_PASS));
    let status = Command::new(exe).args(["run", "/nonexistent/cfg.toml"]).status().unwrap();
    assert_eq!(status.code(), Some(EXIT_CONFIG));
    let status = Command::new(exe).args(["run", cfg.to_str().unwrap()]).env("EOS_LAB_WORKERS", "many").status().unwrap();
    assert_eq!(status.code(), Some(EXIT_CONFIG));
}

#[test]
fn preset_files_match_builtins() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    for name in PRESETS {
        let from_file = load_config(&dir.join(format!("{name}.toml"))).unwrap();
        assert_eq!(from_file, preset(name).unwrap(), "{name}");
    }
}
