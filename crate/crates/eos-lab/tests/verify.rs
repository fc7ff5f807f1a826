use eos_lab::config::{preset, DatasetSpec, EtaSpec, ExperimentConfig, SpectrumShape};
use eos_lab::dataset::LabelMode;
use eos_lab::phases::{Phase, PhaseSegment};
use eos_lab::tracker::{self, RunContext, TrajectoryRecord};
use eos_lab::verify::{
    self, check_adrop, check_anorm_coupling, check_dfpos_property, check_geometric_growth, check_outlier, check_ps_sign, check_r_tracking, RunLogs, Status,
    TrackingInputs, VerificationReport,
};

const ETA: f64 = 0.5;

fn rec(t: usize) -> TrajectoryRecord {
    TrajectoryRecord {
        t,
        loss: 1.0,
        lambda1: 1.0,
        lambda2: 0.3 / ETA,
        lambda_star: 1.0,
        two_over_eta: 2.0 / ETA,
        anorm2: 10.0,
        dtf: -1.0,
        dtv1: 0.5,
        rnorm2: 0.75,
        rprime_norm2: 0.75,
        rdiff_norm: 0.0,
        gamma_norm: 0.0,
        v1_drift: 0.0,
        anomaly: false,
        fo_err_d: 0.0,
        fo_err_a: 0.0,
        alpha_margin: f64::NAN,
    }
}

fn log(n: usize) -> Vec<TrajectoryRecord> {
    (0..n).map(rec).collect()
}

fn one_segment(phase: Phase, len: usize) -> Vec<PhaseSegment> {
    vec![PhaseSegment { phase, start: 0, end: len - 1, len }]
}

fn small_experiment(steps: usize) -> ExperimentConfig {
    let mut cfg = preset("linear_eos").unwrap();
    cfg.run.width = 40;
    cfg.run.steps = steps;
    cfg.dfpos_trials = 500;
    cfg.run.data.spec = DatasetSpec::Spectrum {
        n: 40,
        d: 10,
        shape: SpectrumShape::OutlierGeometric { rank: 10, lambda1: 40.0, tail_hi: 12.0, tail_lo: 0.1 },
        label_mode: LabelMode::ProjectionPower(1.0),
        sign_labels: false,
    };
    cfg
}

fn run_and_verify(cfg: &ExperimentConfig) -> VerificationReport {
    let out = tracker::run(&cfg.run).unwrap();
    let logs = RunLogs { records: &out.records, diagnostics: Some(&out.diagnostics), relaxed: Some(&out.relaxed) };
    verify::verify(cfg, &out.context, &logs)
}

#[test]
fn outlier_pass_and_single_violation() {
    let mut r = log(10);
    let e = check_outlier(&r, ETA);
    assert_eq!(e.status, Status::Pass);
    assert!((e.measured["margin"] - 0.7).abs() < 1e-12);
    r[4].lambda2 = 1.1 / ETA;
    let e = check_outlier(&r, ETA);
    assert_eq!(e.status, Status::Fail);
    assert_eq!(e.steps_violating, 1);
    assert_eq!(e.violating_steps, vec![4]);
}

#[test]
fn coupling_fraction_extremes() {
    let mut r = log(6);
    for (i, x) in r.iter_mut().enumerate() {
        x.lambda1 = 1.0 + i as f64;
        x.anorm2 = 10.0 + i as f64;
    }
    let e = check_anorm_coupling(&r);
    assert_eq!(e.status, Status::ReportOnly);
    assert_eq!(e.measured["anomaly_fraction"], 0.0);
    for x in r.iter_mut().skip(1) {
        x.anomaly = true;
    }
    assert_eq!(check_anorm_coupling(&r).measured["anomaly_fraction"], 1.0);
    assert_eq!(check_anorm_coupling(&r[..1]).status, Status::Skipped);
}

#[test]
fn ps_sign_cases() {
    let mut r = log(8);
    r[0].dtf = 0.0;
    assert_eq!(check_ps_sign(&r, &one_segment(Phase::I, 8)).status, Status::Pass);
    r[5].dtf = 1.0;
    let e = check_ps_sign(&r, &one_segment(Phase::I, 8));
    assert_eq!(e.status, Status::Fail);
    assert_eq!(e.violating_steps, vec![5]);
    // Outside Phase I the sign is not constrained.
    assert_eq!(check_ps_sign(&r, &one_segment(Phase::II, 8)).status, Status::Pass);
}

#[test]
fn geometric_growth_factor() {
    // Lambda = 3/eta gives tau = 1; with eps2 = 0.01 and c = 10 the required factor is 2 * 0.89 = 1.78.
    let mut r = log(6);
    for (i, x) in r.iter_mut().enumerate() {
        x.lambda1 = 3.0 / ETA;
        x.dtv1 = 0.01 * 2f64.powi(i as i32);
    }
    let e = check_geometric_growth(&r, ETA, 10, &one_segment(Phase::II, 6), 0.01, 10.0);
    assert_eq!(e.status, Status::ReportOnly);
    assert_eq!(e.steps_violating, 0);
    assert_eq!(e.measured["eligible_steps"], 5.0);
    for (i, x) in r.iter_mut().enumerate() {
        x.dtv1 = 0.01 * 1.77f64.powi(i as i32);
    }
    let e = check_geometric_growth(&r, ETA, 10, &one_segment(Phase::II, 6), 0.01, 10.0);
    assert_eq!(e.steps_violating, 5);
    for (i, x) in r.iter_mut().enumerate() {
        x.dtv1 = 0.01 * 1.79f64.powi(i as i32);
    }
    assert_eq!(check_geometric_growth(&r, ETA, 10, &one_segment(Phase::II, 6), 0.01, 10.0).steps_violating, 0);
}

#[test]
fn dfpos_examples_and_trials() {
    let y = [0.3, -1.2, 0.8];
    let ny2: f64 = y.iter().map(|v| v * v).sum();
    for (k, want) in [(2.0, 6.0), (-2.0, 2.0)] {
        let d: Vec<f64> = y.iter().map(|v| k * v).collect();
        let dtf: f64 = d.iter().zip(&y).map(|(a, b)| a * (a + b)).sum();
        assert!((dtf - want * ny2).abs() < 1e-12 && dtf > 0.0);
    }
    let e = check_dfpos_property(10_000, 7);
    assert_eq!(e.status, Status::Pass);
    assert_eq!(e.steps_violating, 0);
    assert_eq!(e.measured["trials"], 10_000.0);
    assert_eq!(check_dfpos_property(300, 3), check_dfpos_property(300, 3));
}

#[test]
fn adrop_cases() {
    let n = 10;
    let y_norm = 2.0;
    let mut r = log(2);
    // ||D|| = 2 ||Y||, D = 2Y: D^T F = 6 ||Y||^2.
    r[0].loss = 4.0 * y_norm * y_norm / n as f64;
    r[0].dtf = 6.0 * y_norm * y_norm;
    r[1].anorm2 = r[0].anorm2 - 4.0 * ETA / n as f64 * r[0].dtf;
    r[1].loss = 0.1;
    let segs = one_segment(Phase::III, 2);
    let e = check_adrop(&r, ETA, n, y_norm, &segs);
    assert_eq!(e.measured["eligible_steps"], 1.0);
    assert_eq!(e.steps_violating, 0);
    assert_eq!(e.measured["realized_violations"], 0.0);
    // ||D|| <= ||Y||: nothing to check.
    let mut q = log(2);
    q[0].loss = y_norm * y_norm / n as f64 * 0.5;
    q[1].loss = q[0].loss;
    assert_eq!(check_adrop(&q, ETA, n, y_norm, &segs).measured["eligible_steps"], 0.0);
}

fn tracking(eps2: f64) -> TrackingInputs {
    TrackingInputs { eta: ETA, eps2, b_lambda: 1.5, b_d: 2.0, lambda_r: 0.1 }
}

#[test]
fn r_tracking_cases() {
    let r = log(10);
    let e = check_r_tracking(&r, None, &tracking(0.0));
    assert_eq!(e.status, Status::Pass);
    assert_eq!(e.measured["max_rdiff_norm"], 0.0);
    let mut bad = log(10);
    bad[6].rprime_norm2 = 0.9;
    let e = check_r_tracking(&bad, None, &tracking(0.0));
    assert_eq!(e.status, Status::Fail);
    assert_eq!(e.measured["rprime_increases"], 1.0);
    let mut far = log(10);
    far[3].rdiff_norm = 1.0;
    assert_eq!(check_r_tracking(&far, None, &tracking(1e-6)).status, Status::Fail);
    // Bound 6 * 2 * 1 * 1e-2 / (0.5 * 0.1) = 2.4.
    far[3].rdiff_norm = 2.3;
    assert_eq!(check_r_tracking(&far, None, &tracking(1e-4)).status, Status::Pass);
}

#[test]
fn report_round_trip_and_identities() {
    let cfg = small_experiment(120);
    let rep = run_and_verify(&cfg);
    let back = VerificationReport::from_json(&rep.to_json()).unwrap();
    assert_eq!(back, rep);
    assert_eq!(back.to_json(), rep.to_json());
    for name in ["residual_update", "gram_update", "key_equation", "anorm_update", "outlier", "dfpos_property"] {
        assert_eq!(rep.check(name).unwrap().status, Status::Pass, "{name}");
    }
    assert!(rep.checks.iter().all(|c| !c.paper_anchor.is_empty()));
    assert!(rep.constants.c2_estimate.is_some() && rep.constants.epsilon2.is_some());
    assert!(!rep.diverged);
    let names: Vec<&str> = rep.checks.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, verify::CHECK_NAMES.to_vec());
}

#[test]
fn report_only_entries_never_fail() {
    let cfg = small_experiment(120);
    let rep = run_and_verify(&cfg);
    for name in ["anorm_coupling", "geometric_growth", "adrop", "relaxed_ps", "eos_recovery", "interpolation", "first_order", "contraction", "column_space"] {
        assert!(matches!(rep.check(name).unwrap().status, Status::ReportOnly | Status::Skipped), "{name}");
    }
}

#[test]
fn check_filter_is_honoured() {
    let mut cfg = small_experiment(20);
    cfg.verify_checks = vec!["outlier".into(), "ps_sign".into()];
    let rep = run_and_verify(&cfg);
    let names: Vec<&str> = rep.checks.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, vec!["outlier", "ps_sign"]);
}

#[test]
fn divergent_runs_are_skipped_not_failed() {
    let mut cfg = small_experiment(300);
    cfg.run.eta = EtaSpec::Fraction(3.0);
    let rep = run_and_verify(&cfg);
    assert!(rep.diverged);
    assert!(rep.passed());
    for c in &rep.checks {
        assert_ne!(c.status, Status::Fail, "{}", c.name);
        if c.name != "dfpos_property" && c.status != Status::ReportOnly {
            assert_eq!(c.status, Status::Skipped, "{}", c.name);
        }
    }
    assert_eq!(rep.check("dfpos_property").unwrap().status, Status::Pass);
}

#[test]
fn verification_is_deterministic() {
    let cfg = small_experiment(60);
    let out = tracker::run(&cfg.run).unwrap();
    let logs = RunLogs { records: &out.records, diagnostics: Some(&out.diagnostics), relaxed: None };
    let ctx: &RunContext = &out.context;
    assert_eq!(verify::verify(&cfg, ctx, &logs), verify::verify(&cfg, ctx, &logs));
    let bare = RunLogs { records: &out.records, diagnostics: None, relaxed: None };
    let rep = verify::verify(&cfg, ctx, &bare);
    assert_eq!(rep.check("residual_update").unwrap().status, Status::Skipped);
}
