//! Training driver. Steps a two-layer net or an MLP with full-batch GD, measures
//! the per-step quantities of the residual dynamics, advances the deflated
//! auxiliary sequence `R'`, and reads/writes the trajectory logs.
//!
//! Three CSV files describe a run:
//! * `trajectory.csv`: one [`TrajectoryRecord`] per measured step, fixed columns.
//! * `diagnostics.csv`: one [`Diagnostics`] row per measured step (identity
//!   residuals, `||e_1||`, `lambda_min`, output-layer sharpness, ...).
//! * `relaxed_ps.csv`: per-index rows of the relaxed sharpening condition.

use crate::config::{ConfigError, EtaSpec, ModelKind, RunConfig, V1Source};
use crate::dataset::{Dataset, DatasetError, LabelKind, RANK_TOL};
use crate::linalg::{self, dot, norm, norm_sq, sym_eig, sym_spectral_norm, LinalgError, Matrix};
use crate::mlp::{self, MlpError, MlpNet};
use crate::spectrum::{self, SpectrumState, DEGENERATE_GAP, POWER_MAX_ITER, POWER_TOL};
use crate::twolayer::{self, DataRoot, TwoLayerError, TwoLayerNet, TwoLayerState};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e12;
/// Relative dead zone for the signs entering the anomaly flag.
pub const ANOMALY_DEAD_ZONE: f64 = 1e-12;

pub const TRAJECTORY_COLUMNS: [&str; 18] = [
    "t",
    "loss",
    "lambda1",
    "lambda2",
    "lambda_star",
    "two_over_eta",
    "anorm2",
    "dtf",
    "dtv1",
    "rnorm2",
    "rprime_norm2",
    "rdiff_norm",
    "gamma_norm",
    "v1_drift",
    "anomaly",
    "fo_err_d",
    "fo_err_a",
    "alpha_margin",
];

pub const DIAGNOSTIC_COLUMNS: [&str; 14] = [
    "t",
    "dnorm",
    "e1_norm",
    "res_update",
    "res_gram",
    "res_key",
    "res_anorm",
    "interp_ks",
    "interp_residual",
    "mstar_top",
    "m_a_top",
    "lambda_min",
    "lin_contraction",
    "null_leak",
];

pub const RELAXED_COLUMNS: [&str; 5] = ["t", "index", "lhs", "rhs", "flag"];

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    TwoLayer(#[from] TwoLayerError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{file}: {msg}")]
    Schema { file: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub loss: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_star: f64,
    pub two_over_eta: f64,
    pub anorm2: f64,
    pub dtf: f64,
    pub dtv1: f64,
    pub rnorm2: f64,
    pub rprime_norm2: f64,
    pub rdiff_norm: f64,
    /// `||Gamma||`, two-layer runs only (NaN otherwise).
    pub gamma_norm: f64,
    pub v1_drift: f64,
    pub anomaly: bool,
    pub fo_err_d: f64,
    pub fo_err_a: f64,
    /// `min(2/eta - Lambda, lambda_min(M))` while `Lambda < 2/eta`, NaN otherwise.
    pub alpha_margin: f64,
}

impl TrajectoryRecord {
    fn values(&self) -> [f64; 16] {
        [
            self.loss,
            self.lambda1,
            self.lambda2,
            self.lambda_star,
            self.two_over_eta,
            self.anorm2,
            self.dtf,
            self.dtv1,
            self.rnorm2,
            self.rprime_norm2,
            self.rdiff_norm,
            self.gamma_norm,
            self.v1_drift,
            self.fo_err_d,
            self.fo_err_a,
            self.alpha_margin,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub t: usize,
    pub dnorm: f64,
    /// `||R(t+1) - (I - eta M(t)) R(t)||`.
    pub e1_norm: f64,
    /// Two-layer identity residuals; NaN for MLPs.
    pub res_update: f64,
    pub res_gram: f64,
    pub res_key: f64,
    /// Output-layer norm update residual (exact for both model kinds).
    pub res_anorm: f64,
    pub interp_ks: f64,
    pub interp_residual: f64,
    /// `lambda_max(M*)` for two-layer runs, NaN otherwise.
    pub mstar_top: f64,
    /// `lambda_max(M_A)`.
    pub m_a_top: f64,
    pub lambda_min: f64,
    /// `||(I - eta M) D|| / ||D||`.
    pub lin_contraction: f64,
    /// `||P_null D|| / ||D||` for the null space of `X^T X` (0 at full rank).
    pub null_leak: f64,
}

impl Diagnostics {
    fn values(&self) -> [f64; 13] {
        [
            self.dnorm,
            self.e1_norm,
            self.res_update,
            self.res_gram,
            self.res_key,
            self.res_anorm,
            self.interp_ks,
            self.interp_residual,
            self.mstar_top,
            self.m_a_top,
            self.lambda_min,
            self.lin_contraction,
            self.null_leak,
        ]
    }
}

/// Discrete relaxed-sharpening terms for one eigen-index at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxedPsRow {
    pub t: usize,
    /// 1-based eigen-index.
    pub index: usize,
    /// `F(t)^T (v_i(t+1) - v_i(t)) / eta`.
    pub lhs: f64,
    /// `lambda_i(t) D(t)^T v_i(t)`.
    pub rhs: f64,
    pub flag: RelaxedFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxedFlag {
    Ok,
    /// Eigenvalue within a near-degenerate cluster.
    Degenerate,
    /// Index at or beyond the numerical rank of `M`.
    BeyondRank,
}

impl RelaxedFlag {
    fn name(self) -> &'static str {
        match self {
            RelaxedFlag::Ok => "ok",
            RelaxedFlag::Degenerate => "degenerate",
            RelaxedFlag::BeyondRank => "beyond_rank",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "ok" => Some(RelaxedFlag::Ok),
            "degenerate" => Some(RelaxedFlag::Degenerate),
            "beyond_rank" => Some(RelaxedFlag::BeyondRank),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    TwoLayer(TwoLayerNet),
    Mlp(MlpNet),
}

impl Model {
    pub fn anorm2(&self) -> f64 {
        match self {
            Model::TwoLayer(n) => n.anorm2(),
            Model::Mlp(n) => n.anorm2(),
        }
    }
}

/// Static facts about a run that the checks need besides the logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunContext {
    pub model_kind: ModelKind,
    pub n: usize,
    pub d: usize,
    pub width: usize,
    pub param_count: usize,
    /// Rank of `X^T X`.
    pub rank: usize,
    /// Smallest nonzero eigenvalue of `X^T X`.
    pub lambda_r_data: f64,
    pub lambda1_data: f64,
    pub y_norm: f64,
    pub signed_labels: bool,
    pub output_frozen: bool,
    pub v1_source: V1Source,
    pub chi: Option<f64>,
    pub kappa: f64,
}

impl RunContext {
    pub fn new(cfg: &RunConfig, ds: &Dataset) -> Self {
        let d = ds.d();
        let param_count = match cfg.model_kind {
            ModelKind::Twolayer => cfg.width * (d + 1),
            ModelKind::Mlp => cfg.mlp_dims(d).windows(2).map(|w| w[0] * w[1]).sum(),
        };
        let stats = crate::dataset::spectrum_stats(ds);
        let output_frozen = cfg.model_kind == ModelKind::Mlp && cfg.freeze_mask.last().copied().unwrap_or(false);
        RunContext {
            model_kind: cfg.model_kind,
            n: ds.n(),
            d,
            width: cfg.width,
            param_count,
            rank: ds.rank(),
            lambda_r_data: ds.lambda_r(),
            lambda1_data: ds.lambda1(),
            y_norm: ds.y_norm(),
            signed_labels: ds.label_kind() == LabelKind::Signed,
            output_frozen,
            v1_source: cfg.v1_source(),
            chi: stats.chi,
            kappa: stats.kappa,
        }
    }

    /// Whether `M` is structurally rank-deficient (`lambda_min(M) = 0`).
    pub fn rank_deficient(&self) -> bool {
        match self.model_kind {
            ModelKind::Twolayer => self.rank < self.n,
            ModelKind::Mlp => self.param_count < self.n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<TrajectoryRecord>,
    pub diagnostics: Vec<Diagnostics>,
    pub relaxed: Vec<RelaxedPsRow>,
    pub eta: f64,
    pub lambda0: f64,
    pub diverged: bool,
    pub final_model: Model,
    pub context: RunContext,
}

/// Everything measured from one parameter vector.
pub struct Snapshot {
    pub f: Vec<f64>,
    pub resid: Vec<f64>,
    pub anorm2: f64,
    kind: SnapKind,
    pub m_a_top: f64,
    pub gamma_norm: f64,
    pub mstar_top: f64,
}

enum SnapKind {
    TwoLayer(Box<TwoLayerState>),
    Mlp { m: Matrix, grads: Vec<Matrix> },
}

impl Snapshot {
    /// Gram matrix `M`.
    pub fn m(&self) -> &Matrix {
        match &self.kind {
            SnapKind::TwoLayer(s) => &s.mats.m,
            SnapKind::Mlp { m, .. } => m,
        }
    }

    /// Operator driving the exact residual update: `M*` for two-layer nets, `M` otherwise.
    pub fn mhat(&self) -> &Matrix {
        match &self.kind {
            SnapKind::TwoLayer(s) => &s.mats.mstar,
            SnapKind::Mlp { m, .. } => m,
        }
    }

    pub fn loss(&self) -> f64 {
        norm_sq(&self.resid) / self.resid.len() as f64
    }

    pub fn dtf(&self) -> f64 {
        dot(&self.resid, &self.f)
    }

    fn healthy(&self) -> bool {
        let l = self.loss();
        l.is_finite() && l <= DIVERGENCE_LOSS && self.anorm2.is_finite()
    }
}

fn top_core(root: Option<&DataRoot>, q: &Matrix, full: &Matrix) -> Result<f64, RunError> {
    match root {
        Some(r) => Ok(r.top_eig(q)?),
        None => Ok(spectrum::measure(full, None, None)?.lambda1),
    }
}

pub fn snapshot(model: &Model, ds: &Dataset, eta: f64, root: Option<&DataRoot>) -> Result<Snapshot, RunError> {
    match model {
        Model::TwoLayer(net) => {
            let st = TwoLayerState::new(net.clone(), ds, eta)?;
            let (gamma_norm, m_a_top, mstar_top) = match root {
                Some(r) => (r.sym_norm(&st.cores.gamma)?, r.top_eig(&st.cores.m_a)?, r.top_eig(&st.cores.mstar)?),
                None => {
                    let ma = ds.x().tr_matmul(&st.cores.m_a).matmul(ds.x());
                    (sym_spectral_norm(&st.mats.gamma), top_core(None, &st.cores.m_a, &ma)?, top_core(None, &st.cores.mstar, &st.mats.mstar)?)
                }
            };
            Ok(Snapshot {
                f: st.f.clone(),
                resid: st.resid.clone(),
                anorm2: net.anorm2(),
                kind: SnapKind::TwoLayer(Box::new(st)),
                m_a_top,
                gamma_norm,
                mstar_top,
            })
        }
        Model::Mlp(net) => {
            let cache = mlp::forward_cached(net, ds.x())?;
            let resid = linalg::sub(&cache.f, ds.y());
            let signals = mlp::backward_signals(net, &cache);
            let split = mlp::split_from(&signals, &cache);
            let grads = mlp::grads_from(&signals, &cache, &resid);
            let m_a_top = sym_spectral_norm(&split.m_a);
            Ok(Snapshot {
                f: cache.f.clone(),
                resid,
                anorm2: net.anorm2(),
                kind: SnapKind::Mlp { m: split.m, grads },
                m_a_top,
                gamma_norm: f64::NAN,
                mstar_top: f64::NAN,
            })
        }
    }
}

fn measure_snapshot(
    snap: &Snapshot,
    ds: &Dataset,
    root: Option<&DataRoot>,
    prev: Option<&SpectrumState>,
    reference: Option<&[f64]>,
) -> Result<SpectrumState, RunError> {
    if let (SnapKind::TwoLayer(st), Some(r)) = (&snap.kind, root) {
        let (l1, l2, v) = r.top_pair(&st.cores.m)?;
        return Ok(spectrum::from_pair(l1, l2, v, prev, st.mats.lambda_star));
    }
    let _ = ds;
    Ok(spectrum::measure(snap.m(), prev, reference)?)
}

fn step_model(model: &Model, snap: &Snapshot, ds: &Dataset, eta: f64) -> Result<Model, RunError> {
    match (model, &snap.kind) {
        (Model::TwoLayer(net), _) => Ok(Model::TwoLayer(twolayer::gd_step(net, ds, eta)?)),
        (Model::Mlp(net), SnapKind::Mlp { grads, .. }) => Ok(Model::Mlp(mlp::gd_step_mlp(net, grads, eta)?)),
        _ => unreachable!("snapshot kind matches model kind"),
    }
}

/// One application of `R' <- (I - eta Mhat (I - v v^T)) R'`.
pub fn rprime_step(rprime: &[f64], mhat: &Matrix, v1: &[f64], eta: f64) -> Vec<f64> {
    let p = linalg::project_out(rprime, v1);
    let mp = mhat.matvec(&p);
    let mut out = rprime.to_vec();
    linalg::axpy(-eta, &mp, &mut out);
    out
}

/// Relative errors of the first-order rules `D' = (I - eta M) D` and
/// `||A'||^2 = ||A||^2 - (4 eta / n) F^T D`.
pub fn first_order_errors(s0: &Snapshot, s1: &Snapshot, eta: f64, output_frozen: bool) -> (f64, f64) {
    let n = s0.resid.len() as f64;
    let md = s0.m().matvec(&s0.resid);
    let mut err = linalg::sub(&s1.resid, &s0.resid);
    linalg::axpy(eta, &md, &mut err);
    let fo_d = norm(&err) / (eta * norm(&md)).max(1e-30);
    let pred = if output_frozen { 0.0 } else { -4.0 * eta / n * s0.dtf() };
    let fo_a = (s1.anorm2 - s0.anorm2 - pred).abs() / pred.abs().max(1e-30);
    (fo_d, fo_a)
}

fn sign_dz(x: f64, scale: f64) -> i8 {
    if x.abs() <= ANOMALY_DEAD_ZONE * scale.abs().max(f64::MIN_POSITIVE) {
        0
    } else if x > 0.0 {
        1
    } else {
        -1
    }
}

/// `sign(Delta Lambda) != sign(Delta ||A||^2)`, both outside the dead zone.
pub fn is_anomaly(prev: &TrajectoryRecord, cur: &TrajectoryRecord) -> bool {
    let sl = sign_dz(cur.lambda1 - prev.lambda1, prev.lambda1);
    let sa = sign_dz(cur.anorm2 - prev.anorm2, prev.anorm2);
    sl != 0 && sa != 0 && sl != sa
}

fn lambda_min(m: &Matrix, lambda1: f64, rank_deficient: bool) -> Result<f64, RunError> {
    if rank_deficient {
        return Ok(0.0);
    }
    Ok(linalg::min_eig(m, lambda1.max(0.0) * 1.01 + f64::MIN_POSITIVE, POWER_TOL, POWER_MAX_ITER)?.max(0.0))
}

/// Eigenpairs oriented so that `D^T v_i >= 0`.
fn oriented_eig(m: &Matrix, resid: &[f64]) -> Result<linalg::EigenResult, RunError> {
    let mut e = sym_eig(m)?;
    for v in e.vectors.iter_mut() {
        if dot(resid, v) < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(e)
}

fn relaxed_rows(t: usize, indices: &[usize], e0: &linalg::EigenResult, e1: &linalg::EigenResult, s0: &Snapshot, eta: f64) -> Vec<RelaxedPsRow> {
    let lam1 = e0.values[0].abs().max(f64::MIN_POSITIVE);
    let gap_ok = |vals: &[f64], i: usize| {
        let lo = if i + 1 < vals.len() { vals[i] - vals[i + 1] } else { f64::INFINITY };
        let hi = if i > 0 { vals[i - 1] - vals[i] } else { f64::INFINITY };
        lo.min(hi) >= DEGENERATE_GAP * lam1
    };
    indices
        .iter()
        .map(|&idx| {
            let i = idx - 1;
            if i >= e0.values.len() || e0.values[i] <= RANK_TOL * lam1 {
                return RelaxedPsRow { t, index: idx, lhs: f64::NAN, rhs: f64::NAN, flag: RelaxedFlag::BeyondRank };
            }
            let v0 = &e0.vectors[i];
            let mut v1 = e1.vectors[i].clone();
            if dot(v0, &v1) < 0.0 {
                v1.iter_mut().for_each(|x| *x = -*x);
            }
            let lhs = dot(&s0.f, &linalg::sub(&v1, v0)) / eta;
            let rhs = e0.values[i] * dot(&s0.resid, v0);
            let flag = if gap_ok(&e0.values, i) && gap_ok(&e1.values, i) { RelaxedFlag::Ok } else { RelaxedFlag::Degenerate };
            RelaxedPsRow { t, index: idx, lhs, rhs, flag }
        })
        .collect()
}

pub fn init_model(cfg: &RunConfig, ds: &Dataset) -> Result<Model, RunError> {
    match cfg.model_kind {
        ModelKind::Twolayer => Ok(Model::TwoLayer(twolayer::init_symmetric(cfg.width, ds.d(), cfg.seed, cfg.w_scale)?)),
        ModelKind::Mlp => {
            let mut net = mlp::init_mlp(&cfg.mlp_dims(ds.d()), cfg.activation, cfg.seed, cfg.init_scale)?;
            if !cfg.freeze_mask.is_empty() {
                net.set_freeze(cfg.freeze_mask.clone())?;
            }
            Ok(Model::Mlp(net))
        }
    }
}

/// Build the dataset and model from `cfg` and train.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let ds = cfg.data.build(cfg.seed)?;
    let model = init_model(cfg, &ds)?;
    run_with(cfg, &ds, model)
}

/// Train `model` on `ds` with the schedule and measurement settings of `cfg`.
pub fn run_with(cfg: &RunConfig, ds: &Dataset, mut model: Model) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let context = RunContext::new(cfg, ds);
    let root = match model {
        Model::TwoLayer(_) if ds.d() < ds.n() => Some(DataRoot::new(ds)?),
        _ => None,
    };
    let root = root.as_ref();
    let reference: Option<&[f64]> = match (cfg.model_kind, cfg.v1_source()) {
        (ModelKind::Twolayer, _) | (_, V1Source::DataX) => Some(ds.v1()),
        _ => None,
    };
    let use_data_v1 = cfg.v1_source() == V1Source::DataX;

    let probe = snapshot(&model, ds, 0.0, root)?;
    let lambda0 = measure_snapshot(&probe, ds, root, None, reference)?.lambda1;
    let eta = match cfg.eta {
        EtaSpec::Absolute(e) => e,
        EtaSpec::Fraction(f) => f * 2.0 / lambda0,
    };
    let mut snap = snapshot(&model, ds, eta, root)?;
    let mut spec = measure_snapshot(&snap, ds, root, None, reference)?;
    let v1_of = |s: &SpectrumState| -> Vec<f64> {
        if use_data_v1 {
            ds.v1().to_vec()
        } else {
            s.v1.clone()
        }
    };
    let mut v1 = v1_of(&spec);
    let mut r = linalg::project_out(&snap.resid, &v1);
    let mut rprime = r.clone();

    let rank_deficient = context.rank_deficient();
    let relaxed_on = !cfg.relaxed_ps_indices.is_empty() && cfg.relaxed_ps_steps > 0;
    let mut eig_cur = if relaxed_on { Some(oriented_eig(snap.m(), &snap.resid)?) } else { None };

    let mut records: Vec<TrajectoryRecord> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut relaxed = Vec::new();
    let mut diverged = false;

    for t in 0..cfg.steps {
        if !snap.healthy() {
            diverged = true;
            break;
        }
        let measured = t % cfg.measure_every == 0;
        let next = step_model(&model, &snap, ds, eta).and_then(|m| {
            let s = snapshot(&m, ds, eta, root)?;
            Ok((m, s))
        });
        let next = match next {
            Ok(x) if x.1.healthy() => Some(x),
            Ok(_) | Err(RunError::TwoLayer(TwoLayerError::Diverged)) | Err(RunError::Mlp(MlpError::Diverged)) => None,
            Err(e) => return Err(e),
        };

        let dnorm = norm(&snap.resid);
        let md = snap.m().matvec(&snap.resid);
        let mut lin = snap.resid.clone();
        linalg::axpy(-eta, &md, &mut lin);
        let lin_contraction = norm(&lin) / dnorm.max(f64::MIN_POSITIVE);
        let mut lin_r = r.clone();
        linalg::axpy(-eta, &snap.m().matvec(&r), &mut lin_r);

        let mut diag = Diagnostics {
            t,
            dnorm,
            e1_norm: f64::NAN,
            res_update: f64::NAN,
            res_gram: f64::NAN,
            res_key: f64::NAN,
            res_anorm: f64::NAN,
            interp_ks: f64::NAN,
            interp_residual: f64::NAN,
            mstar_top: snap.mstar_top,
            m_a_top: snap.m_a_top,
            lambda_min: f64::NAN,
            lin_contraction,
            null_leak: null_leak(ds, &snap.resid, dnorm),
        };
        let two_over_eta = 2.0 / eta;
        let alpha_margin = if measured && spec.lambda1 < two_over_eta {
            let lmin = lambda_min(snap.m(), spec.lambda1, rank_deficient)?;
            diag.lambda_min = lmin;
            (two_over_eta - spec.lambda1).min(lmin)
        } else {
            f64::NAN
        };
        let mut rec = TrajectoryRecord {
            t,
            loss: snap.loss(),
            lambda1: spec.lambda1,
            lambda2: spec.lambda2,
            lambda_star: spec.lambda_star,
            two_over_eta,
            anorm2: snap.anorm2,
            dtf: snap.dtf(),
            dtv1: dot(&snap.resid, &v1),
            rnorm2: norm_sq(&r),
            rprime_norm2: norm_sq(&rprime),
            rdiff_norm: norm(&linalg::sub(&r, &rprime)),
            gamma_norm: snap.gamma_norm,
            v1_drift: spec.drift,
            anomaly: false,
            fo_err_d: f64::NAN,
            fo_err_a: f64::NAN,
            alpha_margin,
        };

        let Some((next_model, next_snap)) = next else {
            if measured {
                push_record(&mut records, rec);
                diagnostics.push(diag);
            }
            diverged = true;
            break;
        };

        let next_measured = (t + 1) % cfg.measure_every == 0 || t + 1 == cfg.steps;
        let next_spec = if next_measured { measure_snapshot(&next_snap, ds, root, Some(&spec), reference)? } else { spec.clone() };
        let next_v1 = v1_of(&next_spec);
        let next_r = linalg::project_out(&next_snap.resid, &next_v1);
        diag.e1_norm = norm(&linalg::sub(&next_r, &lin_r));
        let (fo_d, fo_a) = first_order_errors(&snap, &next_snap, eta, context.output_frozen);
        rec.fo_err_d = fo_d;
        rec.fo_err_a = fo_a;
        diag.res_anorm = anorm_residual(&snap, &next_snap, ds, eta, context.output_frozen);
        if let (SnapKind::TwoLayer(s0), SnapKind::TwoLayer(s1)) = (&snap.kind, &next_snap.kind) {
            diag.res_update = twolayer::check_residual_update(s0, s1, eta);
            diag.res_gram = twolayer::check_gram_update(ds, s0, s1, eta);
            diag.res_key = twolayer::check_key_equation(ds, s0, s1, eta);
            if let Some(rt) = root {
                let ip = twolayer::check_interpolation(rt, s0, s1)?;
                diag.interp_ks = ip.ks;
                diag.interp_residual = ip.residual;
            }
        }
        if relaxed_on && t < cfg.relaxed_ps_steps {
            let e1 = oriented_eig(next_snap.m(), &next_snap.resid)?;
            relaxed.extend(relaxed_rows(t, &cfg.relaxed_ps_indices, eig_cur.as_ref().expect("computed"), &e1, &snap, eta));
            eig_cur = Some(e1);
        }
        if measured {
            push_record(&mut records, rec);
            diagnostics.push(diag);
        }

        rprime = rprime_step(&rprime, snap.mhat(), &v1, eta);
        model = next_model;
        snap = next_snap;
        spec = next_spec;
        v1 = next_v1;
        r = next_r;
    }
    Ok(RunOutput { records, diagnostics, relaxed, eta, lambda0, diverged, final_model: model, context })
}

fn null_leak(ds: &Dataset, resid: &[f64], dnorm: f64) -> f64 {
    if ds.rank() >= ds.n() || dnorm == 0.0 {
        return 0.0;
    }
    let mut rest = resid.to_vec();
    for v in &ds.spectrum().vectors {
        linalg::axpy(-dot(v, resid), v, &mut rest);
    }
    norm(&rest) / dnorm
}

fn push_record(records: &mut Vec<TrajectoryRecord>, mut rec: TrajectoryRecord) {
    if let Some(prev) = records.last() {
        rec.anomaly = is_anomaly(prev, &rec);
    }
    records.push(rec);
}

/// `|Delta ||A||^2 - (-(4 eta / n) F^T D + eta^2 ||dL/dA||^2)| / max(||A||^2, 1)`.
fn anorm_residual(s0: &Snapshot, s1: &Snapshot, ds: &Dataset, eta: f64, output_frozen: bool) -> f64 {
    if output_frozen {
        return (s1.anorm2 - s0.anorm2).abs() / s0.anorm2.max(1.0);
    }
    let n = s0.resid.len() as f64;
    let ga2 = match &s0.kind {
        SnapKind::Mlp { grads, .. } => norm_sq(grads.last().expect("output layer").as_slice()),
        SnapKind::TwoLayer(st) => norm_sq(&twolayer::gradients(&st.net, ds, &st.resid).0),
    };
    let pred = -4.0 * eta / n * s0.dtf() + eta * eta * ga2;
    (s1.anorm2 - s0.anorm2 - pred).abs() / s0.anorm2.max(1.0)
}

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io { path: path.display().to_string(), msg: e.to_string() }
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), RunError> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn write_trajectory(path: &Path, records: &[TrajectoryRecord]) -> Result<(), RunError> {
    write_rows(
        path,
        &TRAJECTORY_COLUMNS,
        records.iter().map(|r| {
            let v = r.values();
            let mut row = vec![r.t.to_string()];
            row.extend(v[..13].iter().map(|x| fmt_f(*x)));
            row.push(if r.anomaly { "1" } else { "0" }.to_string());
            row.extend(v[13..].iter().map(|x| fmt_f(*x)));
            row
        }),
    )
}

pub fn write_diagnostics(path: &Path, diags: &[Diagnostics]) -> Result<(), RunError> {
    write_rows(
        path,
        &DIAGNOSTIC_COLUMNS,
        diags.iter().map(|d| {
            let mut row = vec![d.t.to_string()];
            row.extend(d.values().iter().map(|x| fmt_f(*x)));
            row
        }),
    )
}

pub fn write_relaxed(path: &Path, rows: &[RelaxedPsRow]) -> Result<(), RunError> {
    write_rows(path, &RELAXED_COLUMNS, rows.iter().map(|r| vec![r.t.to_string(), r.index.to_string(), fmt_f(r.lhs), fmt_f(r.rhs), r.flag.name().to_string()]))
}

/// Rows of a CSV whose header must equal `columns` exactly.
fn read_table(path: &Path, columns: &[&str]) -> Result<Vec<csv::StringRecord>, RunError> {
    let file = path.display().to_string();
    let schema = |msg: String| RunError::Schema { file: file.clone(), msg };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path).map_err(|e| io_err(path, e))?;
    let header = rdr.headers().map_err(|e| schema(e.to_string()))?.clone();
    for (i, want) in columns.iter().enumerate() {
        match header.get(i) {
            Some(got) if got.trim() == *want => {}
            Some(got) => return Err(schema(format!("column {} is `{}`, expected `{want}`", i + 1, got.trim()))),
            None => return Err(schema(format!("missing column `{want}`"))),
        }
    }
    if header.len() > columns.len() {
        return Err(schema(format!("unexpected extra column `{}`", &header[columns.len()])));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| schema(format!("row {}: {e}", i + 1)))?;
        if rec.len() < columns.len() {
            return Err(schema(format!("row {} is truncated: missing column `{}`", i + 1, columns[rec.len()])));
        }
        if rec.len() > columns.len() {
            return Err(schema(format!("row {} has {} fields, expected {}", i + 1, rec.len(), columns.len())));
        }
        rows.push(rec);
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, row: usize, col: usize, name: &str) -> Result<T, RunError> {
    rec[col]
        .trim()
        .parse::<T>()
        .map_err(|_| RunError::Schema { file: path.display().to_string(), msg: format!("row {row}: column `{name}` has unparsable value `{}`", &rec[col]) })
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>, RunError> {
    let rows = read_table(path, &TRAJECTORY_COLUMNS)?;
    rows.iter()
        .enumerate()
        .map(|(i, rec)| {
            let g = |c: usize| field::<f64>(path, rec, i + 1, c, TRAJECTORY_COLUMNS[c]);
            let anomaly: u8 = field(path, rec, i + 1, 14, "anomaly")?;
            if anomaly > 1 {
                return Err(RunError::Schema { file: path.display().to_string(), msg: format!("row {}: column `anomaly` must be 0 or 1", i + 1) });
            }
            Ok(TrajectoryRecord {
                t: field(path, rec, i + 1, 0, "t")?,
                loss: g(1)?,
                lambda1: g(2)?,
                lambda2: g(3)?,
                lambda_star: g(4)?,
                two_over_eta: g(5)?,
                anorm2: g(6)?,
                dtf: g(7)?,
                dtv1: g(8)?,
                rnorm2: g(9)?,
                rprime_norm2: g(10)?,
                rdiff_norm: g(11)?,
                gamma_norm: g(12)?,
                v1_drift: g(13)?,
                anomaly: anomaly == 1,
                fo_err_d: g(15)?,
                fo_err_a: g(16)?,
                alpha_margin: g(17)?,
            })
        })
        .collect()
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<Diagnostics>, RunError> {
    let rows = read_table(path, &DIAGNOSTIC_COLUMNS)?;
    rows.iter()
        .enumerate()
        .map(|(i, rec)| {
            let g = |c: usize| field::<f64>(path, rec, i + 1, c, DIAGNOSTIC_COLUMNS[c]);
            Ok(Diagnostics {
                t: field(path, rec, i + 1, 0, "t")?,
                dnorm: g(1)?,
                e1_norm: g(2)?,
                res_update: g(3)?,
                res_gram: g(4)?,
                res_key: g(5)?,
                res_anorm: g(6)?,
                interp_ks: g(7)?,
                interp_residual: g(8)?,
                mstar_top: g(9)?,
                m_a_top: g(10)?,
                lambda_min: g(11)?,
                lin_contraction: g(12)?,
                null_leak: g(13)?,
            })
        })
        .collect()
}

pub fn read_relaxed(path: &Path) -> Result<Vec<RelaxedPsRow>, RunError> {
    let rows = read_table(path, &RELAXED_COLUMNS)?;
    rows.iter()
        .enumerate()
        .map(|(i, rec)| {
            let flag = RelaxedFlag::parse(rec[4].trim()).ok_or_else(|| RunError::Schema {
                file: path.display().to_string(),
                msg: format!("row {}: column `flag` has unknown value `{}`", i + 1, &rec[4]),
            })?;
            Ok(RelaxedPsRow {
                t: field(path, rec, i + 1, 0, "t")?,
                index: field(path, rec, i + 1, 1, "index")?,
                lhs: field(path, rec, i + 1, 2, "lhs")?,
                rhs: field(path, rec, i + 1, 3, "rhs")?,
                flag,
            })
        })
        .collect()
}
