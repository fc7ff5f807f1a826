//! Run and experiment configuration: types, bundled presets, and a TOML
//! file format.
//!
//! ```toml
//! preset = "linear_eos"        # optional base
//! [run]
//! steps = 500
//! [dataset]
//! label_mode = "align_eigvec:1"
//! ```
//!
//! Sections: `run`, `dataset`, `experiment`, `sweep`. Keys are the snake_case
//! field names of [`RunConfig`], [`DatasetSpec`], [`ExperimentConfig`] and
//! [`SweepAxis`]; lists are TOML arrays. Unknown or repeated keys are errors.

use crate::dataset::{self, Dataset, DatasetError, LabelMode};
use crate::mlp::Activation;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("[{section}] {key}: {msg}")]
    Value { section: String, key: String, msg: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Twolayer,
    Mlp,
}

/// Which `v_1` defines `R = (I - v_1 v_1^T) D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum V1Source {
    /// Top eigenvector of the current Gram matrix.
    Gram,
    /// Top eigenvector of `X^T X`.
    DataX,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumShape {
    /// One outlier `lambda1` then `rank - 1` values geometric from `tail_hi` to `tail_lo`.
    OutlierGeometric {
        rank: usize,
        lambda1: f64,
        tail_hi: f64,
        tail_lo: f64,
    },
    /// `top / ratio^k`.
    Geometric {
        rank: usize,
        top: f64,
        ratio: f64,
    },
    Explicit {
        eigenvalues: Vec<f64>,
    },
}

impl SpectrumShape {
    pub fn values(&self) -> Vec<f64> {
        match self {
            SpectrumShape::OutlierGeometric { rank, lambda1, tail_hi, tail_lo } => dataset::outlier_geometric_spectrum(*rank, *lambda1, *tail_hi, *tail_lo),
            SpectrumShape::Geometric { rank, top, ratio } => dataset::geometric_spectrum(*rank, *top, *ratio),
            SpectrumShape::Explicit { eigenvalues } => eigenvalues.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Spectrum { n: usize, d: usize, shape: SpectrumShape, label_mode: LabelMode, sign_labels: bool },
    Gaussian { n: usize, d: usize, input_scale: f64, label_mode: LabelMode },
    Csv { path: PathBuf, has_header: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub spec: DatasetSpec,
    pub mean_subtract: bool,
    /// Seed for data generation; the run seed is used when absent.
    pub data_seed: Option<u64>,
}

impl DataConfig {
    pub fn build(&self, run_seed: u64) -> Result<Dataset, DatasetError> {
        let seed = self.data_seed.unwrap_or(run_seed);
        let ds = match &self.spec {
            DatasetSpec::Spectrum { n, d, shape, label_mode, sign_labels } => {
                let ds = dataset::gen_spectrum_dataset(*n, *d, &shape.values(), *label_mode, seed)?;
                if *sign_labels {
                    ds.sign_labels()
                } else {
                    ds
                }
            }
            DatasetSpec::Gaussian { n, d, input_scale, label_mode } => dataset::gaussian_dataset(*n, *d, *input_scale, *label_mode, seed)?,
            DatasetSpec::Csv { path, has_header } => dataset::load_csv(path, *has_header)?,
        };
        if self.mean_subtract {
            dataset::mean_subtract(&ds)
        } else {
            Ok(ds)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSpec {
    Absolute(f64),
    /// Fraction of `2 / Lambda(0)`.
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model_kind: ModelKind,
    /// Two-layer width `m`, or MLP hidden width.
    pub width: usize,
    /// Number of MLP weight layers (hidden layers + output).
    pub depth: usize,
    pub activation: Activation,
    /// Two-layer hidden-weight scale.
    pub w_scale: f64,
    /// MLP uniform-init scale.
    pub init_scale: f64,
    /// Per-layer freeze flags (MLP); empty means nothing frozen.
    pub freeze_mask: Vec<bool>,
    pub eta: EtaSpec,
    pub steps: usize,
    pub seed: u64,
    pub measure_every: usize,
    /// Defaults to `data_x` for two-layer runs and `gram` for MLPs.
    pub v1_source: Option<V1Source>,
    pub data: DataConfig,
    /// 1-based eigen-indices for the relaxed sharpening condition.
    pub relaxed_ps_indices: Vec<usize>,
    /// Number of leading steps on which that condition is evaluated.
    pub relaxed_ps_steps: usize,
}

impl RunConfig {
    pub fn v1_source(&self) -> V1Source {
        self.v1_source.unwrap_or(match self.model_kind {
            ModelKind::Twolayer => V1Source::DataX,
            ModelKind::Mlp => V1Source::Gram,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.measure_every == 0 {
            return bad("measure_every must be at least 1");
        }
        match self.eta {
            EtaSpec::Absolute(e) | EtaSpec::Fraction(e) if !(e > 0.0 && e.is_finite()) => return bad("learning rate must be positive"),
            _ => {}
        }
        match self.model_kind {
            ModelKind::Twolayer => {
                if !self.width.is_multiple_of(2) || self.width == 0 {
                    return bad("two-layer width must be even and positive");
                }
            }
            ModelKind::Mlp => {
                if self.depth == 0 || self.width == 0 {
                    return bad("mlp depth and width must be positive");
                }
                if !self.freeze_mask.is_empty() && self.freeze_mask.len() != self.depth {
                    return bad("freeze_mask length must equal depth");
                }
            }
        }
        Ok(())
    }

    /// MLP layer widths for input dimension `d`.
    pub fn mlp_dims(&self, d: usize) -> Vec<usize> {
        let mut dims = vec![d];
        dims.extend(std::iter::repeat_n(self.width, self.depth.saturating_sub(1)));
        dims.push(1);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<String>,
}

pub const SWEEP_PARAMS: &[&str] = &["width", "seed", "eta_fraction", "freeze_outer", "w_scale", "steps"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub output_dir: PathBuf,
    pub emit_plots: bool,
    /// Check names to run; empty means all.
    pub verify_checks: Vec<String>,
    pub sweep: Option<SweepAxis>,
    /// Constant `c` of the geometric-growth condition.
    pub growth_c: f64,
    pub smooth_window: usize,
    pub min_len: usize,
    pub dfpos_trials: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.run.validate()?;
        if self.smooth_window == 0 || self.min_len == 0 {
            return Err(ConfigError::Invalid("smooth_window and min_len must be positive".into()));
        }
        if let Some(bad) = self.verify_checks.iter().find(|c| !crate::verify::CHECK_NAMES.contains(&c.as_str())) {
            return Err(ConfigError::Invalid(format!("unknown check `{bad}`")));
        }
        if !(self.growth_c > 1.0) {
            return Err(ConfigError::Invalid("growth_c must exceed 1".into()));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(ConfigError::Invalid("sweep values are empty".into()));
            }
            if !SWEEP_PARAMS.contains(&s.param.as_str()) {
                return Err(ConfigError::Invalid(format!("unsupported sweep param `{}`", s.param)));
            }
        }
        Ok(())
    }

    /// Copy with one sweep parameter overridden.
    pub fn with_override(&self, param: &str, value: &str) -> Result<Self, ConfigError> {
        let mut out = self.clone();
        out.sweep = None;
        let err = |msg: String| ConfigError::Value { section: "sweep".into(), key: param.into(), msg };
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| err(format!("`{v}`: {e}")));
        let int = |v: &str| v.trim().parse::<u64>().map_err(|e| err(format!("`{v}`: {e}")));
        match param {
            "width" => out.run.width = int(value)? as usize,
            "seed" => out.run.seed = int(value)?,
            "eta_fraction" => out.run.eta = EtaSpec::Fraction(num(value)?),
            "w_scale" => out.run.w_scale = num(value)?,
            "steps" => out.run.steps = int(value)? as usize,
            "freeze_outer" => {
                let k = int(value)? as usize;
                out.run.freeze_mask = (0..out.run.depth).map(|l| l + k >= out.run.depth).collect();
            }
            other => return Err(err(format!("unsupported sweep param `{other}`"))),
        }
        out.validate()?;
        Ok(out)
    }
}

fn base_run() -> RunConfig {
    RunConfig {
        model_kind: ModelKind::Twolayer,
        width: 400,
        depth: 2,
        activation: Activation::Linear,
        w_scale: 1.0,
        init_scale: 1.0,
        freeze_mask: vec![],
        eta: EtaSpec::Fraction(0.8),
        steps: 3000,
        seed: 0,
        measure_every: 1,
        v1_source: None,
        data: DataConfig {
            spec: DatasetSpec::Spectrum {
                n: 200,
                d: 50,
                shape: SpectrumShape::OutlierGeometric { rank: 50, lambda1: 200.0, tail_hi: 60.0, tail_lo: 0.1 },
                label_mode: LabelMode::ProjectionPower(1.0),
                sign_labels: false,
            },
            mean_subtract: false,
            data_seed: None,
        },
        relaxed_ps_indices: vec![],
        relaxed_ps_steps: 0,
    }
}

fn base_experiment(run: RunConfig, name: &str) -> ExperimentConfig {
    ExperimentConfig {
        run,
        output_dir: PathBuf::from("out").join(name),
        emit_plots: true,
        verify_checks: vec![],
        sweep: None,
        growth_c: 10.0,
        smooth_window: 5,
        min_len: 3,
        dfpos_trials: 10_000,
    }
}

pub const PRESETS: &[&str] = &["linear_eos", "linear_ps_only", "tanh5", "gaussian_labels", "width_sweep", "largeinit_ntk", "freeze_sweep"];

fn tanh5_run() -> RunConfig {
    RunConfig {
        model_kind: ModelKind::Mlp,
        width: 32,
        depth: 5,
        activation: Activation::Tanh,
        init_scale: 4.0,
        eta: EtaSpec::Fraction(0.9),
        steps: 300,
        v1_source: Some(V1Source::Gram),
        data: DataConfig {
            spec: DatasetSpec::Gaussian { n: 64, d: 1024, input_scale: 1.0, label_mode: LabelMode::RandomSign },
            mean_subtract: false,
            data_seed: None,
        },
        relaxed_ps_indices: vec![1, 5, 50],
        relaxed_ps_steps: 100,
        ..base_run()
    }
}

fn small_twolayer_data() -> DataConfig {
    DataConfig {
        spec: DatasetSpec::Spectrum {
            n: 100,
            d: 20,
            shape: SpectrumShape::OutlierGeometric { rank: 20, lambda1: 100.0, tail_hi: 30.0, tail_lo: 0.1 },
            label_mode: LabelMode::ProjectionPower(1.0),
            sign_labels: false,
        },
        mean_subtract: false,
        data_seed: Some(0),
    }
}

/// Built-in experiment definitions.
pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg = match name {
        "linear_eos" => base_experiment(base_run(), name),
        "linear_ps_only" => base_experiment(RunConfig { eta: EtaSpec::Fraction(0.2), steps: 500, ..base_run() }, name),
        "tanh5" => base_experiment(tanh5_run(), name),
        "gaussian_labels" => {
            let mut run = RunConfig { steps: 1500, ..base_run() };
            if let DatasetSpec::Spectrum { label_mode, .. } = &mut run.data.spec {
                *label_mode = LabelMode::AlignEigvec(1);
            }
            base_experiment(run, name)
        }
        "width_sweep" => {
            let run = RunConfig { width: 40, steps: 2000, data: small_twolayer_data(), ..base_run() };
            let mut e = base_experiment(run, name);
            e.sweep = Some(SweepAxis { param: "width".into(), values: ["40", "80", "160", "200"].map(String::from).to_vec() });
            e
        }
        "largeinit_ntk" => {
            let run = RunConfig { width: 1000, w_scale: 10.0, steps: 1000, data: small_twolayer_data(), ..base_run() };
            let mut e = base_experiment(run, name);
            e.sweep = Some(SweepAxis { param: "width".into(), values: ["1000", "2000", "4000"].map(String::from).to_vec() });
            e
        }
        "freeze_sweep" => {
            let mut e = base_experiment(RunConfig { relaxed_ps_indices: vec![], relaxed_ps_steps: 0, ..tanh5_run() }, name);
            e.sweep = Some(SweepAxis { param: "freeze_outer".into(), values: ["0", "1", "2", "3"].map(String::from).to_vec() });
            e
        }
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    };
    Ok(cfg)
}

/// Parsed TOML document with every scalar flattened to its text form.
#[derive(Debug, Default)]
struct RawDoc {
    top: Vec<(String, String)>,
    sections: BTreeMap<String, Vec<(String, String)>>,
}

const SECTIONS: [&str; 4] = ["run", "dataset", "experiment", "sweep"];

fn scalar_text(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        toml::Value::Array(items) => items.iter().map(scalar_text).collect::<Option<Vec<_>>>().map(|v| v.join(",")),
        _ => None,
    }
}

fn tokenize(text: &str) -> Result<RawDoc, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0);
        ConfigError::Syntax { line, msg: e.message().to_string() }
    })?;
    let mut doc = RawDoc::default();
    for (key, value) in table {
        match value {
            toml::Value::Table(entries) => {
                if !SECTIONS.contains(&key.as_str()) {
                    return Err(ConfigError::Syntax { line: 0, msg: format!("unknown section [{key}]") });
                }
                let mut out = Vec::new();
                for (k, v) in entries {
                    let raw = scalar_text(&v).ok_or_else(|| ConfigError::Value {
                        section: key.clone(),
                        key: k.clone(),
                        msg: "nested tables are not supported".into(),
                    })?;
                    out.push((k, raw));
                }
                doc.sections.insert(key, out);
            }
            other => {
                let raw = scalar_text(&other).ok_or_else(|| ConfigError::Invalid(format!("`{key}` has an unsupported value")))?;
                doc.top.push((key, raw));
            }
        }
    }
    Ok(doc)
}

struct Val<'a> {
    section: &'a str,
    key: &'a str,
    raw: &'a str,
}

impl Val<'_> {
    fn err(&self, msg: impl Into<String>) -> ConfigError {
        ConfigError::Value { section: self.section.into(), key: self.key.into(), msg: msg.into() }
    }
    fn f64(&self) -> Result<f64, ConfigError> {
        self.raw.parse::<f64>().map_err(|e| self.err(format!("`{}`: {e}", self.raw)))
    }
    fn usize(&self) -> Result<usize, ConfigError> {
        self.raw.parse::<usize>().map_err(|e| self.err(format!("`{}`: {e}", self.raw)))
    }
    fn u64(&self) -> Result<u64, ConfigError> {
        self.raw.parse::<u64>().map_err(|e| self.err(format!("`{}`: {e}", self.raw)))
    }
    fn bool(&self) -> Result<bool, ConfigError> {
        match self.raw {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(self.err(format!("`{}` is not a boolean", self.raw))),
        }
    }
    fn list(&self) -> Vec<&str> {
        self.raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
    }
    fn f64_list(&self) -> Result<Vec<f64>, ConfigError> {
        self.list().iter().map(|s| s.parse::<f64>().map_err(|e| self.err(format!("`{s}`: {e}")))).collect()
    }
    fn usize_list(&self) -> Result<Vec<usize>, ConfigError> {
        self.list().iter().map(|s| s.parse::<usize>().map_err(|e| self.err(format!("`{s}`: {e}")))).collect()
    }
}

/// Dataset keys are collected first so `kind` can be applied in any order.
#[derive(Default)]
struct DataKeys {
    kind: Option<String>,
    n: Option<usize>,
    d: Option<usize>,
    rank: Option<usize>,
    lambda1: Option<f64>,
    tail_hi: Option<f64>,
    tail_lo: Option<f64>,
    top: Option<f64>,
    ratio: Option<f64>,
    eigenvalues: Option<Vec<f64>>,
    spectrum_kind: Option<String>,
    label_mode: Option<LabelMode>,
    sign_labels: Option<bool>,
    input_scale: Option<f64>,
    path: Option<PathBuf>,
    has_header: Option<bool>,
}

fn apply_data(base: &DataConfig, keys: DataKeys, mean_subtract: Option<bool>, data_seed: Option<u64>) -> Result<DataConfig, ConfigError> {
    let inv = |m: &str| ConfigError::Invalid(m.to_string());
    let (mut n, mut d, mut label_mode, mut sign_labels, mut input_scale) = (None, None, None, false, 1.0);
    let mut shape = None;
    let mut csv = None;
    let base_kind = match &base.spec {
        DatasetSpec::Spectrum { n: bn, d: bd, shape: s, label_mode: lm, sign_labels: sl } => {
            (n, d, label_mode, sign_labels) = (Some(*bn), Some(*bd), Some(*lm), *sl);
            shape = Some(s.clone());
            "spectrum"
        }
        DatasetSpec::Gaussian { n: bn, d: bd, input_scale: is, label_mode: lm } => {
            (n, d, label_mode, input_scale) = (Some(*bn), Some(*bd), Some(*lm), *is);
            "gaussian"
        }
        DatasetSpec::Csv { path, has_header } => {
            csv = Some((path.clone(), *has_header));
            "csv"
        }
    };
    let kind = keys.kind.clone().unwrap_or_else(|| base_kind.to_string());
    n = keys.n.or(n);
    d = keys.d.or(d);
    label_mode = keys.label_mode.or(label_mode);
    sign_labels = keys.sign_labels.unwrap_or(sign_labels);
    input_scale = keys.input_scale.unwrap_or(input_scale);
    let spec = match kind.as_str() {
        "spectrum" => {
            let shape_kind = keys.spectrum_kind.clone().unwrap_or_else(|| match (&shape, &keys.eigenvalues) {
                (_, Some(_)) => "explicit".into(),
                (Some(SpectrumShape::Geometric { .. }), _) => "geometric".into(),
                (Some(SpectrumShape::Explicit { .. }), _) => "explicit".into(),
                _ => "outlier_geometric".into(),
            });
            let new_shape = match shape_kind.as_str() {
                "outlier_geometric" => {
                    let (r0, l0, h0, lo0) = match shape {
                        Some(SpectrumShape::OutlierGeometric { rank, lambda1, tail_hi, tail_lo }) => (Some(rank), Some(lambda1), Some(tail_hi), Some(tail_lo)),
                        _ => (None, None, None, None),
                    };
                    SpectrumShape::OutlierGeometric {
                        rank: keys.rank.or(r0).ok_or_else(|| inv("dataset.rank missing"))?,
                        lambda1: keys.lambda1.or(l0).ok_or_else(|| inv("dataset.lambda1 missing"))?,
                        tail_hi: keys.tail_hi.or(h0).ok_or_else(|| inv("dataset.tail_hi missing"))?,
                        tail_lo: keys.tail_lo.or(lo0).ok_or_else(|| inv("dataset.tail_lo missing"))?,
                    }
                }
                "geometric" => {
                    let (r0, t0, q0) = match shape {
                        Some(SpectrumShape::Geometric { rank, top, ratio }) => (Some(rank), Some(top), Some(ratio)),
                        _ => (None, None, None),
                    };
                    SpectrumShape::Geometric {
                        rank: keys.rank.or(r0).ok_or_else(|| inv("dataset.rank missing"))?,
                        top: keys.top.or(t0).ok_or_else(|| inv("dataset.top missing"))?,
                        ratio: keys.ratio.or(q0).ok_or_else(|| inv("dataset.ratio missing"))?,
                    }
                }
                "explicit" => {
                    let ev = match (keys.eigenvalues, shape) {
                        (Some(ev), _) => ev,
                        (None, Some(SpectrumShape::Explicit { eigenvalues })) => eigenvalues,
                        _ => return Err(inv("dataset.eigenvalues missing")),
                    };
                    SpectrumShape::Explicit { eigenvalues: ev }
                }
                other => return Err(inv(&format!("unknown spectrum_kind `{other}`"))),
            };
            DatasetSpec::Spectrum {
                n: n.ok_or_else(|| inv("dataset.n missing"))?,
                d: d.ok_or_else(|| inv("dataset.d missing"))?,
                shape: new_shape,
                label_mode: label_mode.unwrap_or(LabelMode::RandomSign),
                sign_labels,
            }
        }
        "gaussian" => DatasetSpec::Gaussian {
            n: n.ok_or_else(|| inv("dataset.n missing"))?,
            d: d.ok_or_else(|| inv("dataset.d missing"))?,
            input_scale,
            label_mode: label_mode.unwrap_or(LabelMode::RandomSign),
        },
        "csv" => {
            let (p0, h0) = csv.map_or((None, None), |(p, h)| (Some(p), Some(h)));
            DatasetSpec::Csv { path: keys.path.or(p0).ok_or_else(|| inv("dataset.path missing"))?, has_header: keys.has_header.or(h0).unwrap_or(false) }
        }
        other => return Err(inv(&format!("unknown dataset kind `{other}`"))),
    };
    Ok(DataConfig { spec, mean_subtract: mean_subtract.unwrap_or(base.mean_subtract), data_seed: data_seed.or(base.data_seed) })
}

/// Parse a config document. Relative CSV paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    let doc = tokenize(text)?;
    let mut cfg = None;
    for (k, v) in &doc.top {
        match k.as_str() {
            "preset" => cfg = Some(preset(v)?),
            _ => return Err(ConfigError::Invalid(format!("`{k}` must be inside a section"))),
        }
    }
    let mut cfg = cfg.unwrap_or_else(|| base_experiment(base_run(), "custom"));
    let empty = Vec::new();
    let sec = |name: &str| doc.sections.get(name).unwrap_or(&empty);

    let mut eta_abs = None;
    let mut eta_frac = None;
    for (k, raw) in sec("run") {
        let v = Val { section: "run", key: k, raw };
        let r = &mut cfg.run;
        match k.as_str() {
            "model_kind" => {
                r.model_kind = match raw.as_str() {
                    "twolayer" => ModelKind::Twolayer,
                    "mlp" => ModelKind::Mlp,
                    _ => return Err(v.err("expected `twolayer` or `mlp`")),
                }
            }
            "width" => r.width = v.usize()?,
            "depth" => r.depth = v.usize()?,
            "activation" => r.activation = Activation::parse(raw).ok_or_else(|| v.err("expected linear, tanh, relu or elu"))?,
            "w_scale" => r.w_scale = v.f64()?,
            "init_scale" => r.init_scale = v.f64()?,
            "freeze_mask" => r.freeze_mask = v.list().iter().map(|s| Val { raw: s, ..v }.bool()).collect::<Result<_, _>>()?,
            "eta" => eta_abs = Some(v.f64()?),
            "eta_fraction" => eta_frac = Some(v.f64()?),
            "steps" => r.steps = v.usize()?,
            "seed" => r.seed = v.u64()?,
            "measure_every" => r.measure_every = v.usize()?,
            "v1_source" => {
                r.v1_source = Some(match raw.as_str() {
                    "gram" => V1Source::Gram,
                    "data_x" => V1Source::DataX,
                    _ => return Err(v.err("expected `gram` or `data_x`")),
                })
            }
            "relaxed_ps_indices" => r.relaxed_ps_indices = v.usize_list()?,
            "relaxed_ps_steps" => r.relaxed_ps_steps = v.usize()?,
            _ => return Err(v.err("unknown key")),
        }
    }
    match (eta_abs, eta_frac) {
        (Some(_), Some(_)) => return Err(ConfigError::Invalid("set only one of run.eta and run.eta_fraction".into())),
        (Some(e), None) => cfg.run.eta = EtaSpec::Absolute(e),
        (None, Some(f)) => cfg.run.eta = EtaSpec::Fraction(f),
        (None, None) => {}
    }

    let mut keys = DataKeys::default();
    let (mut mean_subtract, mut data_seed) = (None, None);
    for (k, raw) in sec("dataset") {
        let v = Val { section: "dataset", key: k, raw };
        match k.as_str() {
            "kind" => keys.kind = Some(raw.clone()),
            "n" => keys.n = Some(v.usize()?),
            "d" => keys.d = Some(v.usize()?),
            "rank" => keys.rank = Some(v.usize()?),
            "lambda1" => keys.lambda1 = Some(v.f64()?),
            "tail_hi" => keys.tail_hi = Some(v.f64()?),
            "tail_lo" => keys.tail_lo = Some(v.f64()?),
            "top" => keys.top = Some(v.f64()?),
            "ratio" => keys.ratio = Some(v.f64()?),
            "eigenvalues" => keys.eigenvalues = Some(v.f64_list()?),
            "spectrum_kind" => keys.spectrum_kind = Some(raw.clone()),
            "label_mode" => keys.label_mode = Some(LabelMode::parse(raw).map_err(|e| v.err(e.to_string()))?),
            "sign_labels" => keys.sign_labels = Some(v.bool()?),
            "input_scale" => keys.input_scale = Some(v.f64()?),
            "path" => {
                let p = PathBuf::from(raw);
                keys.path = Some(match base_dir {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p,
                });
            }
            "has_header" => keys.has_header = Some(v.bool()?),
            "mean_subtract" => mean_subtract = Some(v.bool()?),
            "data_seed" => data_seed = Some(v.u64()?),
            _ => return Err(v.err("unknown key")),
        }
    }
    cfg.run.data = apply_data(&cfg.run.data, keys, mean_subtract, data_seed)?;

    for (k, raw) in sec("experiment") {
        let v = Val { section: "experiment", key: k, raw };
        match k.as_str() {
            "output_dir" => cfg.output_dir = PathBuf::from(raw),
            "emit_plots" => cfg.emit_plots = v.bool()?,
            "verify_checks" => cfg.verify_checks = if raw == "all" { vec![] } else { v.list().iter().map(|s| s.to_string()).collect() },
            "growth_c" => cfg.growth_c = v.f64()?,
            "smooth_window" => cfg.smooth_window = v.usize()?,
            "min_len" => cfg.min_len = v.usize()?,
            "dfpos_trials" => cfg.dfpos_trials = v.usize()?,
            _ => return Err(v.err("unknown key")),
        }
    }

    if let Some(entries) = doc.sections.get("sweep") {
        let mut param = cfg.sweep.as_ref().map(|s| s.param.clone());
        let mut values = cfg.sweep.as_ref().map(|s| s.values.clone());
        for (k, raw) in entries {
            let v = Val { section: "sweep", key: k, raw };
            match k.as_str() {
                "param" => param = Some(raw.clone()),
                "values" => values = Some(v.list().iter().map(|s| s.to_string()).collect()),
                _ => return Err(v.err("unknown key")),
            }
        }
        cfg.sweep = Some(SweepAxis { param: param.ok_or_else(|| ConfigError::Invalid("sweep.param missing".into()))?, values: values.unwrap_or_default() });
    }

    cfg.validate()?;
    Ok(cfg)
}

/// Load a config file, or a bundled preset when `path` names one and no such file exists.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    if !path.exists() {
        if let Some(name) = path.to_str().filter(|s| PRESETS.contains(s)) {
            let cfg = preset(name)?;
            cfg.validate()?;
            return Ok(cfg);
        }
    }
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            preset(p).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn overrides_apply() {
        let cfg = parse_config("preset = \"linear_eos\"\n[run]\nsteps = 12\neta = 0.01\n[dataset]\nlabel_mode = \"align_eigvec:1\"\n", None).unwrap();
        assert_eq!(cfg.run.steps, 12);
        assert_eq!(cfg.run.eta, EtaSpec::Absolute(0.01));
        assert!(matches!(cfg.run.data.spec, DatasetSpec::Spectrum { label_mode: LabelMode::AlignEigvec(1), n: 200, .. }));
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(parse_config("[run]\nsteps = 0\n", None), Err(ConfigError::Invalid(_))));
        assert!(matches!(parse_config("[run]\nbogus = 1\n", None), Err(ConfigError::Value { .. })));
        assert!(matches!(parse_config("[run]\nsteps = 1\nsteps = 2\n", None), Err(ConfigError::Syntax { line: 3, .. })));
        assert!(matches!(parse_config("[nope]\n", None), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse_config("preset = \"nope\"\n", None), Err(ConfigError::UnknownPreset(_))));
        assert!(parse_config("[sweep]\nparam = \"width\"\nvalues = []\n", None).is_err());
    }
}
