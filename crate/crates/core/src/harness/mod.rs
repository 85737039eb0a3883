//! Joint training of quantizer and classifier, LOSO sweeps and reporting.

mod curves;
mod metrics;
mod train;

pub use curves::{best_gamma_for_log, compare_log_gamma, export_curves, log_curve, trajectory_csv};
pub use metrics::{confusion_matrix, macro_f1, per_class_f1, Confusion};
pub use train::{
    evaluate, evaluate_checkpoint, train_joint, train_joint_jobs, EvalReport, TrainOutcome,
    TrainedRun,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::{generate_synthetic, load_dataset_dir, NormScope, SynthConfig, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{AdamConfig, ModelConfig, StepSchedule};
use crate::quant::{BitDepth, InputDomain, QuantizerKind, QuantizerSpec, DEFAULT_EPS_STAB};
use crate::tensor::Tensor;

pub const RESULT_FORMAT: &str = "result v1";
pub const DEFAULT_EPS_LOG: f64 = 1.0 / 4096.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamScope {
    /// One (gamma, mu) pair shared by all axes.
    Global,
    /// One pair per sensor axis.
    PerAxis,
}

/// Quantizer family of a variant; `Raw` skips quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Raw,
    Linear,
    Log,
    GammaUnsigned,
    GammaSigned,
}

impl VariantKind {
    pub fn quantizer(self) -> Option<QuantizerKind> {
        match self {
            VariantKind::Raw => None,
            VariantKind::Linear => Some(QuantizerKind::Linear),
            VariantKind::Log => Some(QuantizerKind::Log),
            VariantKind::GammaUnsigned => Some(QuantizerKind::GammaUnsigned),
            VariantKind::GammaSigned => Some(QuantizerKind::GammaSigned),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: VariantKind,
    pub gamma0: f64,
    pub mu0: f64,
    pub scope: ParamScope,
    pub eps_log: f64,
    pub eps_stab: f64,
    /// Frozen variants keep `gamma0`/`mu0` throughout training.
    pub learnable: bool,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            name: None,
            kind: VariantKind::GammaSigned,
            gamma0: 0.4,
            mu0: 0.0,
            scope: ParamScope::Global,
            eps_log: DEFAULT_EPS_LOG,
            eps_stab: DEFAULT_EPS_STAB,
            learnable: true,
        }
    }
}

impl VariantConfig {
    pub fn of(kind: VariantKind) -> Self {
        VariantConfig {
            kind,
            ..VariantConfig::default()
        }
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let base = match self.kind {
            VariantKind::Raw => "raw",
            VariantKind::Linear => "linear",
            VariantKind::Log => "log",
            VariantKind::GammaUnsigned => "gamma_unsigned",
            VariantKind::GammaSigned => "gamma_signed",
        };
        match self.kind {
            VariantKind::GammaUnsigned | VariantKind::GammaSigned => {
                let scope = match self.scope {
                    ParamScope::Global => "global",
                    ParamScope::PerAxis => "per_axis",
                };
                let frozen = if self.learnable { "" } else { "_frozen" };
                format!("{base}_{scope}{frozen}")
            }
            _ => base.to_string(),
        }
    }

    /// Spec at bit depth `bits`; `None` for the raw variant. Linear on
    /// normalized sensor data uses the signed map over `[-1, 1]`.
    pub fn spec(&self, bits: BitDepth) -> Result<Option<QuantizerSpec>> {
        Ok(Some(match self.kind {
            VariantKind::Raw => return Ok(None),
            VariantKind::Linear => QuantizerSpec::linear_signed(bits),
            VariantKind::Log => QuantizerSpec::log(self.eps_log, bits)?,
            VariantKind::GammaUnsigned => QuantizerSpec::gamma_unsigned(self.gamma0, bits)?,
            VariantKind::GammaSigned => {
                QuantizerSpec::gamma_signed(self.gamma0, self.mu0, self.eps_stab, bits)?
            }
        }))
    }
}

/// Where an experiment's recordings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    CsvDir(PathBuf),
}

/// Which windows the min-max statistics are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormFit {
    /// Training fold only; validation values are clamped.
    TrainOnly,
    /// Every window, validation subject included.
    FullDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variants: Vec<VariantConfig>,
    pub bit_depths: Vec<u32>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Learning rate of the quantizer parameters; the network rate if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quant_lr: Option<f64>,
    pub schedule: StepSchedule,
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub window_s: f64,
    pub overlap: f64,
    pub norm_scope: NormScope,
    pub norm_fit: NormFit,
    pub class_weighting: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variants: vec![
                VariantConfig::of(VariantKind::Linear),
                VariantConfig {
                    scope: ParamScope::PerAxis,
                    ..VariantConfig::of(VariantKind::GammaSigned)
                },
            ],
            bit_depths: vec![2, 4],
            epochs: 30,
            batch_size: 100,
            optimizer: AdamConfig::default(),
            quant_lr: None,
            schedule: StepSchedule::default(),
            seeds: vec![0, 1, 2],
            model: ModelConfig::default(),
            window_s: 1.0,
            overlap: 0.5,
            norm_scope: NormScope::Dataset,
            norm_fit: NormFit::TrainOnly,
            class_weighting: true,
            data: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.variants.is_empty() {
            return bad("no quantizer variants configured".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return bad("learning rate and eps must be positive, weight decay non-negative".into());
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if let Some(q) = self.quant_lr {
            if !(q > 0.0) {
                return bad(format!("quant_lr must be positive, got {q}"));
            }
        }
        if !(self.schedule.factor > 0.0) {
            return bad("schedule factor must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        let quantized = self.variants.iter().any(|v| v.kind != VariantKind::Raw);
        if quantized && self.bit_depths.is_empty() {
            return bad("bit_depths is empty".into());
        }
        for &b in &self.bit_depths {
            BitDepth::new(b)?;
        }
        for v in &self.variants {
            if !(v.gamma0 > 0.0) || !(v.mu0.abs() < 1.0) {
                return bad(format!(
                    "variant {}: need gamma0 > 0 and |mu0| < 1",
                    v.label()
                ));
            }
            v.spec(BitDepth::new(2)?)?;
        }
        let mut labels: Vec<String> = self.variants.iter().map(|v| v.label()).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.variants.len() {
            return bad("variant labels must be distinct; set `name`".into());
        }
        Ok(())
    }

    pub fn quant_lr(&self) -> f64 {
        self.quant_lr.unwrap_or(self.optimizer.lr)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Windows from `dir` if given, otherwise from the configured source.
    pub fn load_dataset(&self, dir: Option<&Path>) -> Result<WindowedDataset> {
        let recs = match (dir, &self.data) {
            (Some(d), _) => load_dataset_dir(d)?,
            (None, Some(DataSource::CsvDir(d))) => load_dataset_dir(d)?,
            (None, Some(DataSource::Synthetic(s))) => generate_synthetic(s)?,
            (None, None) => return Err(Error::Config("no dataset given".into())),
        };
        WindowedDataset::from_recordings(&recs, self.window_s, self.overlap)
    }
}

/// A quantizer with its current parameters, placed in front of the network.
///
/// Input windows are normalized to `[-1, 1]`. Unit-interval quantizers see
/// `(x + 1) / 2` and their output is mapped back onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantStage {
    pub spec: Option<QuantizerSpec>,
    pub scope: ParamScope,
    /// One entry per scope unit, empty when the kind has no such parameter.
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
}

impl QuantStage {
    pub fn raw() -> Self {
        QuantStage {
            spec: None,
            scope: ParamScope::Global,
            gamma: Vec::new(),
            mu: Vec::new(),
        }
    }

    pub fn new(spec: QuantizerSpec, scope: ParamScope, num_axes: usize) -> Self {
        let units = match scope {
            ParamScope::Global => 1,
            ParamScope::PerAxis => num_axes,
        };
        QuantStage {
            gamma: spec.gamma().map(|g| vec![g; units]).unwrap_or_default(),
            mu: spec.mu().map(|m| vec![m; units]).unwrap_or_default(),
            spec: Some(spec),
            scope,
        }
    }

    pub fn units(&self) -> usize {
        self.gamma.len()
    }

    /// Spec of one scope unit with its current parameters.
    pub fn unit_spec(&self, unit: usize) -> Result<Option<QuantizerSpec>> {
        match self.spec {
            None => Ok(None),
            Some(s) if !s.kind().has_learnable_params() => Ok(Some(s)),
            Some(s) => {
                let g = self.gamma[unit];
                let m = self.mu.get(unit).copied().unwrap_or(0.0);
                Ok(Some(s.with_params(g, m)?))
            }
        }
    }

    /// Adds the quantizer to `g`. `gamma`/`mu` default to constants holding
    /// the stored values.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        gamma: Option<Var>,
        mu: Option<Var>,
    ) -> Result<Var> {
        let Some(spec) = self.spec else {
            return Ok(x);
        };
        let (gv, mv) = if spec.kind().has_learnable_params() {
            let gv = gamma.unwrap_or_else(|| g.constant(Tensor::from_vec(self.gamma.clone())));
            let mv = match mu {
                Some(m) => Some(m),
                None if !self.mu.is_empty() => Some(g.constant(Tensor::from_vec(self.mu.clone()))),
                None => None,
            };
            (Some(gv), mv)
        } else {
            (None, None)
        };
        if spec.domain() == InputDomain::Unit {
            let u = g.affine(x, 0.5, 0.5);
            let q = g.quantize(u, &spec, gv, mv)?;
            Ok(g.affine(q, 2.0, -1.0))
        } else {
            g.quantize(x, &spec, gv, mv)
        }
    }

    /// Quantizes normalized `[n, axes, len]` windows.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, xv, None, None)?;
        Ok(g.value(y).clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

/// Quantizer parameters after `epoch` epochs (0 = initial values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub epoch: usize,
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, step: usize },
}

/// Outcome of one (variant, bit depth, validation subject, seed) job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: String,
    pub bits: Option<u32>,
    pub subject: String,
    pub seed: u64,
    pub status: RunStatus,
    pub macro_f1: Option<f64>,
    pub per_class_f1: Vec<Option<f64>>,
    pub confusion: Confusion,
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
    pub curves: Vec<EpochStats>,
    pub trajectory: Vec<ParamPoint>,
}

/// Seed-level summary of one (variant, bit depth) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub variant: String,
    pub bits: Option<u32>,
    /// Per seed, the mean macro-F1 over its completed splits.
    pub seed_means: Vec<f64>,
    pub mean_macro_f1: f64,
    /// Sample standard deviation of `seed_means` (0 for one seed).
    pub std_macro_f1: f64,
    pub failed_runs: usize,
    /// Learned parameters per scope unit, averaged over completed runs.
    pub mean_gamma: Vec<f64>,
    pub mean_mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub subjects: Vec<String>,
    pub class_names: Vec<String>,
    pub windows: usize,
    pub axes: usize,
    pub window_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub format: String,
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentResult {
    pub fn aggregate(&self, variant: &str, bits: Option<u32>) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.variant == variant && a.bits == bits)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: ExperimentResult =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if r.format != RESULT_FORMAT {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported format `{}`", r.format),
            ));
        }
        Ok(r)
    }
}

/// Recomputes the aggregates from per-run records.
pub fn aggregate_runs(runs: &[RunRecord]) -> Vec<Aggregate> {
    let mut cells: Vec<(String, Option<u32>)> = Vec::new();
    for r in runs {
        let key = (r.variant.clone(), r.bits);
        if !cells.contains(&key) {
            cells.push(key);
        }
    }
    cells
        .into_iter()
        .map(|(variant, bits)| {
            let cell: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.variant == variant && r.bits == bits)
                .collect();
            let done: Vec<&RunRecord> = cell
                .iter()
                .copied()
                .filter(|r| r.macro_f1.is_some())
                .collect();
            let mut seeds: Vec<u64> = done.iter().map(|r| r.seed).collect();
            seeds.dedup();
            seeds.sort_unstable();
            seeds.dedup();
            let seed_means: Vec<f64> = seeds
                .iter()
                .map(|&s| {
                    let f: Vec<f64> = done
                        .iter()
                        .filter(|r| r.seed == s)
                        .filter_map(|r| r.macro_f1)
                        .collect();
                    f.iter().sum::<f64>() / f.len() as f64
                })
                .collect();
            let n = seed_means.len();
            let mean = if n == 0 {
                f64::NAN
            } else {
                seed_means.iter().sum::<f64>() / n as f64
            };
            let std = if n < 2 {
                0.0
            } else {
                (seed_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            let avg = |get: fn(&RunRecord) -> &Vec<f64>| -> Vec<f64> {
                let len = done.first().map(|r| get(r).len()).unwrap_or(0);
                (0..len)
                    .map(|u| done.iter().map(|r| get(r)[u]).sum::<f64>() / done.len() as f64)
                    .collect()
            };
            Aggregate {
                variant,
                bits,
                mean_macro_f1: mean,
                std_macro_f1: std,
                failed_runs: cell.len() - done.len(),
                mean_gamma: avg(|r| &r.gamma),
                mean_mu: avg(|r| &r.mu),
                seed_means,
            }
        })
        .collect()
}
