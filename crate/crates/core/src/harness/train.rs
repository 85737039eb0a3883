use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    aggregate_runs, confusion_matrix, macro_f1, per_class_f1, DatasetSummary, EpochStats,
    ExperimentConfig, ExperimentResult, NormFit, ParamPoint, QuantStage, RunRecord, RunStatus,
    VariantConfig, RESULT_FORMAT,
};
use crate::autograd::{Graph, Var};
use crate::data::{loso_splits, NormMeta, Recording, Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{Adam, AdamConfig, Checkpoint, ClassifierModel, WeightedCrossEntropy};
use crate::quant::BitDepth;
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 256;

/// A finished job: its record plus the frozen model when training completed.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub record: RunRecord,
    pub checkpoint: Option<Checkpoint>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub result: ExperimentResult,
    pub runs: Vec<TrainedRun>,
}

struct Fold {
    split: Split,
    norm: NormMeta,
    windows: Tensor,
}

struct Job<'a> {
    fold: usize,
    variant: &'a VariantConfig,
    bits: Option<BitDepth>,
    seed: u64,
}

/// Runs every (variant, bit depth, LOSO fold, seed) job sequentially.
pub fn train_joint(cfg: &ExperimentConfig, ds: &WindowedDataset) -> Result<TrainOutcome> {
    train_joint_jobs(cfg, ds, 1)
}

/// As [`train_joint`] with up to `jobs` worker threads. Every job owns its
/// state and results are collected in job order, so the outcome does not
/// depend on `jobs`.
pub fn train_joint_jobs(
    cfg: &ExperimentConfig,
    ds: &WindowedDataset,
    jobs: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Data("dataset has no windows".into()));
    }
    // Fail on an unusable window length before any training starts.
    ClassifierModel::new(
        cfg.model.clone(),
        ds.num_axes(),
        ds.window_len(),
        ds.num_classes(),
        0,
    )?;

    let folds = loso_splits(ds)?
        .into_iter()
        .map(|split| {
            let all: Vec<usize> = (0..ds.len()).collect();
            let fit_on = match cfg.norm_fit {
                NormFit::TrainOnly => &split.train,
                NormFit::FullDataset => &all,
            };
            let norm = NormMeta::fit(&ds.windows, fit_on, cfg.norm_scope)?;
            let windows = norm.apply(&ds.windows)?;
            Ok(Fold {
                split,
                norm,
                windows,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut plan = Vec::new();
    for variant in &cfg.variants {
        let depths: Vec<Option<BitDepth>> = if variant.kind == super::VariantKind::Raw {
            vec![None]
        } else {
            cfg.bit_depths
                .iter()
                .map(|&b| BitDepth::new(b).map(Some))
                .collect::<Result<_>>()?
        };
        for bits in depths {
            for fold in 0..folds.len() {
                for &seed in &cfg.seeds {
                    plan.push(Job {
                        fold,
                        variant,
                        bits,
                        seed,
                    });
                }
            }
        }
    }

    let run = |job: &Job| run_job(cfg, ds, &folds[job.fold], job);
    let runs: Vec<TrainedRun> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| plan.par_iter().map(run).collect::<Result<Vec<_>>>())?
    } else {
        plan.iter().map(run).collect::<Result<Vec<_>>>()?
    };

    let records: Vec<RunRecord> = runs.iter().map(|r| r.record.clone()).collect();
    let result = ExperimentResult {
        format: RESULT_FORMAT.into(),
        config: cfg.clone(),
        dataset: DatasetSummary {
            subjects: ds.subject_ids.clone(),
            class_names: ds.class_names.clone(),
            windows: ds.len(),
            axes: ds.num_axes(),
            window_len: ds.window_len(),
        },
        aggregates: aggregate_runs(&records),
        runs: records,
    };
    Ok(TrainOutcome { result, runs })
}

fn job_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn inv_softplus(y: f64) -> f64 {
    // ln(exp(y) - 1), stable for large y
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Unconstrained parameters behind `gamma = softplus(gamma_pre)` and
/// `mu = tanh(mu_pre)`.
struct QuantParams {
    gamma_pre: Vec<f64>,
    mu_pre: Vec<f64>,
}

impl QuantParams {
    fn from_stage(st: &QuantStage) -> Self {
        QuantParams {
            gamma_pre: st.gamma.iter().map(|&g| inv_softplus(g)).collect(),
            mu_pre: st.mu.iter().map(|&m| m.atanh()).collect(),
        }
    }

    fn write_back(&self, st: &mut QuantStage) {
        st.gamma = self.gamma_pre.iter().map(|&v| softplus(v)).collect();
        st.mu = self.mu_pre.iter().map(|&v| v.tanh()).collect();
    }
}

fn run_job(
    cfg: &ExperimentConfig,
    ds: &WindowedDataset,
    fold: &Fold,
    job: &Job,
) -> Result<TrainedRun> {
    let split = &fold.split;
    let variant = job.variant;
    let mut stage = match job.bits {
        Some(b) => match variant.spec(b)? {
            Some(spec) => QuantStage::new(spec, variant.scope, ds.num_axes()),
            None => QuantStage::raw(),
        },
        None => QuantStage::raw(),
    };
    let learn_q = variant.learnable && stage.units() > 0;
    let seed = job_seed(job.seed, job.fold);
    let mut model = ClassifierModel::new(
        cfg.model.clone(),
        ds.num_axes(),
        ds.window_len(),
        ds.num_classes(),
        seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let train_labels: Vec<usize> = split.train.iter().map(|&i| ds.labels[i]).collect();
    let loss_fn = if cfg.class_weighting {
        WeightedCrossEntropy::inverse_frequency(&train_labels, ds.num_classes())
    } else {
        WeightedCrossEntropy::uniform(ds.num_classes())
    };
    let sizes: Vec<usize> = model.params.iter().map(|p| p.value.len()).collect();
    let mut opt = Adam::new(cfg.optimizer, &sizes);
    let mut qparams = QuantParams::from_stage(&stage);
    let mut qopt = Adam::new(
        AdamConfig {
            weight_decay: 0.0,
            ..cfg.optimizer
        },
        &[qparams.gamma_pre.len(), qparams.mu_pre.len()],
    );
    let val_x = fold.windows.gather_rows(&split.val);
    let val_y: Vec<usize> = split.val.iter().map(|&i| ds.labels[i]).collect();

    let mut record = RunRecord {
        variant: variant.label(),
        bits: job.bits.map(|b| b.bits()),
        subject: split.subject.clone(),
        seed: job.seed,
        status: RunStatus::Completed,
        macro_f1: None,
        per_class_f1: Vec::new(),
        confusion: Vec::new(),
        gamma: Vec::new(),
        mu: Vec::new(),
        curves: Vec::new(),
        trajectory: vec![ParamPoint {
            epoch: 0,
            gamma: stage.gamma.clone(),
            mu: stage.mu.clone(),
        }],
    };

    let mut order = split.train.clone();
    let mut step = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(cfg.optimizer.lr, epoch);
        let qlr = cfg.schedule.lr_at(cfg.quant_lr(), epoch);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let mut g = Graph::new();
            let x = g.constant(fold.windows.gather_rows(batch));
            let mut pre: Option<(Var, Option<Var>)> = None;
            let (gv, mv) = if learn_q {
                let gp = g.param(Tensor::from_vec(qparams.gamma_pre.clone()));
                let mp = (!qparams.mu_pre.is_empty())
                    .then(|| g.param(Tensor::from_vec(qparams.mu_pre.clone())));
                pre = Some((gp, mp));
                (Some(g.softplus(gp)), mp.map(|m| g.tanh(m)))
            } else {
                (None, None)
            };
            let q = stage.forward(&mut g, x, gv, mv)?;
            let vars = model.attach(&mut g);
            let logits = model.forward(&mut g, q, &vars)?;
            let labels: Vec<usize> = batch.iter().map(|&i| ds.labels[i]).collect();
            let loss = loss_fn.loss(&mut g, logits, &labels)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                log::warn!(
                    "{} bits={:?} subject={} seed={}: loss diverged at epoch {} step {step}",
                    record.variant,
                    record.bits,
                    record.subject,
                    job.seed,
                    epoch + 1
                );
                record.status = RunStatus::Diverged {
                    epoch: epoch + 1,
                    step,
                };
                break 'epochs;
            }
            loss_sum += lv * batch.len() as f64;
            seen += batch.len();
            g.backward(loss)?;

            let grads: Vec<Vec<f64>> = vars
                .iter()
                .zip(&sizes)
                .map(|(&v, &n)| {
                    g.grad(v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; n])
                })
                .collect();
            let mut ps: Vec<&mut [f64]> = model
                .params
                .iter_mut()
                .map(|p| p.value.data_mut())
                .collect();
            let gs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            opt.step(&mut ps, &gs, lr);

            if let Some((gp, mp)) = pre {
                let grad_or_zero = |v: Var, n: usize| {
                    g.grad(v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; n])
                };
                let dg = grad_or_zero(gp, qparams.gamma_pre.len());
                let dm = mp
                    .map(|m| grad_or_zero(m, qparams.mu_pre.len()))
                    .unwrap_or_default();
                qopt.step(
                    &mut [&mut qparams.gamma_pre, &mut qparams.mu_pre],
                    &[&dg, &dm],
                    qlr,
                );
                qparams.write_back(&mut stage);
            }
        }
        let conf = evaluate(&model, &stage, &val_x, &val_y, ds.num_classes())?;
        record.curves.push(EpochStats {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / seen.max(1) as f64,
            val_macro_f1: macro_f1(&conf)?,
        });
        record.trajectory.push(ParamPoint {
            epoch: epoch + 1,
            gamma: stage.gamma.clone(),
            mu: stage.mu.clone(),
        });
    }

    let checkpoint = if record.status == RunStatus::Completed {
        let conf = evaluate(&model, &stage, &val_x, &val_y, ds.num_classes())?;
        record.macro_f1 = Some(macro_f1(&conf)?);
        record.per_class_f1 = per_class_f1(&conf)?;
        record.confusion = conf;
        record.gamma = stage.gamma.clone();
        record.mu = stage.mu.clone();
        Some(Checkpoint::new(
            &model,
            ds.class_names.clone(),
            stage,
            fold.norm.clone(),
            Some(split.subject.clone()),
        ))
    } else {
        None
    };
    Ok(TrainedRun { record, checkpoint })
}

/// Confusion matrix of `model` behind `stage` on normalized windows.
pub fn evaluate(
    model: &ClassifierModel,
    stage: &QuantStage,
    x: &Tensor,
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<u64>>> {
    let n = x.shape()[0];
    let mut pred = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let xb = stage.apply(&x.gather_rows(chunk))?;
        pred.extend(model.predict(&xb)?);
    }
    confusion_matrix(labels, &pred, num_classes)
}

/// Metrics of a frozen checkpoint on a set of windows.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub subjects: Vec<String>,
    pub windows: usize,
    pub macro_f1: f64,
    pub per_class_f1: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
}

/// Windows `recs` the way the checkpoint was trained, normalizes them with
/// the stored statistics and scores the model behind its quantizer. With
/// `subject` set, only that subject's recording is used.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    recs: &[Recording],
    overlap: f64,
    subject: Option<&str>,
) -> Result<EvalReport> {
    let mut picked: Vec<Recording> = recs
        .iter()
        .filter(|r| subject.is_none_or(|s| r.subject_id == s))
        .cloned()
        .collect();
    if picked.is_empty() {
        return Err(Error::Data(match subject {
            Some(s) => format!("no recording for subject `{s}`"),
            None => "no recordings to evaluate".into(),
        }));
    }
    for r in &mut picked {
        if r.num_axes() != ck.num_axes {
            return Err(Error::Data(format!(
                "subject `{}` has {} axes, checkpoint expects {}",
                r.subject_id,
                r.num_axes(),
                ck.num_axes
            )));
        }
        r.remap_classes(&ck.class_names)?;
    }
    let rate = picked[0].sample_rate_hz;
    let ds = WindowedDataset::from_recordings(&picked, ck.window_len as f64 / rate, overlap)?;
    if ds.is_empty() {
        return Err(Error::Data("recordings are shorter than one window".into()));
    }
    if ds.window_len() != ck.window_len {
        return Err(Error::Data(format!(
            "window of {} samples at {rate} Hz, checkpoint expects {}",
            ds.window_len(),
            ck.window_len
        )));
    }
    let model = ck.to_model()?;
    let x = ck.norm.apply(&ds.windows)?;
    let conf = evaluate(&model, &ck.quantizer, &x, &ds.labels, ck.class_names.len())?;
    Ok(EvalReport {
        subjects: ds.subject_ids.clone(),
        windows: ds.len(),
        macro_f1: macro_f1(&conf)?,
        per_class_f1: per_class_f1(&conf)?,
        confusion: conf,
    })
}
