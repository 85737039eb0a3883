//! Task network, loss and optimizer.
//!
//! The classifier is a small temporal CNN:
//! `2 x (conv1d(k) -> relu -> maxpool(2)) -> global average pool -> dense`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::NormMeta;
use crate::error::{Error, Result};
use crate::harness::QuantStage;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Output channels of the two convolution blocks.
    pub channels: [usize; 2],
    pub kernel: usize,
    pub pool: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: [32, 64],
            kernel: 5,
            pool: 2,
        }
    }
}

/// Named trainable tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub config: ModelConfig,
    pub num_axes: usize,
    pub window_len: usize,
    pub num_classes: usize,
    pub params: Vec<Param>,
}

impl ClassifierModel {
    /// He-uniform weights (`U(-b, b)`, `b = sqrt(6 / fan_in)`), zero biases.
    pub fn new(
        config: ModelConfig,
        num_axes: usize,
        window_len: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let [c1, c2] = config.channels;
        let k = config.kernel;
        if num_axes == 0 || num_classes == 0 || c1 == 0 || c2 == 0 || k == 0 || config.pool == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let after1 = window_len
            .checked_sub(k - 1)
            .map(|l| l / config.pool)
            .unwrap_or(0);
        let after2 = after1
            .checked_sub(k - 1)
            .map(|l| l / config.pool)
            .unwrap_or(0);
        if after2 == 0 {
            return Err(Error::Config(format!(
                "window of {window_len} samples is too short for kernel {k} and pool {}",
                config.pool
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |shape: &[usize], fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::new(shape.to_vec(), data).unwrap()
        };
        let params = vec![
            Param {
                name: "conv1.weight".into(),
                value: he(&[c1, num_axes, k], num_axes * k),
            },
            Param {
                name: "conv1.bias".into(),
                value: Tensor::zeros(&[c1]),
            },
            Param {
                name: "conv2.weight".into(),
                value: he(&[c2, c1, k], c1 * k),
            },
            Param {
                name: "conv2.bias".into(),
                value: Tensor::zeros(&[c2]),
            },
            Param {
                name: "dense.weight".into(),
                value: he(&[c2, num_classes], c2),
            },
            Param {
                name: "dense.bias".into(),
                value: Tensor::zeros(&[num_classes]),
            },
        ];
        Ok(ClassifierModel {
            config,
            num_axes,
            window_len,
            num_classes,
            params,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Places the parameters on `g` as trainable leaves.
    pub fn attach(&self, g: &mut Graph) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| g.param(p.value.clone()))
            .collect()
    }

    /// Logits `[batch, classes]` for `x: [batch, axes, window]`.
    pub fn forward(&self, g: &mut Graph, x: Var, vars: &[Var]) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 3 || shape[1] != self.num_axes || shape[2] != self.window_len {
            return Err(Error::Shape {
                op: "model input",
                lhs: shape.to_vec(),
                rhs: vec![0, self.num_axes, self.window_len],
            });
        }
        let h = g.conv1d(x, vars[0], vars[1])?;
        let h = g.relu(h);
        let h = g.max_pool1d(h, self.config.pool)?;
        let h = g.conv1d(h, vars[2], vars[3])?;
        let h = g.relu(h);
        let h = g.max_pool1d(h, self.config.pool)?;
        let h = g.global_avg_pool(h)?;
        let h = g.matmul(h, vars[4])?;
        g.add_bias(h, vars[5])
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.constant(p.value.clone()))
            .collect();
        let out = self.forward(&mut g, xv, &vars)?;
        Ok(g.value(out).clone())
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(argmax_rows(&logits))
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Cross-entropy with per-class weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedCrossEntropy {
    pub class_weights: Vec<f64>,
}

impl WeightedCrossEntropy {
    pub fn uniform(num_classes: usize) -> Self {
        WeightedCrossEntropy {
            class_weights: vec![1.0; num_classes],
        }
    }

    /// Inverse class frequency, normalized to mean 1 over the classes that
    /// occur. Absent classes get weight 1.
    pub fn inverse_frequency(labels: &[usize], num_classes: usize) -> Self {
        let mut counts = vec![0usize; num_classes];
        for &y in labels {
            counts[y] += 1;
        }
        let present: Vec<usize> = (0..num_classes).filter(|&c| counts[c] > 0).collect();
        let mut w = vec![1.0; num_classes];
        if !present.is_empty() {
            for &c in &present {
                w[c] = 1.0 / counts[c] as f64;
            }
            let mean = present.iter().map(|&c| w[c]).sum::<f64>() / present.len() as f64;
            for &c in &present {
                w[c] /= mean;
            }
        }
        WeightedCrossEntropy { class_weights: w }
    }

    pub fn loss(&self, g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
        g.cross_entropy(logits, labels, &self.class_weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

/// Adam with an L2 penalty folded into the gradient (`g + wd * theta`).
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Adam {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`. `grads[i]` must match `params[i]`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j] + weight_decay * p[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Multiplies the base rate by `factor` at each milestone epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub factor: f64,
    pub milestones: Vec<usize>,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            factor: 0.9,
            milestones: vec![10, 20],
        }
    }
}

impl StepSchedule {
    /// Rate for the zero-based `epoch`.
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| m <= epoch).count();
        base * self.factor.powi(k as i32)
    }
}

/// Frozen model plus everything needed to re-run it on raw recordings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelConfig,
    pub num_axes: usize,
    pub window_len: usize,
    pub class_names: Vec<String>,
    pub params: Vec<Param>,
    pub quantizer: QuantStage,
    pub norm: NormMeta,
    #[serde(default)]
    pub validation_subject: Option<String>,
}

pub const CHECKPOINT_FORMAT: &str = "checkpoint v1";

impl Checkpoint {
    pub fn new(
        model: &ClassifierModel,
        class_names: Vec<String>,
        quantizer: QuantStage,
        norm: NormMeta,
        validation_subject: Option<String>,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            model: model.config.clone(),
            num_axes: model.num_axes,
            window_len: model.window_len,
            class_names,
            params: model.params.clone(),
            quantizer,
            norm,
            validation_subject,
        }
    }

    pub fn to_model(&self) -> Result<ClassifierModel> {
        let mut m = ClassifierModel::new(
            self.model.clone(),
            self.num_axes,
            self.window_len,
            self.class_names.len(),
            0,
        )?;
        if m.params.len() != self.params.len() {
            return Err(Error::Data("checkpoint parameter count mismatch".into()));
        }
        for (dst, src) in m.params.iter_mut().zip(&self.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Data(format!(
                    "checkpoint parameter `{}` {:?} does not fit `{}` {:?}",
                    src.name,
                    src.value.shape(),
                    dst.name,
                    dst.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint =
            serde_json::from_str(&s).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported format `{}`", c.format),
            ));
        }
        Ok(c)
    }
}
