use serde::{Deserialize, Serialize};

use super::WindowedDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    /// One min/max over every axis.
    Dataset,
    PerAxis,
}

/// Min/max statistics of an affine map onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormMeta {
    pub scope: NormScope,
    /// One entry for `Dataset`, one per axis for `PerAxis`.
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormMeta {
    /// Statistics of the windows at `indices` of a `[n, axes, len]` tensor.
    pub fn fit(windows: &Tensor, indices: &[usize], scope: NormScope) -> Result<Self> {
        let (axes, len) = (windows.shape()[1], windows.shape()[2]);
        let groups = match scope {
            NormScope::Dataset => 1,
            NormScope::PerAxis => axes,
        };
        let mut min = vec![f64::INFINITY; groups];
        let mut max = vec![f64::NEG_INFINITY; groups];
        let d = windows.data();
        for &i in indices {
            for a in 0..axes {
                let gi = if groups == 1 { 0 } else { a };
                for &v in &d[(i * axes + a) * len..][..len] {
                    min[gi] = min[gi].min(v);
                    max[gi] = max[gi].max(v);
                }
            }
        }
        for g in 0..groups {
            if !(max[g] > min[g]) {
                let what = match scope {
                    NormScope::Dataset => "dataset".to_string(),
                    NormScope::PerAxis => format!("axis {g}"),
                };
                return Err(Error::Config(format!(
                    "cannot min-max normalize {what}: constant or empty signal (min {}, max {})",
                    min[g], max[g]
                )));
            }
        }
        Ok(NormMeta { scope, min, max })
    }

    fn group(&self, axis: usize) -> usize {
        match self.scope {
            NormScope::Dataset => 0,
            NormScope::PerAxis => axis,
        }
    }

    pub fn num_axes_hint(&self) -> Option<usize> {
        match self.scope {
            NormScope::Dataset => None,
            NormScope::PerAxis => Some(self.min.len()),
        }
    }

    #[inline]
    pub fn normalize_value(&self, axis: usize, v: f64) -> f64 {
        let g = self.group(axis);
        let (lo, hi) = (self.min[g], self.max[g]);
        (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
    }

    #[inline]
    pub fn denormalize_value(&self, axis: usize, y: f64) -> f64 {
        let g = self.group(axis);
        let (lo, hi) = (self.min[g], self.max[g]);
        (y + 1.0) / 2.0 * (hi - lo) + lo
    }

    fn check_axes(&self, axes: usize) -> Result<()> {
        if self.scope == NormScope::PerAxis && self.min.len() != axes {
            return Err(Error::Data(format!(
                "per-axis statistics cover {} axes, data has {axes}",
                self.min.len()
            )));
        }
        Ok(())
    }

    /// Maps `[n, axes, len]` windows onto `[-1, 1]`, clamping values outside
    /// the fitted range.
    pub fn apply(&self, windows: &Tensor) -> Result<Tensor> {
        let (axes, len) = (windows.shape()[1], windows.shape()[2]);
        self.check_axes(axes)?;
        let mut out = windows.clone();
        for (j, chunk) in out.data_mut().chunks_mut(len.max(1)).enumerate() {
            let a = j % axes;
            for v in chunk {
                *v = self.normalize_value(a, *v);
            }
        }
        Ok(out)
    }

    pub fn invert(&self, windows: &Tensor) -> Result<Tensor> {
        let (axes, len) = (windows.shape()[1], windows.shape()[2]);
        self.check_axes(axes)?;
        let mut out = windows.clone();
        for (j, chunk) in out.data_mut().chunks_mut(len.max(1)).enumerate() {
            let a = j % axes;
            for v in chunk {
                *v = self.denormalize_value(a, *v);
            }
        }
        Ok(out)
    }
}

/// Normalizes the whole dataset with its own statistics.
pub fn minmax_normalize(ds: &WindowedDataset, scope: NormScope) -> Result<WindowedDataset> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let meta = NormMeta::fit(&ds.windows, &all, scope)?;
    let mut out = ds.clone();
    out.windows = meta.apply(&ds.windows)?;
    out.norm_meta = Some(meta);
    Ok(out)
}
