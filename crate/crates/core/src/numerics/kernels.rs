use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Numerically stable softmax of one row.
pub fn softmax_row(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("softmax input contains {bad}")));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Per-column mean and biased variance of a matrix.
pub(crate) fn batch_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (x.rows(), x.cols());
    let mut mean = vec![0.0; n];
    for i in 0..m {
        for (acc, &v) in mean.iter_mut().zip(x.row(i)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut var = vec![0.0; n];
    for i in 0..m {
        for ((acc, &v), mu) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|v| *v /= m as f64);
    (mean, var)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean and variance tracked by a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }

    /// Exponential update with momentum [`BN_MOMENTUM`]. The variance fed to
    /// the running estimate is the unbiased one.
    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64], batch_size: usize) {
        let correction = if batch_size > 1 {
            batch_size as f64 / (batch_size as f64 - 1.0)
        } else {
            1.0
        };
        for (r, &m) in self.mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, &v) in self.var.iter_mut().zip(batch_var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * correction;
        }
    }
}

/// Batch normalization over the rows of `x` (one feature per column).
///
/// Train mode normalizes with the batch statistics and updates `stats`;
/// eval mode reads `stats` only.
pub fn batchnorm(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    mode: Mode,
    eps: f64,
    stats: &mut RunningStats,
) -> Result<Tensor> {
    let (m, n) = (x.rows(), x.cols());
    if m == 0 || x.numel() == 0 {
        return Err(Error::InvalidArgument("batchnorm over an empty batch".into()));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("batchnorm eps must be > 0, got {eps}")));
    }
    if gamma.len() != n || beta.len() != n || stats.mean.len() != n || stats.var.len() != n {
        return Err(Error::Shape(format!("batchnorm over {n} features with mismatched affine/stat widths")));
    }
    let (mean, var) = match mode {
        Mode::Train => {
            let (mean, var) = batch_moments(x);
            stats.update(&mean, &var, m);
            (mean, var)
        }
        Mode::Eval => (stats.mean.clone(), stats.var.clone()),
    };
    let mut out = x.clone();
    for i in 0..m {
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = gamma[j] * (*o - mean[j]) / (var[j] + eps).sqrt() + beta[j];
        }
    }
    Ok(out)
}
