//! Denoising, masked-patch reconstruction and contrastive losses, their
//! weighted sum, and a numerical check that the optimal denoiser equals
//! the scaled score of a Gaussian mixture.

mod equivalence;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tensor, Var};
use crate::specformer::Reconstruction;

pub use equivalence::{
    mixture_denoiser, mixture_score_scaled, parse_grid, verify_equivalence, write_report_csv, EquivalenceReport,
    RegressorSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub denoising: f64,
    pub mpr: f64,
    pub contrast: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            denoising: 1.0,
            mpr: 1.0,
            contrast: 1.0,
        }
    }
}

impl LossWeights {
    pub fn denoising_only() -> Self {
        Self {
            denoising: 1.0,
            mpr: 0.0,
            contrast: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.denoising, self.mpr, self.contrast];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weights {w:?} must be finite and >= 0")));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Component losses of one step and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: u64,
    pub denoising: f64,
    pub mpr: f64,
    pub contrast: f64,
    pub total: f64,
}

/// `β_D·denoising + β_M·mpr + β_C·contrast`.
pub fn loss_total(step: u64, denoising: f64, mpr: f64, contrast: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        step,
        denoising,
        mpr,
        contrast,
        total: w.denoising * denoising + w.mpr * mpr + w.contrast * contrast,
    }
}

/// Weighted sum on the tape. Terms with zero weight are left out of the
/// graph entirely, so they contribute no gradient at all.
pub fn weighted_total<'t>(terms: &[(f64, Option<Var<'t>>)]) -> Result<Var<'t>> {
    let mut total: Option<Var<'t>> = None;
    for &(w, term) in terms {
        if w == 0.0 {
            continue;
        }
        let term = term.ok_or_else(|| Error::InvalidArgument("missing loss term with nonzero weight".into()))?;
        let scaled = if w == 1.0 { term } else { term.scale(w) };
        total = Some(match total {
            Some(t) => t + scaled,
            None => scaled,
        });
    }
    total.ok_or_else(|| Error::Config("all loss weights are zero".into()))
}

/// Mean over molecules of the per-coordinate mean squared error between
/// predicted and true displacements. `owner[i]` is the molecule of atom `i`.
pub fn loss_denoising<'t>(pred: Var<'t>, target: &Tensor, owner: &[usize]) -> Result<Var<'t>> {
    let shape = pred.shape();
    if shape.len() != 2 || shape[1] != 3 || target.shape() != shape.as_slice() {
        return Err(Error::Shape(format!(
            "prediction {shape:?} vs target {:?}; both must be N x 3",
            target.shape()
        )));
    }
    if owner.len() != shape[0] || owner.is_empty() {
        return Err(Error::InvalidArgument("denoising loss needs a nonempty batch with one owner per atom".into()));
    }
    let molecules = owner.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; molecules];
    for &b in owner {
        sizes[b] += 1;
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("molecule without atoms in denoising batch".into()));
    }
    let weights: Vec<f64> = owner
        .iter()
        .map(|&b| 1.0 / (3.0 * sizes[b] as f64 * molecules as f64))
        .collect();
    let tape = pred.tape();
    let diff = pred - tape.constant(target.clone());
    let w = tape.constant(Tensor::matrix(owner.len(), 1, weights)?);
    Ok((diff * diff).mul_col(w).sum())
}

/// Sum over spectrum kinds of the mean (over masked patches, then over
/// molecules) squared L2 reconstruction error.
pub fn loss_mpr<'t>(recons: &[Reconstruction<'t>]) -> Result<Var<'t>> {
    if recons.is_empty() {
        return Err(Error::InvalidArgument("reconstruction loss needs at least one masked patch".into()));
    }
    let mut total: Option<Var<'t>> = None;
    for r in recons {
        if r.pred.shape() != r.target.shape() {
            return Err(Error::Shape(format!(
                "{} reconstruction {:?} vs target {:?}",
                r.kind,
                r.pred.shape(),
                r.target.shape()
            )));
        }
        let mut per_molecule = vec![0usize; r.batch_size];
        for &b in &r.owners {
            per_molecule[b] += 1;
        }
        let weights: Vec<f64> = r
            .owners
            .iter()
            .map(|&b| 1.0 / (per_molecule[b] as f64 * r.batch_size as f64))
            .collect();
        let tape = r.pred.tape();
        let diff = r.pred - tape.constant(r.target.clone());
        let w = tape.constant(Tensor::matrix(weights.len(), 1, weights)?);
        let term = (diff * diff).mul_col(w).sum();
        total = Some(match total {
            Some(t) => t + term,
            None => term,
        });
    }
    Ok(total.expect("nonempty"))
}

/// Symmetric in-batch InfoNCE with dot-product scores `S = Z_x Z_sᵀ / t`:
/// `−(Σ_k log softmax(S)_kk + Σ_k log softmax(Sᵀ)_kk) / (2·bs)`.
pub fn loss_infonce<'t>(zx: Var<'t>, zs: Var<'t>, temperature: f64) -> Result<Var<'t>> {
    let (a, b) = (zx.shape(), zs.shape());
    if a.len() != 2 || a != b {
        return Err(Error::Shape(format!("Z_x {a:?} and Z_s {b:?} must have equal shapes")));
    }
    if a[0] == 0 {
        return Err(Error::InvalidArgument("contrastive loss needs a nonempty batch".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    let bs = a[0];
    let mut scores = zx.matmul(zs.transpose());
    if temperature != 1.0 {
        scores = scores.scale(1.0 / temperature);
    }
    let eye = zx.tape().constant(Tensor::identity(bs));
    let forward = (scores.log_softmax_rows() * eye).sum();
    let backward = (scores.transpose().log_softmax_rows() * eye).sum();
    Ok((forward + backward).scale(-1.0 / (2.0 * bs as f64)))
}
