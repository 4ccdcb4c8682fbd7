use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder3d::{GraphBatch, Vec3};
use crate::error::{Error, Result};
use crate::numerics::{ForwardCtx, Mode, Tape, Tensor};
use crate::rng::rng_for;
use crate::specformer::SpectraBatch;
use crate::spectra::{MaskPlan, Spectrum};

use super::config::Model;
use super::dataset::MoleculeRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub batch_size: usize,
    pub batches: usize,
    /// Fraction of structures whose own spectra score highest.
    pub structure_to_spectra: f64,
    /// Fraction of spectra whose own structure scores highest.
    pub spectra_to_structure: f64,
}

fn argmax(v: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in v.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

/// Correct top-1 matches of a square score matrix `S[x, s]`, row-wise
/// (structure → spectra) and column-wise. Ties go to the lowest index.
pub fn top1_hits(scores: &Tensor) -> Result<(usize, usize)> {
    let n = scores.rows();
    if scores.shape() != [n, n] {
        return Err(Error::Shape(format!("score matrix {:?} is not square", scores.shape())));
    }
    let rows = (0..n).filter(|&i| argmax(scores.row(i).iter().copied()) == i).count();
    let cols = (0..n)
        .filter(|&j| argmax((0..n).map(|i| scores.get(i, j))) == j)
        .count();
    Ok((rows, cols))
}

/// Embeds every molecule with both encoders in evaluation mode (clean
/// coordinates, no masking).
pub fn embed_pairs(model: &Model, records: &[&MoleculeRecord]) -> Result<(Tensor, Tensor)> {
    let spec = model.spec()?;
    let sets: Vec<[Spectrum; 3]> = records.iter().map(|r| r.spectra_triple()).collect::<Result<_>>()?;
    let set_refs: Vec<&[Spectrum; 3]> = sets.iter().collect();
    let mut unmasked = spec.config.clone();
    unmasked.mask_ratio = 0.0;
    let batch = SpectraBatch::build(&unmasked, &set_refs, &vec![0; records.len()])?;
    debug_assert!(batch.plans.iter().all(MaskPlan::is_empty));
    let mols: Vec<(&[u8], &[Vec3])> = records.iter().map(|r| (r.atoms.as_slice(), r.coords.as_slice())).collect();
    let graph = GraphBatch::new(&model.mol.config, &mols)?;
    let tape = Tape::new();
    let ctx = ForwardCtx::new(&tape, &model.store, Mode::Eval);
    let zx = model.mol.forward(&ctx, &graph).z_x;
    let zs = spec.forward(&ctx, &batch)?.z_s;
    Ok(((*zx.value()).clone(), (*zs.value()).clone()))
}

/// Top-1 retrieval accuracy in both directions over batches of
/// `batch_size` drawn from a permutation of `dataset` (stream
/// `"retrieval"`); an incomplete last batch is skipped.
pub fn eval_retrieval(model: &Model, dataset: &[MoleculeRecord], batch_size: usize, seed: u64) -> Result<RetrievalReport> {
    if batch_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "retrieval needs batch size >= 2, got {batch_size}"
        )));
    }
    let batches = dataset.len() / batch_size;
    if batches == 0 {
        return Err(Error::Dataset(format!(
            "{} molecules do not fill one batch of {batch_size}",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng_for(seed, "retrieval"));
    let (mut x2s, mut s2x) = (0, 0);
    for b in 0..batches {
        let records: Vec<&MoleculeRecord> = order[b * batch_size..(b + 1) * batch_size]
            .iter()
            .map(|&i| &dataset[i])
            .collect();
        let (zx, zs) = embed_pairs(model, &records)?;
        let (r, c) = top1_hits(&zx.matmul(&zs.transpose())?)?;
        x2s += r;
        s2x += c;
    }
    let total = (batches * batch_size) as f64;
    Ok(RetrievalReport {
        batch_size,
        batches,
        structure_to_spectra: x2s as f64 / total,
        spectra_to_structure: s2x as f64 / total,
    })
}
