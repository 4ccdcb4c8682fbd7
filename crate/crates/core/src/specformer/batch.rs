use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::spectra::{apply_mask, make_mask_plan, patchify, MaskPlan, PatchSequence, Spectrum, SpectrumKind};

use super::config::SpecFormerConfig;

/// Patched spectra of several molecules, stacked per kind.
///
/// `masked[i]` and `targets[i]` are `(B·N_i) × P_i`, molecule-major.
#[derive(Clone, Debug)]
pub struct SpectraBatch {
    pub size: usize,
    pub counts: [usize; 3],
    pub masked: [Tensor; 3],
    pub targets: [Tensor; 3],
    pub plans: Vec<MaskPlan>,
}

impl SpectraBatch {
    /// Stacks per-molecule patch sequences, zeroing the rows named by each
    /// molecule's plan.
    pub fn from_patches(items: &[[PatchSequence; 3]], plans: Vec<MaskPlan>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("empty spectra batch".into()));
        }
        if plans.len() != items.len() {
            return Err(Error::InvalidArgument(format!(
                "{} mask plans for {} molecules",
                plans.len(),
                items.len()
            )));
        }
        let counts = SpectrumKind::ALL.map(|k| items[0][k.index()].count());
        let widths = SpectrumKind::ALL.map(|k| items[0][k.index()].patches.cols());
        let mut masked: [Vec<f64>; 3] = Default::default();
        let mut targets: [Vec<f64>; 3] = Default::default();
        for (b, (seqs, plan)) in items.iter().zip(&plans).enumerate() {
            for kind in SpectrumKind::ALL {
                let i = kind.index();
                let seq = &seqs[i];
                if seq.kind != kind {
                    return Err(Error::InvalidArgument(format!(
                        "molecule {b}: slot {i} holds {} instead of {kind}",
                        seq.kind
                    )));
                }
                if seq.count() != counts[i] || seq.patches.cols() != widths[i] {
                    return Err(Error::Shape(format!(
                        "molecule {b}: {kind} patches {:?}, expected [{}, {}]",
                        seq.patches.shape(),
                        counts[i],
                        widths[i]
                    )));
                }
                masked[i].extend_from_slice(apply_mask(seq, plan)?.patches.data());
                targets[i].extend_from_slice(seq.patches.data());
            }
        }
        let n = items.len();
        let stack = |data: [Vec<f64>; 3]| -> Result<[Tensor; 3]> {
            let [a, b, c] = data;
            Ok([
                Tensor::matrix(n * counts[0], widths[0], a)?,
                Tensor::matrix(n * counts[1], widths[1], b)?,
                Tensor::matrix(n * counts[2], widths[2], c)?,
            ])
        };
        Ok(Self {
            size: n,
            counts,
            masked: stack(masked)?,
            targets: stack(targets)?,
            plans,
        })
    }

    /// Patchifies preprocessed spectra and masks them with plans drawn from
    /// `seeds` (one per molecule).
    pub fn build(cfg: &SpecFormerConfig, spectra: &[&[Spectrum; 3]], seeds: &[u64]) -> Result<Self> {
        if seeds.len() != spectra.len() {
            return Err(Error::InvalidArgument("one mask seed per molecule required".into()));
        }
        let counts = cfg.counts()?;
        let mut items = Vec::with_capacity(spectra.len());
        let mut plans = Vec::with_capacity(spectra.len());
        for (set, &seed) in spectra.iter().zip(seeds) {
            let mut seqs = Vec::with_capacity(3);
            for kind in SpectrumKind::ALL {
                let s = &set[kind.index()];
                if s.kind != kind {
                    return Err(Error::InvalidArgument(format!("expected {kind} spectrum, got {}", s.kind)));
                }
                if s.len() != cfg.lengths[kind.index()] {
                    return Err(Error::Shape(format!(
                        "{kind} spectrum has {} points, expected {}",
                        s.len(),
                        cfg.lengths[kind.index()]
                    )));
                }
                seqs.push(patchify(s, cfg.patch(kind))?);
            }
            let seqs: [PatchSequence; 3] = seqs.try_into().expect("three kinds");
            items.push(seqs);
            plans.push(make_mask_plan(counts, cfg.mask_ratio, seed)?);
        }
        Self::from_patches(&items, plans)
    }
}
