//! Spectrum grids, log-intensity preprocessing, patching and mask plans.

use std::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{derive_seed, rng_for};

/// The three spectrum kinds, in the fixed token order used by the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    UvVis,
    Ir,
    Raman,
}

impl SpectrumKind {
    pub const ALL: [SpectrumKind; 3] = [SpectrumKind::UvVis, SpectrumKind::Ir, SpectrumKind::Raman];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Key used in dataset files and parameter names.
    pub fn key(self) -> &'static str {
        match self {
            SpectrumKind::UvVis => "uv_vis",
            SpectrumKind::Ir => "ir",
            SpectrumKind::Raman => "raman",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            SpectrumKind::UvVis => "eV",
            SpectrumKind::Ir | SpectrumKind::Raman => "cm^-1",
        }
    }
}

impl fmt::Display for SpectrumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpectrumKind::UvVis => "UV-Vis",
            SpectrumKind::Ir => "IR",
            SpectrumKind::Raman => "Raman",
        })
    }
}

/// A uniform sampling grid `start + k·step`, `k < len`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl Grid {
    pub fn point(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.point(self.len.saturating_sub(1))
    }

    /// Index of the grid point nearest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let k = ((x - self.start) / self.step).round();
        k.clamp(0.0, (self.len - 1) as f64) as usize
    }
}

/// One grid per spectrum kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSet {
    pub uv_vis: Grid,
    pub ir: Grid,
    pub raman: Grid,
}

impl GridSet {
    /// Full-resolution grids: UV-Vis 1.5–13.5 eV in 0.02 eV steps, IR and
    /// Raman 500–4000 cm⁻¹ in 1 cm⁻¹ steps.
    pub fn full() -> Self {
        let vib = Grid {
            start: 500.0,
            step: 1.0,
            len: 3501,
        };
        Self {
            uv_vis: Grid {
                start: 1.5,
                step: 0.02,
                len: 601,
            },
            ir: vib,
            raman: vib,
        }
    }

    /// Shortened 120-point grids spanning the same physical ranges.
    pub fn desk() -> Self {
        let vib = Grid {
            start: 500.0,
            step: 30.0,
            len: 120,
        };
        Self {
            uv_vis: Grid {
                start: 1.5,
                step: 0.1,
                len: 120,
            },
            ir: vib,
            raman: vib,
        }
    }

    pub fn get(&self, kind: SpectrumKind) -> &Grid {
        match kind {
            SpectrumKind::UvVis => &self.uv_vis,
            SpectrumKind::Ir => &self.ir,
            SpectrumKind::Raman => &self.raman,
        }
    }

    pub fn lengths(&self) -> [usize; 3] {
        SpectrumKind::ALL.map(|k| self.get(k).len)
    }

    /// Rejects a spectrum whose length differs from its grid.
    pub fn check(&self, s: &Spectrum) -> Result<()> {
        let expected = self.get(s.kind).len;
        if s.intensities.len() != expected {
            return Err(Error::Dataset(format!(
                "{} spectrum has {} points, expected {expected}",
                s.kind,
                s.intensities.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub kind: SpectrumKind,
    pub intensities: Vec<f64>,
}

impl Spectrum {
    pub fn new(kind: SpectrumKind, intensities: Vec<f64>) -> Self {
        Self { kind, intensities }
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }
}

/// Maps raw intensities through `log10(1 + I)`.
pub fn preprocess(raw: &Spectrum) -> Result<Spectrum> {
    let mut out = Vec::with_capacity(raw.len());
    for (k, &v) in raw.intensities.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{} intensity at index {k}", raw.kind)));
        }
        if v < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "negative {} intensity {v} at index {k}",
                raw.kind
            )));
        }
        out.push(v.ln_1p() / std::f64::consts::LN_10);
    }
    Ok(Spectrum::new(raw.kind, out))
}

/// Patch length `P` and stride `D` for one spectrum kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_len: usize,
    pub stride: usize,
}

impl PatchConfig {
    pub fn new(patch_len: usize, stride: usize) -> Self {
        Self { patch_len, stride }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        let (p, d) = (self.patch_len, self.stride);
        if d == 0 || d > p {
            return Err(Error::Config(format!(
                "stride {d} must satisfy 0 < stride <= patch length {p}"
            )));
        }
        if p > len {
            return Err(Error::Config(format!(
                "patch length {p} exceeds spectrum length {len}"
            )));
        }
        Ok(())
    }
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self::new(20, 10)
    }
}

/// Number of full windows: `floor((L − P) / D) + 1`.
pub fn patch_count(len: usize, cfg: PatchConfig) -> Result<usize> {
    cfg.validate(len)?;
    Ok((len - cfg.patch_len) / cfg.stride + 1)
}

/// A spectrum cut into `N × P` overlapping windows.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    pub kind: SpectrumKind,
    pub config: PatchConfig,
    pub patches: Tensor,
}

impl PatchSequence {
    pub fn count(&self) -> usize {
        self.patches.rows()
    }

    pub fn patch(&self, j: usize) -> &[f64] {
        self.patches.row(j)
    }
}

/// Cuts `s` into windows starting at `0, D, 2D, …`; trailing points not
/// covered by a full window are dropped.
pub fn patchify(s: &Spectrum, cfg: PatchConfig) -> Result<PatchSequence> {
    let n = patch_count(s.len(), cfg)?;
    let p = cfg.patch_len;
    let mut data = Vec::with_capacity(n * p);
    for j in 0..n {
        let start = j * cfg.stride;
        data.extend_from_slice(&s.intensities[start..start + p]);
    }
    Ok(PatchSequence {
        kind: s.kind,
        config: cfg,
        patches: Tensor::matrix(n, p, data)?,
    })
}

/// `max(1, floor(α·n))` for `α > 0`, else 0, never more than `n`.
pub fn masked_count(n: usize, ratio: f64) -> usize {
    if ratio <= 0.0 || n == 0 {
        return 0;
    }
    // The small offset keeps products such as 0.29·100 from rounding down.
    let k = (ratio * n as f64 + 1e-9).floor() as usize;
    k.max(1).min(n)
}

/// Masked patch indices for each spectrum kind of one molecule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub ratio: f64,
    pub seed: u64,
    /// Sorted masked indices, indexed by [`SpectrumKind::index`].
    pub masked: [Vec<usize>; 3],
}

impl MaskPlan {
    pub fn empty(ratio: f64, seed: u64) -> Self {
        Self {
            ratio,
            seed,
            masked: Default::default(),
        }
    }

    pub fn get(&self, kind: SpectrumKind) -> &[usize] {
        &self.masked[kind.index()]
    }

    pub fn total(&self) -> usize {
        self.masked.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }
}

/// Draws the masked set of every kind independently, uniformly without
/// replacement.
pub fn make_mask_plan(counts: [usize; 3], ratio: f64, seed: u64) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("mask ratio {ratio} outside [0, 1)")));
    }
    let mut plan = MaskPlan::empty(ratio, seed);
    for kind in SpectrumKind::ALL {
        let n = counts[kind.index()];
        let k = masked_count(n, ratio);
        if k == 0 {
            continue;
        }
        let mut rng = rng_for(seed, kind.key());
        let mut picked = index::sample(&mut rng, n, k).into_vec();
        picked.sort_unstable();
        plan.masked[kind.index()] = picked;
    }
    Ok(plan)
}

/// Seed for the mask plan of item `item` at training step `step`.
pub fn mask_seed(seed: u64, step: u64, item: usize) -> u64 {
    derive_seed(seed, &format!("mask/{step}/{item}"))
}

/// Zeroes the masked rows of `p`; other rows are copied unchanged.
pub fn apply_mask(p: &PatchSequence, plan: &MaskPlan) -> Result<PatchSequence> {
    let mut out = p.clone();
    for &j in plan.get(p.kind) {
        if j >= p.count() {
            return Err(Error::InvalidArgument(format!(
                "masked index {j} out of range for {} patches of {}",
                p.count(),
                p.kind
            )));
        }
        out.patches.row_mut(j).fill(0.0);
    }
    Ok(out)
}
