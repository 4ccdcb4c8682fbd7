use serde::Serialize;

use crate::encoder3d::Encoder3dConfig;
use crate::error::Result;
use crate::numerics::{grad_check, GradReport, Mode};
use crate::objectives::LossWeights;
use crate::specformer::SpecFormerConfig;
use crate::spectra::{Grid, GridSet, PatchConfig, Spectrum};

use super::config::{Model, TrainConfig};
use super::dataset::MoleculeRecord;
use super::synthetic::gen_synthetic;
use super::train::{forward_losses, StepInputs};

/// 12-point grids for the toy model.
pub fn toy_grids() -> GridSet {
    let vib = Grid {
        start: 500.0,
        step: 300.0,
        len: 12,
    };
    GridSet {
        uv_vis: Grid {
            start: 1.5,
            step: 1.0,
            len: 12,
        },
        ir: vib,
        raman: vib,
    }
}

/// A one-layer, two-head model of width 8 over 12-point spectra.
pub fn toy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        batch_size: 2,
        spec: SpecFormerConfig {
            num_layers: 1,
            heads: 2,
            d_model: 8,
            d_key: 8,
            ffn_hidden: 8,
            lengths: [12; 3],
            patches: [PatchConfig::new(4, 2); 3],
            mask_ratio: 0.1,
            dropped: Vec::new(),
        },
        mol: Encoder3dConfig {
            d_model: 8,
            num_layers: 1,
            cutoff: 5.0,
            rbf: 4,
        },
        ..TrainConfig::stage2()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub weights: [f64; 3],
    pub max_rel_err: f64,
    pub worst_param: Option<String>,
    pub passed: bool,
}

impl SuiteEntry {
    fn new(name: &str, w: LossWeights, r: &GradReport) -> Self {
        Self {
            name: name.into(),
            weights: [w.denoising, w.mpr, w.contrast],
            max_rel_err: r.max_rel_err,
            worst_param: r.worst().map(|p| p.name.clone()),
            passed: r.passed,
        }
    }
}

/// Finite-difference check of every loss and of their weighted sum on two
/// toy molecules, with respect to all parameters of both encoders.
pub fn gradient_suite(seed: u64, eps: f64, tolerance: f64) -> Result<Vec<SuiteEntry>> {
    let base = toy_config(seed);
    let records: Vec<MoleculeRecord> = gen_synthetic(2, seed, &toy_grids(), 1);
    let refs: Vec<&MoleculeRecord> = records.iter().collect();
    let sets: Vec<[Spectrum; 3]> = records.iter().map(|r| r.spectra_triple()).collect::<Result<_>>()?;
    let set_refs: Vec<&[Spectrum; 3]> = sets.iter().collect();
    let inputs = StepInputs::build(&base, &refs, Some(&set_refs), 0)?;
    let cases = [
        ("denoising", LossWeights { denoising: 1.0, mpr: 0.0, contrast: 0.0 }),
        ("mpr", LossWeights { denoising: 0.0, mpr: 1.0, contrast: 0.0 }),
        ("contrast", LossWeights { denoising: 0.0, mpr: 0.0, contrast: 1.0 }),
        ("total", LossWeights { denoising: 1.0, mpr: 0.5, contrast: 2.0 }),
    ];
    let model = Model::new(&base)?;
    let mut out = Vec::with_capacity(cases.len());
    for (name, weights) in cases {
        let cfg = TrainConfig { weights, ..base.clone() };
        let report = grad_check(&model.store, Mode::Train, eps, tolerance, |ctx| {
            Ok(forward_losses(ctx, &model, &cfg, &inputs)?.total)
        })?;
        out.push(SuiteEntry::new(name, weights, &report));
    }
    Ok(out)
}
