use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{PatchConfig, SpectrumKind};

use super::checkpoint::{restore_model, Checkpoint};
use super::config::TrainConfig;
use super::dataset::MoleculeRecord;
use super::retrieval::eval_retrieval;
use super::train::pretrain_stage2;

/// Sweeps over stage-2 settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationTable {
    /// Stride/patch-length pairs.
    PatchStride,
    MaskRatio,
    /// Removing the reconstruction and contrastive terms.
    Objectives,
    /// Zero-filling one spectrum kind at a time.
    Modality,
}

impl AblationTable {
    pub const ALL: [AblationTable; 4] = [Self::PatchStride, Self::MaskRatio, Self::Objectives, Self::Modality];

    pub fn key(self) -> &'static str {
        match self {
            Self::PatchStride => "patch-stride",
            Self::MaskRatio => "mask-ratio",
            Self::Objectives => "objectives",
            Self::Modality => "modality",
        }
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for AblationTable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.key() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation table '{s}'")))
    }
}

/// `(stride, patch_len)` pairs of the patching sweep.
pub const STRIDE_PATCH_PAIRS: [(usize, usize); 6] = [(5, 20), (10, 20), (15, 20), (20, 20), (8, 16), (15, 30)];
pub const MASK_RATIOS: [f64; 6] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationVariant {
    pub table: AblationTable,
    pub name: String,
    pub config: TrainConfig,
}

/// The variants of `table`, each a copy of the stage-2 config `base` with
/// one setting changed.
pub fn ablation_variants(table: AblationTable, base: &TrainConfig) -> Vec<AblationVariant> {
    let variant = |name: String, edit: &dyn Fn(&mut TrainConfig)| {
        let mut config = base.clone();
        edit(&mut config);
        AblationVariant { table, name, config }
    };
    match table {
        AblationTable::PatchStride => STRIDE_PATCH_PAIRS
            .iter()
            .map(|&(d, p)| variant(format!("{d}/{p}"), &|c| c.spec.patches = [PatchConfig::new(p, d); 3]))
            .collect(),
        AblationTable::MaskRatio => MASK_RATIOS
            .iter()
            .map(|&a| variant(format!("{a:.2}"), &|c| c.spec.mask_ratio = a))
            .collect(),
        AblationTable::Objectives => vec![
            variant("full".into(), &|_| {}),
            variant("w/o MPR".into(), &|c| c.weights.mpr = 0.0),
            variant("w/o MPR, Contrast".into(), &|c| {
                c.weights.mpr = 0.0;
                c.weights.contrast = 0.0;
            }),
        ],
        AblationTable::Modality => std::iter::once(variant("full".into(), &|_| {}))
            .chain(SpectrumKind::ALL.iter().map(|&k| {
                variant(format!("w/o {k}"), &|c| {
                    c.spec.dropped = vec![k];
                })
            }))
            .collect(),
    }
}

/// One trained and evaluated variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub table: AblationTable,
    pub variant: String,
    pub patch_len: usize,
    pub stride: usize,
    pub mask_ratio: f64,
    pub weights: [f64; 3],
    pub dropped: Vec<SpectrumKind>,
    pub final_denoising: f64,
    pub final_mpr: f64,
    pub final_contrast: f64,
    pub final_total: f64,
    pub structure_to_spectra: f64,
    pub spectra_to_structure: f64,
}

/// Runs stage 2 from `init` for every variant of `table`, then evaluates
/// retrieval on `holdout` with batches of `eval_batch`.
pub fn run_ablation(
    table: AblationTable,
    base: &TrainConfig,
    train: &[MoleculeRecord],
    holdout: &[MoleculeRecord],
    init: &Checkpoint,
    eval_batch: usize,
) -> Result<Vec<AblationRow>> {
    if base.stage != 2 {
        return Err(Error::Config("ablations sweep stage-2 configs".into()));
    }
    let mut rows = Vec::new();
    for v in ablation_variants(table, base) {
        log::info!("ablation {table}: variant {}", v.name);
        let out = pretrain_stage2(train, init, &v.config)?;
        let last = out
            .metrics
            .last()
            .copied()
            .ok_or_else(|| Error::Config("ablation runs need at least one step".into()))?;
        let model = restore_model(&out.checkpoint)?;
        let r = eval_retrieval(&model, holdout, eval_batch, v.config.seed)?;
        let p = v.config.spec.patches[0];
        rows.push(AblationRow {
            table,
            variant: v.name,
            patch_len: p.patch_len,
            stride: p.stride,
            mask_ratio: v.config.spec.mask_ratio,
            weights: [v.config.weights.denoising, v.config.weights.mpr, v.config.weights.contrast],
            dropped: v.config.spec.dropped.clone(),
            final_denoising: last.denoising,
            final_mpr: last.mpr,
            final_contrast: last.contrast,
            final_total: last.total,
            structure_to_spectra: r.structure_to_spectra,
            spectra_to_structure: r.spectra_to_structure,
        });
    }
    Ok(rows)
}

pub const ABLATION_CSV_HEADER: &str = "table,variant,patch_len,stride,mask_ratio,beta_denoising,beta_mpr,beta_contrast,dropped,final_denoising,final_mpr,final_contrast,final_total,structure_to_spectra,spectra_to_structure";

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{ABLATION_CSV_HEADER}").expect("write to memory");
    for r in rows {
        let dropped: Vec<&str> = r.dropped.iter().map(|k| k.key()).collect();
        writeln!(
            out,
            "{},\"{}\",{},{},{:?},{:?},{:?},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.table,
            r.variant,
            r.patch_len,
            r.stride,
            r.mask_ratio,
            r.weights[0],
            r.weights[1],
            r.weights[2],
            dropped.join(";"),
            r.final_denoising,
            r.final_mpr,
            r.final_contrast,
            r.final_total,
            r.structure_to_spectra,
            r.spectra_to_structure
        )
        .expect("write to memory");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
