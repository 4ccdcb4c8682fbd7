use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder3d::{Molecule, Topology, Vec3};
use crate::error::{Error, Result};
use crate::spectra::{GridSet, Spectrum, SpectrumKind};

/// Preprocessed spectra of one molecule; each kind may be absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectraSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uv_vis: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ir: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raman: Option<Vec<f64>>,
}

impl SpectraSet {
    pub fn get(&self, kind: SpectrumKind) -> Option<&Vec<f64>> {
        match kind {
            SpectrumKind::UvVis => self.uv_vis.as_ref(),
            SpectrumKind::Ir => self.ir.as_ref(),
            SpectrumKind::Raman => self.raman.as_ref(),
        }
    }

    pub fn set(&mut self, kind: SpectrumKind, values: Vec<f64>) {
        let slot = match kind {
            SpectrumKind::UvVis => &mut self.uv_vis,
            SpectrumKind::Ir => &mut self.ir,
            SpectrumKind::Raman => &mut self.raman,
        };
        *slot = Some(values);
    }
}

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculeRecord {
    pub id: String,
    pub atoms: Vec<u8>,
    pub coords: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectra: Option<SpectraSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Topology>,
}

impl MoleculeRecord {
    /// Checks the structure and, when present, every spectrum against `grids`.
    pub fn validate(&self, grids: &GridSet) -> Result<()> {
        let mol = Molecule {
            atoms: self.atoms.clone(),
            coords: self.coords.clone(),
            topology: self.topology.clone(),
        };
        mol.validate()?;
        if let Some(set) = &self.spectra {
            for kind in SpectrumKind::ALL {
                if let Some(v) = set.get(kind) {
                    grids.check(&Spectrum::new(kind, v.clone()))?;
                    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::NonFinite(format!("{kind} intensity at index {i}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// All three spectra in [`SpectrumKind::ALL`] order, or an error naming
    /// the first missing kind.
    pub fn spectra_triple(&self) -> Result<[Spectrum; 3]> {
        let set = self
            .spectra
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("record '{}' has no spectra", self.id)))?;
        let mut out = Vec::with_capacity(3);
        for kind in SpectrumKind::ALL {
            let v = set
                .get(kind)
                .ok_or_else(|| Error::Dataset(format!("record '{}' lacks its {kind} spectrum", self.id)))?;
            out.push(Spectrum::new(kind, v.clone()));
        }
        Ok(out.try_into().expect("three kinds"))
    }
}

/// A line that failed to parse or validate.
#[derive(Clone, Debug, PartialEq)]
pub struct RejectedLine {
    /// 1-based.
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadedDataset {
    pub records: Vec<MoleculeRecord>,
    pub rejected: Vec<RejectedLine>,
}

impl LoadedDataset {
    /// The records, or a dataset error listing every rejected line.
    pub fn into_strict(self) -> Result<Vec<MoleculeRecord>> {
        if self.rejected.is_empty() {
            return Ok(self.records);
        }
        let lines: Vec<String> = self
            .rejected
            .iter()
            .map(|r| format!("line {}: {}", r.line, r.message))
            .collect();
        Err(Error::Dataset(lines.join("; ")))
    }
}

/// Reads a JSON-lines dataset. Blank lines are skipped; malformed or
/// invalid lines are collected with their line numbers rather than
/// aborting the read.
pub fn load_jsonl(path: &Path, grids: &GridSet) -> Result<LoadedDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = LoadedDataset::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<MoleculeRecord>(&line)
            .map_err(Error::from)
            .and_then(|r| r.validate(grids).map(|_| r));
        match parsed {
            Ok(r) => out.records.push(r),
            Err(e) => out.rejected.push(RejectedLine {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    if out.records.is_empty() && out.rejected.is_empty() {
        log::warn!("{} contains no records", path.display());
    }
    for r in &out.rejected {
        log::warn!("{}:{}: {}", path.display(), r.line, r.message);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[MoleculeRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
