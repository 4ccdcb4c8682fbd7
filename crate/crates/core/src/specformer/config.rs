use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{patch_count, GridSet, PatchConfig, SpectrumKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecFormerConfig {
    pub num_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Per-head query/key width.
    pub d_key: usize,
    pub ffn_hidden: usize,
    /// Spectrum lengths in [`SpectrumKind::ALL`] order.
    pub lengths: [usize; 3],
    pub patches: [PatchConfig; 3],
    pub mask_ratio: f64,
    /// Kinds whose tokens are zero-filled and excluded from reconstruction.
    pub dropped: Vec<SpectrumKind>,
}

impl Default for SpecFormerConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            heads: 16,
            d_model: 256,
            d_key: 256,
            ffn_hidden: 512,
            lengths: GridSet::full().lengths(),
            patches: [PatchConfig::new(20, 10); 3],
            mask_ratio: 0.10,
            dropped: Vec::new(),
        }
    }
}

impl SpecFormerConfig {
    /// Small model on the 120-point grids.
    pub fn desk() -> Self {
        Self {
            num_layers: 2,
            heads: 4,
            d_model: 32,
            d_key: 32,
            ffn_hidden: 64,
            lengths: GridSet::desk().lengths(),
            patches: [PatchConfig::new(12, 6); 3],
            ..Self::default()
        }
    }

    pub fn value_width(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn patch(&self, kind: SpectrumKind) -> PatchConfig {
        self.patches[kind.index()]
    }

    pub fn is_active(&self, kind: SpectrumKind) -> bool {
        !self.dropped.contains(&kind)
    }

    /// Patch count of each kind.
    pub fn counts(&self) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for kind in SpectrumKind::ALL {
            out[kind.index()] = patch_count(self.lengths[kind.index()], self.patch(kind))
                .map_err(|e| Error::Config(format!("{kind}: {e}")))?;
        }
        Ok(out)
    }

    /// Token offsets of each kind plus the total, e.g. `[0, 59, 408, 757]`.
    pub fn offsets(&self) -> Result<[usize; 4]> {
        let n = self.counts()?;
        Ok([0, n[0], n[0] + n[1], n[0] + n[1] + n[2]])
    }

    pub fn tokens(&self) -> Result<usize> {
        Ok(self.offsets()?[3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be at least 1".into()));
        }
        if self.heads == 0 || self.d_model == 0 || self.d_key == 0 || self.ffn_hidden == 0 {
            return Err(Error::Config("model widths and head count must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask ratio {} outside [0, 1)", self.mask_ratio)));
        }
        if SpectrumKind::ALL.iter().all(|k| !self.is_active(*k)) {
            return Err(Error::Config("all spectrum kinds are dropped".into()));
        }
        self.counts().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = SpecFormerConfig::default();
        c.validate().unwrap();
        assert_eq!((c.num_layers, c.heads, c.d_model, c.d_key), (3, 16, 256, 256));
        assert_eq!(c.offsets().unwrap(), [0, 59, 408, 757]);
        assert_eq!(c.value_width(), 16);
    }

    #[test]
    fn desk_tokens() {
        let c = SpecFormerConfig::desk();
        c.validate().unwrap();
        assert_eq!(c.counts().unwrap(), [19, 19, 19]);
    }

    #[test]
    fn rejects_bad_widths() {
        let c = SpecFormerConfig {
            heads: 5,
            ..SpecFormerConfig::desk()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = SpecFormerConfig {
            patches: [PatchConfig::new(200, 10); 3],
            ..SpecFormerConfig::desk()
        };
        assert!(c.validate().is_err());
    }
}
