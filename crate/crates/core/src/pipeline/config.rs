use serde::{Deserialize, Serialize};

use crate::encoder3d::{Encoder3d, Encoder3dConfig};
use crate::error::{Error, Result};
use crate::numerics::ParamStore;
use crate::objectives::LossWeights;
use crate::rng::rng_for;
use crate::specformer::{SpecFormer, SpecFormerConfig};
use crate::spectra::GridSet;

/// Model and data size presets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Small encoders on 120-point spectra.
    #[default]
    Desk,
    /// Full-width encoders on full-resolution spectra.
    Full,
}

impl Scale {
    pub fn grids(self) -> GridSet {
        match self {
            Scale::Desk => GridSet::desk(),
            Scale::Full => GridSet::full(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: u8,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Global gradient-norm bound; `None` leaves gradients unscaled.
    pub clip: Option<f64>,
    pub seed: u64,
    pub weights: LossWeights,
    /// Coordinate noise scale τ in Å.
    pub noise: f64,
    pub temperature: f64,
    pub spec: SpecFormerConfig,
    pub mol: Encoder3dConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::stage1()
    }
}

impl TrainConfig {
    /// Denoising-only pre-training on the desk-scale model.
    pub fn stage1() -> Self {
        Self {
            stage: 1,
            steps: 300,
            batch_size: 16,
            lr: 1e-3,
            clip: None,
            seed: 0,
            weights: LossWeights::denoising_only(),
            noise: 0.04,
            temperature: 1.0,
            spec: SpecFormerConfig::desk(),
            mol: Encoder3dConfig::desk(),
        }
    }

    /// Joint pre-training with all three objectives.
    pub fn stage2() -> Self {
        Self {
            stage: 2,
            steps: 500,
            weights: LossWeights::default(),
            ..Self::stage1()
        }
    }

    /// Stage-1 or stage-2 defaults at the given scale.
    pub fn preset(scale: Scale, stage: u8) -> Self {
        let mut c = if stage == 2 { Self::stage2() } else { Self::stage1() };
        c.stage = stage;
        if scale == Scale::Full {
            c.batch_size = 128;
            c.spec = SpecFormerConfig::default();
            c.mol = Encoder3dConfig::default();
        }
        c
    }

    /// Grids matching the configured spectrum lengths, when they are one of
    /// the two built-in sets.
    pub fn grids(&self) -> Result<GridSet> {
        [GridSet::desk(), GridSet::full()]
            .into_iter()
            .find(|g| g.lengths() == self.spec.lengths)
            .ok_or_else(|| {
                Error::Config(format!(
                    "spectrum lengths {:?} match neither the desk nor the full grids",
                    self.spec.lengths
                ))
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage != 1 && self.stage != 2 {
            return Err(Error::Config(format!("stage {} must be 1 or 2", self.stage)));
        }
        self.weights.validate()?;
        if self.stage == 1 && (self.weights.mpr != 0.0 || self.weights.contrast != 0.0) {
            return Err(Error::Config(format!(
                "stage 1 trains on structures only; mpr weight {} and contrast weight {} must be 0",
                self.weights.mpr, self.weights.contrast
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip {c} must be positive")));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise {} must be finite and >= 0", self.noise)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        self.mol.validate()?;
        if self.stage == 2 {
            self.spec.validate()?;
        }
        Ok(())
    }
}

/// Both encoders and their parameters. The spectrum encoder exists only
/// for stage 2.
#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore,
    pub mol: Encoder3d,
    pub spec: Option<SpecFormer>,
}

impl Model {
    /// Fresh parameters drawn from streams derived from `cfg.seed`.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mol = Encoder3d::new(cfg.mol.clone(), &mut store, &mut rng_for(cfg.seed, "init/mol"))?;
        let spec = if cfg.stage == 2 {
            Some(SpecFormer::new(cfg.spec.clone(), &mut store, &mut rng_for(cfg.seed, "init/spec"))?)
        } else {
            None
        };
        Ok(Self { store, mol, spec })
    }

    pub fn spec(&self) -> Result<&SpecFormer> {
        self.spec
            .as_ref()
            .ok_or_else(|| Error::Config("model has no spectrum encoder (stage-1 model)".into()))
    }
}
