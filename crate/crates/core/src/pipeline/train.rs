use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::encoder3d::{add_coord_noise_with, GraphBatch, Vec3};
use crate::error::{Error, Result};
use crate::numerics::{ForwardCtx, Mode, Tape, Tensor, Var};
use crate::objectives::{loss_denoising, loss_infonce, loss_mpr, loss_total, weighted_total, LossBreakdown};
use crate::rng::rng_for;
use crate::specformer::SpectraBatch;
use crate::spectra::{mask_seed, Spectrum};

use super::checkpoint::Checkpoint;
use super::config::{Model, TrainConfig};
use super::dataset::MoleculeRecord;

/// Dataset indices of training step `step`.
///
/// Each epoch visits a fresh permutation (stream `"epoch/{e}"`) in
/// consecutive blocks of `min(batch_size, n)`; the remainder of an epoch
/// is skipped. Depends only on its arguments.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Dataset("dataset contains no molecules".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let bs = batch_size.min(n);
    let per_epoch = (n / bs) as u64;
    let (epoch, t) = (step / per_epoch, (step % per_epoch) as usize);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_for(seed, &format!("epoch/{epoch}")));
    Ok(perm[t * bs..(t + 1) * bs].to_vec())
}

/// Inputs of one training step.
pub struct StepInputs {
    pub graph: GraphBatch,
    /// `n × 3` coordinate perturbations, the denoising targets.
    pub targets: Tensor,
    pub spectra: Option<SpectraBatch>,
}

impl StepInputs {
    /// Perturbs the structures with the stream `"noise/{step}"` and, for
    /// stage 2, masks the spectra with plans from [`mask_seed`].
    pub fn build(cfg: &TrainConfig, records: &[&MoleculeRecord], spectra: Option<&[&[Spectrum; 3]]>, step: u64) -> Result<Self> {
        let mut rng = rng_for(cfg.seed, &format!("noise/{step}"));
        let mut noisy: Vec<Vec<Vec3>> = Vec::with_capacity(records.len());
        let mut targets = Vec::new();
        for r in records {
            let s = add_coord_noise_with(&r.coords, cfg.noise, &mut rng)?;
            targets.extend(s.noise.iter().flatten());
            noisy.push(s.noisy);
        }
        let mols: Vec<(&[u8], &[Vec3])> = records
            .iter()
            .zip(&noisy)
            .map(|(r, x)| (r.atoms.as_slice(), x.as_slice()))
            .collect();
        let graph = GraphBatch::new(&cfg.mol, &mols)?;
        let n = graph.num_atoms();
        let spectra = match spectra {
            Some(sets) => {
                let seeds: Vec<u64> = (0..sets.len()).map(|k| mask_seed(cfg.seed, step, k)).collect();
                Some(SpectraBatch::build(&cfg.spec, sets, &seeds)?)
            }
            None => None,
        };
        Ok(Self {
            graph,
            targets: Tensor::matrix(n, 3, targets)?,
            spectra,
        })
    }
}

/// Loss nodes of one forward pass; terms that were not computed are `None`.
pub struct StepLosses<'t> {
    pub total: Var<'t>,
    pub denoising: Var<'t>,
    pub mpr: Option<Var<'t>>,
    pub contrast: Option<Var<'t>>,
}

impl StepLosses<'_> {
    pub fn breakdown(&self, step: u64, cfg: &TrainConfig) -> LossBreakdown {
        let v = |x: Option<Var<'_>>| x.map_or(0.0, |x| x.item());
        loss_total(step, self.denoising.item(), v(self.mpr), v(self.contrast), &cfg.weights)
    }
}

/// Denoising on the 3D encoder and, when spectra are present, masked patch
/// reconstruction and the contrastive term, combined with `cfg.weights`.
pub fn forward_losses<'t>(ctx: &ForwardCtx<'t, '_>, model: &Model, cfg: &TrainConfig, inputs: &StepInputs) -> Result<StepLosses<'t>> {
    let out = model.mol.forward(ctx, &inputs.graph);
    let denoising = loss_denoising(out.node_pred, &inputs.targets, &inputs.graph.owner)?;
    let (mut mpr, mut contrast) = (None, None);
    if let Some(batch) = &inputs.spectra {
        let spec = model.spec()?;
        let sout = spec.forward(ctx, batch)?;
        let recons = spec.reconstruct(ctx, sout.tokens, batch);
        if !recons.is_empty() {
            mpr = Some(loss_mpr(&recons)?);
        }
        contrast = Some(loss_infonce(out.z_x, sout.z_s, cfg.temperature)?);
    }
    let total = weighted_total(&[
        (cfg.weights.denoising, Some(denoising)),
        (cfg.weights.mpr, mpr),
        (cfg.weights.contrast, contrast),
    ])?;
    Ok(StepLosses {
        total,
        denoising,
        mpr,
        contrast,
    })
}

/// Model, configuration and global step of a training run.
pub struct Trainer<'d> {
    pub model: Model,
    pub config: TrainConfig,
    pub step: u64,
    data: &'d [MoleculeRecord],
    spectra: Vec<[Spectrum; 3]>,
}

impl<'d> Trainer<'d> {
    /// Starts from fresh parameters, or from `init`: a checkpoint of the
    /// same stage resumes it, a stage-1 checkpoint seeds the 3D encoder of
    /// a stage-2 run. The global step continues from `init`.
    pub fn new(cfg: &TrainConfig, data: &'d [MoleculeRecord], init: Option<&Checkpoint>) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Dataset("dataset contains no molecules".into()));
        }
        let grids = cfg.grids();
        let spectra = if cfg.stage == 2 {
            let grids = grids?;
            data.iter()
                .map(|r| {
                    let set = r.spectra_triple()?;
                    set.iter().try_for_each(|s| grids.check(s))?;
                    Ok(set)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let mut model = Model::new(cfg)?;
        let mut step = 0;
        if let Some(ck) = init {
            if ck.stage > cfg.stage {
                return Err(Error::Checkpoint(format!(
                    "a stage-{} checkpoint cannot initialise stage {}",
                    ck.stage, cfg.stage
                )));
            }
            let fresh: &[&str] = if ck.stage < cfg.stage { &["spec."] } else { &[] };
            ck.load_into(&mut model.store, fresh)?;
            step = ck.step;
        }
        Ok(Self {
            model,
            config: cfg.clone(),
            step,
            data,
            spectra,
        })
    }

    pub fn inputs(&self, step: u64) -> Result<StepInputs> {
        let idx = batch_indices(self.data.len(), self.config.batch_size, self.config.seed, step)?;
        let records: Vec<&MoleculeRecord> = idx.iter().map(|&i| &self.data[i]).collect();
        let sets: Vec<&[Spectrum; 3]> = if self.config.stage == 2 {
            idx.iter().map(|&i| &self.spectra[i]).collect()
        } else {
            Vec::new()
        };
        let spectra = (self.config.stage == 2).then_some(sets.as_slice());
        StepInputs::build(&self.config, &records, spectra, step)
    }

    /// One gradient step; returns the losses evaluated before the update.
    pub fn train_step(&mut self) -> Result<LossBreakdown> {
        let inputs = self.inputs(self.step)?;
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, &self.model.store, Mode::Train);
        let losses = forward_losses(&ctx, &self.model, &self.config, &inputs)?;
        let breakdown = losses.breakdown(self.step, &self.config);
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", self.step)));
        }
        let update = ctx.finish(losses.total);
        update.apply(&mut self.model.store);
        self.model.store.sgd_step(self.config.lr, self.config.clip)?;
        self.step += 1;
        Ok(breakdown)
    }

    pub fn run(&mut self, steps: u64) -> Result<Vec<LossBreakdown>> {
        let mut log = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let b = self.train_step()?;
            let level = if (b.step + 1) % 50 == 0 { log::Level::Info } else { log::Level::Debug };
            log::log!(
                level,
                "step {} total {:.6} denoising {:.6} mpr {:.6} contrast {:.6}",
                b.step,
                b.total,
                b.denoising,
                b.mpr,
                b.contrast
            );
            log.push(b);
        }
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.model, &self.config, self.step)
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<LossBreakdown>,
}

/// Denoising-only training for `cfg.steps` steps. Spectra in `dataset`
/// are ignored.
pub fn pretrain_stage1(dataset: &[MoleculeRecord], cfg: &TrainConfig, init: Option<&Checkpoint>) -> Result<RunOutput> {
    if cfg.stage != 1 {
        return Err(Error::Config(format!("stage-1 training needs stage 1, got {}", cfg.stage)));
    }
    let mut t = Trainer::new(cfg, dataset, init)?;
    let metrics = t.run(cfg.steps)?;
    Ok(RunOutput {
        checkpoint: t.checkpoint(),
        metrics,
    })
}

/// Joint training of both encoders for `cfg.steps` steps, starting from a
/// stage-1 checkpoint or resuming a stage-2 one.
pub fn pretrain_stage2(dataset: &[MoleculeRecord], init: &Checkpoint, cfg: &TrainConfig) -> Result<RunOutput> {
    if cfg.stage != 2 {
        return Err(Error::Config(format!("stage-2 training needs stage 2, got {}", cfg.stage)));
    }
    let mut t = Trainer::new(cfg, dataset, Some(init))?;
    let metrics = t.run(cfg.steps)?;
    Ok(RunOutput {
        checkpoint: t.checkpoint(),
        metrics,
    })
}

/// CSV `step,denoising,mpr,contrast,total` with round-trip float formatting.
pub fn write_metrics_csv(path: &Path, metrics: &[LossBreakdown]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "step,denoising,mpr,contrast,total").expect("write to memory");
    for m in metrics {
        writeln!(out, "{},{:?},{:?},{:?},{:?}", m.step, m.denoising, m.mpr, m.contrast, m.total).expect("write to memory");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
