use crate::error::{Error, Result};
use crate::numerics::{
    normal, uniform, xavier_uniform, AttentionLayout, BatchNorm, ForwardCtx, Linear, Mode, ParamId, ParamStore,
    Tape, Tensor, Var,
};
use crate::rng::Rng;
use crate::spectra::{MaskPlan, PatchSequence, SpectrumKind};

use super::attention::AttentionMap;
use super::batch::SpectraBatch;
use super::config::SpecFormerConfig;

#[derive(Clone, Debug)]
struct Block {
    wq: Vec<ParamId>,
    wk: Vec<ParamId>,
    wv: Vec<ParamId>,
    wo: ParamId,
    bn1: BatchNorm,
    ffn1: Linear,
    ffn2: Linear,
    bn2: BatchNorm,
}

/// Parameter handles of the multi-spectrum encoder. Values live in a
/// [`ParamStore`] under the `spec.` prefix.
#[derive(Clone, Debug)]
pub struct SpecFormer {
    pub config: SpecFormerConfig,
    counts: [usize; 3],
    offsets: [usize; 4],
    patch_proj: [ParamId; 3],
    pos: [ParamId; 3],
    blocks: Vec<Block>,
    proj: Linear,
    heads: [Linear; 3],
}

/// Token embeddings of one molecule with the `(kind, patch)` origin of
/// every row.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub embeddings: Tensor,
    pub provenance: Vec<(SpectrumKind, usize)>,
}

/// Nodes produced by one forward pass.
pub struct SpecFormerOutput<'t> {
    /// `(B·T) × d` tokens before the first block.
    pub embedded: Var<'t>,
    /// `(B·T) × d` tokens after the last block.
    pub tokens: Var<'t>,
    /// `B × d`.
    pub z_s: Var<'t>,
    /// Fused attention node of each layer.
    pub attention: Vec<Var<'t>>,
}

/// Reconstructions of the masked patches of one kind across a batch.
pub struct Reconstruction<'t> {
    pub kind: SpectrumKind,
    /// `M × P` predictions, one row per masked patch.
    pub pred: Var<'t>,
    /// `M × P` unmasked originals.
    pub target: Tensor,
    /// Molecule of each row.
    pub owners: Vec<usize>,
    /// Patch index of each row.
    pub patches: Vec<usize>,
    pub batch_size: usize,
}

/// Detached results of [`SpecFormer::encode`].
#[derive(Clone, Debug)]
pub struct Encoded {
    pub tokens: Tensor,
    pub z_s: Tensor,
    pub attention: AttentionMap,
    tokens_per_molecule: usize,
    provenance: Vec<(SpectrumKind, usize)>,
}

impl Encoded {
    pub fn molecule_tokens(&self, b: usize) -> TokenSequence {
        let (t, d) = (self.tokens_per_molecule, self.tokens.cols());
        let data = self.tokens.data()[b * t * d..(b + 1) * t * d].to_vec();
        TokenSequence {
            embeddings: Tensor::matrix(t, d, data).expect("token block"),
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructedPatch {
    pub kind: SpectrumKind,
    pub patch: usize,
    pub values: Vec<f64>,
}

impl SpecFormer {
    pub fn new(config: SpecFormerConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let counts = config.counts()?;
        let offsets = config.offsets()?;
        let (d, dk, dv) = (config.d_model, config.d_key, config.value_width());
        let patch_proj = SpectrumKind::ALL.map(|k| {
            let p = config.patch(k).patch_len;
            store.add(format!("spec.patch.{}", k.key()), uniform(rng, [p, d], (1.0 / p as f64).sqrt()))
        });
        let pos = SpectrumKind::ALL
            .map(|k| store.add(format!("spec.pos.{}", k.key()), normal(rng, [counts[k.index()], d], 0.02)));
        let mut blocks = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let mut head_params = |suffix: &str, width: usize, rng: &mut Rng| -> Vec<ParamId> {
                (0..config.heads)
                    .map(|h| store.add(format!("spec.layer{l}.head{h}.{suffix}"), xavier_uniform(rng, d, width)))
                    .collect()
            };
            let wq = head_params("wq", dk, rng);
            let wk = head_params("wk", dk, rng);
            let wv = head_params("wv", dv, rng);
            let wo = store.add(format!("spec.layer{l}.wo"), xavier_uniform(rng, d, d));
            let bn1 = BatchNorm::new(store, &format!("spec.layer{l}.bn1"), d);
            let ffn1 = Linear::new(store, &format!("spec.layer{l}.ffn1"), d, config.ffn_hidden, true, rng);
            let ffn2 = Linear::new(store, &format!("spec.layer{l}.ffn2"), config.ffn_hidden, d, false, rng);
            let bn2 = BatchNorm::new(store, &format!("spec.layer{l}.bn2"), d);
            blocks.push(Block {
                wq,
                wk,
                wv,
                wo,
                bn1,
                ffn1,
                ffn2,
                bn2,
            });
        }
        let proj = Linear::new(store, "spec.proj", offsets[3] * d, d, true, rng);
        let heads = SpectrumKind::ALL.map(|k| {
            let p = config.patch(k).patch_len;
            Linear::new(store, &format!("spec.head.{}", k.key()), d, p, true, rng)
        });
        Ok(Self {
            config,
            counts,
            offsets,
            patch_proj,
            pos,
            blocks,
            proj,
            heads,
        })
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn offsets(&self) -> [usize; 4] {
        self.offsets
    }

    pub fn tokens_per_molecule(&self) -> usize {
        self.offsets[3]
    }

    pub fn provenance(&self) -> Vec<(SpectrumKind, usize)> {
        SpectrumKind::ALL
            .iter()
            .flat_map(|&k| (0..self.counts[k.index()]).map(move |j| (k, j)))
            .collect()
    }

    pub fn position_encoding(&self, kind: SpectrumKind) -> ParamId {
        self.pos[kind.index()]
    }

    pub fn patch_projection(&self, kind: SpectrumKind) -> ParamId {
        self.patch_proj[kind.index()]
    }

    pub fn projection(&self) -> &Linear {
        &self.proj
    }

    pub fn reconstruction_head(&self, kind: SpectrumKind) -> &Linear {
        &self.heads[kind.index()]
    }

    /// Query, key and value weights of one head.
    pub fn head_weights(&self, layer: usize, head: usize) -> (ParamId, ParamId, ParamId) {
        let b = &self.blocks[layer];
        (b.wq[head], b.wk[head], b.wv[head])
    }

    fn check_batch(&self, batch: &SpectraBatch) -> Result<()> {
        for kind in SpectrumKind::ALL {
            let i = kind.index();
            let expected = [batch.size * self.counts[i], self.config.patch(kind).patch_len];
            if batch.counts[i] != self.counts[i] || batch.masked[i].shape() != expected {
                return Err(Error::Shape(format!(
                    "{kind} patches {:?} do not match the {} position rows of the model (expected {expected:?})",
                    batch.masked[i].shape(),
                    self.counts[i]
                )));
            }
        }
        Ok(())
    }

    /// `p_i W_i + W_i^pos` per kind, concatenated in kind order within each
    /// molecule. Rows are molecule-major: `b·T + offset_i + j`.
    pub fn embed<'t>(&self, ctx: &ForwardCtx<'t, '_>, batch: &SpectraBatch) -> Result<Var<'t>> {
        self.check_batch(batch)?;
        let (bs, d) = (batch.size, self.config.d_model);
        let mut parts = Vec::with_capacity(3);
        for kind in SpectrumKind::ALL {
            let i = kind.index();
            let n = self.counts[i];
            if !self.config.is_active(kind) {
                parts.push(ctx.constant(Tensor::zeros([bs * n, d])));
                continue;
            }
            let x = ctx.constant(batch.masked[i].clone()).matmul(ctx.param(self.patch_proj[i]));
            let tile: Vec<usize> = (0..bs).flat_map(|_| 0..n).collect();
            parts.push(x + ctx.param(self.pos[i]).gather_rows(tile));
        }
        let stacked = ctx.tape.concat_rows(&parts);
        let mut order = Vec::with_capacity(bs * self.offsets[3]);
        for b in 0..bs {
            for (i, &n) in self.counts.iter().enumerate() {
                let base = bs * self.offsets[i] + b * n;
                order.extend(base..base + n);
            }
        }
        Ok(stacked.gather_rows(order))
    }

    fn block<'t>(&self, ctx: &ForwardCtx<'t, '_>, blk: &Block, z: Var<'t>, groups: usize) -> (Var<'t>, Var<'t>) {
        let cat = |ids: &[ParamId]| {
            let vars: Vec<Var<'t>> = ids.iter().map(|&id| ctx.param(id)).collect();
            ctx.tape.concat_cols(&vars)
        };
        let layout = AttentionLayout {
            groups,
            seq: self.offsets[3],
            heads: self.config.heads,
            key_width: self.config.d_key,
            value_width: self.config.value_width(),
        };
        let q = z.matmul(cat(&blk.wq));
        let k = z.matmul(cat(&blk.wk));
        let v = z.matmul(cat(&blk.wv));
        let att = q.attention(k, v, layout);
        let z1 = blk.bn1.forward(ctx, z + att.matmul(ctx.param(blk.wo)));
        let ff = blk.ffn2.forward(ctx, blk.ffn1.forward(ctx, z1).silu());
        (blk.bn2.forward(ctx, z1 + ff), att)
    }

    pub fn forward<'t>(&self, ctx: &ForwardCtx<'t, '_>, batch: &SpectraBatch) -> Result<SpecFormerOutput<'t>> {
        let embedded = self.embed(ctx, batch)?;
        let mut z = embedded;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (next, att) = self.block(ctx, blk, z, batch.size);
            z = next;
            attention.push(att);
        }
        let flat = z.reshape([batch.size, self.offsets[3] * self.config.d_model]);
        let z_s = self.proj.forward(ctx, flat);
        Ok(SpecFormerOutput {
            embedded,
            tokens: z,
            z_s,
            attention,
        })
    }

    /// Applies each kind's head to the final tokens of its masked patches.
    /// Kinds that are dropped or have nothing masked are skipped.
    pub fn reconstruct<'t>(
        &self,
        ctx: &ForwardCtx<'t, '_>,
        tokens: Var<'t>,
        batch: &SpectraBatch,
    ) -> Vec<Reconstruction<'t>> {
        let t = self.offsets[3];
        let mut out = Vec::new();
        for kind in SpectrumKind::ALL {
            if !self.config.is_active(kind) {
                continue;
            }
            let i = kind.index();
            let (mut rows, mut owners, mut patches) = (Vec::new(), Vec::new(), Vec::new());
            for (b, plan) in batch.plans.iter().enumerate() {
                for &j in plan.get(kind) {
                    rows.push(b * t + self.offsets[i] + j);
                    owners.push(b);
                    patches.push(j);
                }
            }
            if rows.is_empty() {
                continue;
            }
            let p = batch.targets[i].cols();
            let mut target = Vec::with_capacity(rows.len() * p);
            for (&b, &j) in owners.iter().zip(&patches) {
                target.extend_from_slice(batch.targets[i].row(b * self.counts[i] + j));
            }
            let pred = self.heads[i].forward(ctx, tokens.gather_rows(rows));
            out.push(Reconstruction {
                kind,
                pred,
                target: Tensor::matrix(owners.len(), p, target).expect("targets"),
                owners,
                patches,
                batch_size: batch.size,
            });
        }
        out
    }

    /// Token embeddings before the first block for one molecule's (already
    /// masked) patch sequences.
    pub fn embed_patches(&self, store: &ParamStore, patches: &[PatchSequence; 3]) -> Result<TokenSequence> {
        let batch = SpectraBatch::from_patches(std::slice::from_ref(patches), vec![MaskPlan::empty(0.0, 0)])?;
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, store, Mode::Eval);
        let tokens = self.embed(&ctx, &batch)?;
        Ok(TokenSequence {
            embeddings: (*tokens.value()).clone(),
            provenance: self.provenance(),
        })
    }

    /// Forward pass without gradients. Running statistics are not updated.
    pub fn encode(&self, store: &ParamStore, mode: Mode, batch: &SpectraBatch) -> Result<Encoded> {
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, store, mode);
        let out = self.forward(&ctx, batch)?;
        let attention = AttentionMap::from_tape(&tape, &out.attention, self.offsets)?;
        Ok(Encoded {
            tokens: (*out.tokens.value()).clone(),
            z_s: (*out.z_s.value()).clone(),
            attention,
            tokens_per_molecule: self.offsets[3],
            provenance: self.provenance(),
        })
    }

    /// Reconstructs the patches named by `plan` from one molecule's final
    /// tokens.
    pub fn reconstruct_masked(
        &self,
        store: &ParamStore,
        tokens: &TokenSequence,
        plan: &MaskPlan,
    ) -> Result<Vec<ReconstructedPatch>> {
        if plan.is_empty() {
            return Err(Error::InvalidArgument("reconstruction needs a nonempty mask plan".into()));
        }
        let expected = [self.offsets[3], self.config.d_model];
        if tokens.embeddings.shape() != expected {
            return Err(Error::Shape(format!(
                "tokens {:?}, expected {expected:?}",
                tokens.embeddings.shape()
            )));
        }
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, store, Mode::Eval);
        let z = ctx.constant(tokens.embeddings.clone());
        let mut out = Vec::with_capacity(plan.total());
        for kind in SpectrumKind::ALL {
            let i = kind.index();
            let idx = plan.get(kind);
            if let Some(&j) = idx.iter().find(|&&j| j >= self.counts[i]) {
                return Err(Error::InvalidArgument(format!(
                    "masked {kind} patch {j} out of range for {} patches",
                    self.counts[i]
                )));
            }
            if idx.is_empty() {
                continue;
            }
            let rows: Vec<usize> = idx.iter().map(|j| self.offsets[i] + j).collect();
            let pred = self.heads[i].forward(&ctx, z.gather_rows(rows)).value();
            for (r, &j) in idx.iter().enumerate() {
                out.push(ReconstructedPatch {
                    kind,
                    patch: j,
                    values: pred.row(r).to_vec(),
                });
            }
        }
        Ok(out)
    }
}

/// One attention head over a single token sequence, built from primitive
/// tape ops: `softmax(Q Kᵀ / sqrt(d_k)) V`. Returns the head output and the
/// attention matrix.
pub fn attention_head<'t>(tokens: Var<'t>, wq: Var<'t>, wk: Var<'t>, wv: Var<'t>) -> (Var<'t>, Var<'t>) {
    let dk = wq.shape()[1];
    let q = tokens.matmul(wq);
    let k = tokens.matmul(wk);
    let v = tokens.matmul(wv);
    let probs = q.matmul(k.transpose()).scale(1.0 / (dk as f64).sqrt()).softmax_rows();
    (probs.matmul(v), probs)
}
