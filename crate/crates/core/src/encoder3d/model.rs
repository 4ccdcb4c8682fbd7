use std::f64::consts::PI;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{normal, ForwardCtx, Linear, Mode, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::Rng;

use super::geometry::{check_finite, norm, sub, Vec3};

pub const MAX_ATOMIC_NUMBER: usize = 118;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Encoder3dConfig {
    pub d_model: usize,
    pub num_layers: usize,
    /// Radius-graph cutoff in Å.
    pub cutoff: f64,
    pub rbf: usize,
}

impl Default for Encoder3dConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            num_layers: 4,
            cutoff: 5.0,
            rbf: 16,
        }
    }
}

impl Encoder3dConfig {
    pub fn desk() -> Self {
        Self {
            d_model: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.num_layers == 0 || self.rbf < 2 {
            return Err(Error::Config(
                "3D encoder needs d_model >= 1, num_layers >= 1 and rbf >= 2".into(),
            ));
        }
        if !(self.cutoff > 0.0) {
            return Err(Error::Config(format!("cutoff {} must be positive", self.cutoff)));
        }
        Ok(())
    }
}

/// Several molecules as one disjoint graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub molecules: usize,
    pub atoms: Vec<usize>,
    /// Molecule of every atom.
    pub owner: Vec<usize>,
    pub sizes: Vec<usize>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// `E × rbf` Gaussian radial features of the edge length.
    rbf: Tensor,
    /// `E × 1` cosine cutoff envelope.
    envelope: Tensor,
    /// `E × 3` relative positions `x_dst − x_src`.
    rel: Tensor,
    /// `n × 1` inverse in-degree (0 for isolated atoms).
    inv_deg: Tensor,
    /// `B × 1` inverse molecule size.
    inv_size: Tensor,
}

impl GraphBatch {
    pub fn new(cfg: &Encoder3dConfig, molecules: &[(&[u8], &[Vec3])]) -> Result<Self> {
        if molecules.is_empty() {
            return Err(Error::InvalidArgument("empty molecule batch".into()));
        }
        let (mut atoms, mut owner, mut sizes, mut pos) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        for (b, &(z, x)) in molecules.iter().enumerate() {
            if z.is_empty() || z.len() != x.len() {
                return Err(Error::Shape(format!(
                    "molecule {b}: {} atomic numbers, {} positions",
                    z.len(),
                    x.len()
                )));
            }
            check_finite(x)?;
            let base = atoms.len();
            for &zi in z {
                if !(1..=MAX_ATOMIC_NUMBER).contains(&(zi as usize)) {
                    return Err(Error::InvalidArgument(format!("atomic number {zi} outside 1..=118")));
                }
                atoms.push(zi as usize - 1);
                owner.push(b);
            }
            for u in 0..x.len() {
                for v in 0..x.len() {
                    let d = norm(sub(x[u], x[v]));
                    if u != v && d > 0.0 && d < cfg.cutoff {
                        src.push(base + u);
                        dst.push(base + v);
                    }
                }
            }
            sizes.push(x.len());
            pos.extend_from_slice(x);
        }
        let n = atoms.len();
        let e = src.len();
        let r = cfg.rbf;
        let spacing = cfg.cutoff / (r - 1) as f64;
        let gamma = 1.0 / (spacing * spacing);
        let (mut rbf, mut envelope, mut rel) = (Vec::with_capacity(e * r), Vec::with_capacity(e), Vec::with_capacity(e * 3));
        let mut deg = vec![0usize; n];
        for (&s, &t) in src.iter().zip(&dst) {
            let v = sub(pos[t], pos[s]);
            let d = norm(v);
            let env = 0.5 * ((PI * d / cfg.cutoff).cos() + 1.0);
            for k in 0..r {
                let mu = k as f64 * spacing;
                rbf.push((-gamma * (d - mu) * (d - mu)).exp());
            }
            envelope.push(env);
            rel.extend_from_slice(&v);
            deg[t] += 1;
        }
        let inv_deg = deg.iter().map(|&k| if k == 0 { 0.0 } else { 1.0 / k as f64 }).collect();
        let inv_size = sizes.iter().map(|&k| 1.0 / k as f64).collect();
        Ok(Self {
            molecules: molecules.len(),
            atoms,
            owner,
            sizes,
            src,
            dst,
            rbf: Tensor::matrix(e, r, rbf)?,
            envelope: Tensor::matrix(e, 1, envelope)?,
            rel: Tensor::matrix(e, 3, rel)?,
            inv_deg: Tensor::matrix(n, 1, inv_deg)?,
            inv_size: Tensor::matrix(molecules.len(), 1, inv_size)?,
        })
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }
}

#[derive(Clone, Debug)]
struct Layer {
    message: Linear,
    update: Linear,
    coord: Linear,
}

/// Invariant-feature, equivariant-output message passing network.
///
/// Node features start from an atomic-number embedding. Each layer forms
/// edge messages from both endpoint features and a radial basis of the
/// distance, damped by a cosine envelope; nodes take the mean of incoming
/// messages through a residual update. Every layer also emits a scalar per
/// edge that weights the relative position `x_dst − x_src`; the weighted
/// vectors summed over edges and layers form the per-atom noise
/// prediction. The pooled graph embedding is a linear map of the mean node
/// feature.
#[derive(Clone, Debug)]
pub struct Encoder3d {
    pub config: Encoder3dConfig,
    embed: ParamId,
    layers: Vec<Layer>,
    readout: Linear,
}

/// Nodes of one forward pass.
pub struct Encoder3dOutput<'t> {
    /// `B × d`.
    pub z_x: Var<'t>,
    /// `n × 3`.
    pub node_pred: Var<'t>,
}

impl Encoder3d {
    pub fn new(config: Encoder3dConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let embed = store.add("mol.embed", normal(rng, [MAX_ATOMIC_NUMBER, d], 1.0));
        let layers = (0..config.num_layers)
            .map(|l| Layer {
                message: Linear::new(store, &format!("mol.layer{l}.message"), 2 * d + config.rbf, d, true, rng),
                update: Linear::new(store, &format!("mol.layer{l}.update"), 2 * d, d, true, rng),
                coord: Linear::new(store, &format!("mol.layer{l}.coord"), d, 1, false, rng),
            })
            .collect();
        let readout = Linear::new(store, "mol.readout", d, d, true, rng);
        Ok(Self {
            config,
            embed,
            layers,
            readout,
        })
    }

    pub fn readout(&self) -> &Linear {
        &self.readout
    }

    pub fn forward<'t>(&self, ctx: &ForwardCtx<'t, '_>, g: &GraphBatch) -> Encoder3dOutput<'t> {
        let n = g.num_atoms();
        let mut h = ctx.param(self.embed).gather_rows(g.atoms.clone());
        let mut pred: Option<Var<'t>> = None;
        if g.num_edges() > 0 {
            let src: Rc<[usize]> = g.src.clone().into();
            let dst: Rc<[usize]> = g.dst.clone().into();
            let rbf = ctx.constant(g.rbf.clone());
            let env = ctx.constant(g.envelope.clone());
            let rel = ctx.constant(g.rel.clone());
            let inv_deg = ctx.constant(g.inv_deg.clone());
            for layer in &self.layers {
                let input = ctx
                    .tape
                    .concat_cols(&[h.gather_rows(dst.clone()), h.gather_rows(src.clone()), rbf]);
                let msg = layer.message.forward(ctx, input).silu().mul_col(env);
                let agg = msg.scatter_add_rows(dst.clone(), n).mul_col(inv_deg);
                let upd = layer.update.forward(ctx, ctx.tape.concat_cols(&[h, agg])).silu();
                h = h + upd;
                let weight = layer.coord.forward(ctx, msg);
                let disp = rel.mul_col(weight).scatter_add_rows(dst.clone(), n).mul_col(inv_deg);
                pred = Some(match pred {
                    Some(p) => p + disp,
                    None => disp,
                });
            }
        }
        let node_pred = pred.unwrap_or_else(|| ctx.constant(Tensor::zeros([n, 3])));
        let pooled = h
            .scatter_add_rows(g.owner.clone(), g.molecules)
            .mul_col(ctx.constant(g.inv_size.clone()));
        Encoder3dOutput {
            z_x: self.readout.forward(ctx, pooled),
            node_pred,
        }
    }

    /// Graph embedding (`d`) and per-atom prediction (`N × 3`) of one
    /// molecule, without gradients.
    pub fn encode(&self, store: &ParamStore, atoms: &[u8], coords: &[Vec3]) -> Result<(Tensor, Tensor)> {
        let g = GraphBatch::new(&self.config, &[(atoms, coords)])?;
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, store, Mode::Eval);
        let out = self.forward(&ctx, &g);
        let z = (*out.z_x.value()).clone().reshaped([self.config.d_model])?;
        Ok((z, (*out.node_pred.value()).clone()))
    }
}
