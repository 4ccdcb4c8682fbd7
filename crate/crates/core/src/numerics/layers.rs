use super::kernels::{Mode, RunningStats, BN_EPS};
use super::params::{xavier_uniform, ForwardCtx, ParamId, ParamStore};
use super::tape::{NormStats, Var};
use super::tensor::Tensor;
use crate::rng::Rng;

/// `y = x W (+ b)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(rng, fan_in, fan_out));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros([fan_out])));
        Self { weight, bias }
    }

    pub fn forward<'t>(&self, ctx: &ForwardCtx<'t, '_>, x: Var<'t>) -> Var<'t> {
        let y = x.matmul(ctx.param(self.weight));
        match self.bias {
            Some(b) => y.add_row(ctx.param(b)),
            None => y,
        }
    }
}

/// Batch normalization over rows with learnable affine parameters and
/// running statistics stored as buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled([features], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([features])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros([features])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::filled([features], 1.0)),
        }
    }

    pub fn forward<'t>(&self, ctx: &ForwardCtx<'t, '_>, x: Var<'t>) -> Var<'t> {
        let (gamma, beta) = (ctx.param(self.gamma), ctx.param(self.beta));
        match ctx.mode {
            Mode::Train => {
                let rows = x.value().rows();
                let (y, batch) = x.batch_norm(gamma, beta, NormStats::Batch { eps: BN_EPS });
                let (mean, var) = batch.expect("batch statistics in train mode");
                let mut stats = RunningStats {
                    mean: ctx.store.value(self.running_mean).data().to_vec(),
                    var: ctx.store.value(self.running_var).data().to_vec(),
                };
                stats.update(&mean, &var, rows);
                let n = stats.mean.len();
                ctx.record_update(self.running_mean, Tensor::new([n], stats.mean).expect("stats"));
                ctx.record_update(self.running_var, Tensor::new([n], stats.var).expect("stats"));
                y
            }
            Mode::Eval => {
                let mean = ctx.store.value(self.running_mean).data();
                let var = ctx.store.value(self.running_var).data();
                x.batch_norm(gamma, beta, NormStats::Running { mean, var, eps: BN_EPS }).0
            }
        }
    }
}
