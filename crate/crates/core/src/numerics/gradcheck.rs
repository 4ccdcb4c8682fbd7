//! Central finite-difference verification of reverse-mode gradients.

use super::kernels::Mode;
use super::params::{ForwardCtx, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug)]
pub struct ParamGradError {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub params: Vec<ParamGradError>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    pub fn worst(&self) -> Option<&ParamGradError> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Compares the reverse-mode gradient of `f` with respect to every trainable
/// element of `store` against `(f(θ+eps) − f(θ−eps)) / (2·eps)`.
///
/// `f` is evaluated twice at the unperturbed point first; differing results
/// are reported as [`Error::NonDeterministic`].
pub fn grad_check<F>(store: &ParamStore, mode: Mode, eps: f64, tolerance: f64, f: F) -> Result<GradReport>
where
    F: for<'t, 's> Fn(&ForwardCtx<'t, 's>) -> Result<Var<'t>>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-6, 1e-3]"
        )));
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, s, mode);
        let loss = f(&ctx)?;
        Ok(loss.item())
    };

    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    let base = {
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, store, mode);
        let loss = f(&ctx)?;
        let value = loss.item();
        let grads = loss.backward();
        analytic_store.accumulate_grads(&ctx.params, &grads);
        value
    };
    let again = eval(store)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "two evaluations at the same point gave {base:e} and {again:e}"
        )));
    }
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("function value {base}")));
    }

    let mut work = store.clone();
    let mut params = Vec::new();
    for (id, p) in store.iter() {
        if !p.requires_grad {
            continue;
        }
        let analytic = analytic_store.get(id).grad.clone();
        let mut entry = ParamGradError {
            name: p.name.clone(),
            elements: p.value.numel(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..p.value.numel() {
            let orig = p.value.data()[i];
            work.value_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[i]);
            let err = relative_error(a, numeric);
            if err > entry.max_rel_err || i == 0 {
                entry.max_rel_err = err;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        params.push(entry);
    }
    let max_rel_err = params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    Ok(GradReport {
        params,
        max_rel_err,
        tolerance,
        passed: max_rel_err < tolerance,
    })
}
