use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Optimal denoiser `E[x_0 − x | x]` for the mixture `½N(1, τ²) + ½N(−1, τ²)`,
/// whose posterior mean is `tanh(x/τ²)`.
pub fn mixture_denoiser(x: f64, tau: f64) -> f64 {
    (x / (tau * tau)).tanh() - x
}

/// `τ²·∂/∂x log p(x)` of the same mixture, from the component densities and
/// their responsibilities.
pub fn mixture_score_scaled(x: f64, tau: f64) -> f64 {
    let log_n = |mu: f64| -0.5 * ((x - mu) / tau).powi(2);
    let (lp, lm) = (log_n(1.0), log_n(-1.0));
    let top = lp.max(lm);
    let (ep, em) = ((lp - top).exp(), (lm - top).exp());
    let (wp, wm) = (ep / (ep + em), em / (ep + em));
    // Σ_k w_k (μ_k − x) / τ², times τ².
    wp * (1.0 - x) + wm * (-1.0 - x)
}

/// Settings of the least-squares regressor fitted to noisy samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub samples: usize,
    pub seed: u64,
    /// Gaussian bump centers; features are `[1, x, exp(−(x−c)²/(2w²))…]`.
    /// The defaults suit `τ` near 1.
    pub centers: Vec<f64>,
    pub width: f64,
    pub ridge: f64,
}

impl Default for RegressorSpec {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 0,
            centers: (-3..=3).map(f64::from).collect(),
            width: 1.0,
            ridge: 1e-8,
        }
    }
}

impl RegressorSpec {
    fn features(&self, x: f64) -> Vec<f64> {
        let mut f = Vec::with_capacity(2 + self.centers.len());
        f.push(1.0);
        f.push(x);
        for &c in &self.centers {
            f.push((-(x - c).powi(2) / (2.0 * self.width * self.width)).exp());
        }
        f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub tau: f64,
    pub grid: Vec<f64>,
    /// Closed-form optimal denoiser at each grid point.
    pub denoiser: Vec<f64>,
    /// Scaled score at each grid point.
    pub oracle: Vec<f64>,
    /// `max |denoiser − oracle|`.
    pub max_identity_deviation: f64,
    /// Regressor predictions, when one was fitted.
    pub fitted: Option<Vec<f64>>,
    /// `max |fitted − oracle|`.
    pub max_fit_deviation: Option<f64>,
}

/// Parses `start:end:step` into an inclusive grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidArgument(format!("grid '{spec}' is not start:end:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (start, end, step) = (v[0], v[1], v[2]);
    if !(step > 0.0) || !(end >= start) || !start.is_finite() || !end.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "grid '{spec}' needs finite start <= end and step > 0"
        )));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

fn fit(tau: f64, spec: &RegressorSpec) -> Result<DVector<f64>> {
    if spec.samples == 0 {
        return Err(Error::InvalidArgument("regressor needs at least one sample".into()));
    }
    let p = 2 + spec.centers.len();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut rng = rng_for(spec.seed, "equivalence-samples");
    for _ in 0..spec.samples {
        let x0 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let eps: f64 = StandardNormal.sample(&mut rng);
        let x = x0 + tau * eps;
        let f = DVector::from_vec(spec.features(x));
        gram.ger(1.0, &f, &f, 1.0);
        rhs.axpy(x0 - x, &f, 1.0);
    }
    gram /= spec.samples as f64;
    rhs /= spec.samples as f64;
    for i in 0..p {
        gram[(i, i)] += spec.ridge;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::NonFinite("regressor normal equations are not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// Evaluates the closed-form denoiser and the scaled score on `grid` and,
/// when `regressor` is given, fits `x ↦ x_0 − x` by least squares on
/// samples from the mixture and compares it with the score.
pub fn verify_equivalence(tau: f64, grid: &[f64], regressor: Option<&RegressorSpec>) -> Result<EquivalenceReport> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau {tau} must be positive")));
    }
    let denoiser: Vec<f64> = grid.iter().map(|&x| mixture_denoiser(x, tau)).collect();
    let oracle: Vec<f64> = grid.iter().map(|&x| mixture_score_scaled(x, tau)).collect();
    let max_identity_deviation = denoiser
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let (fitted, max_fit_deviation) = match regressor {
        Some(spec) => {
            let w = fit(tau, spec)?;
            let f: Vec<f64> = grid
                .iter()
                .map(|&x| DVector::from_vec(spec.features(x)).dot(&w))
                .collect();
            let dev = f.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            (Some(f), Some(dev))
        }
        None => (None, None),
    };
    Ok(EquivalenceReport {
        tau,
        grid: grid.to_vec(),
        denoiser,
        oracle,
        max_identity_deviation,
        fitted,
        max_fit_deviation,
    })
}

/// CSV with columns `x,denoiser,oracle,abs_diff`, plus `fitted,fitted_abs_diff`
/// when a regressor was fitted.
pub fn write_report_csv(report: &EquivalenceReport, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    let header = if report.fitted.is_some() {
        "x,denoiser,oracle,abs_diff,fitted,fitted_abs_diff"
    } else {
        "x,denoiser,oracle,abs_diff"
    };
    writeln!(out, "{header}").expect("write to memory");
    for (i, &x) in report.grid.iter().enumerate() {
        let (d, o) = (report.denoiser[i], report.oracle[i]);
        write!(out, "{x:?},{d:?},{o:?},{:?}", (d - o).abs()).expect("write to memory");
        if let Some(f) = &report.fitted {
            write!(out, ",{:?},{:?}", f[i], (f[i] - o).abs()).expect("write to memory");
        }
        writeln!(out).expect("write to memory");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
