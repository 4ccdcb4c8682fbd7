use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::geometry::{wrap_angle, InternalCoords, Vec3};

/// Scales and stiffnesses of the three quadratic energies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub tau_c: f64,
    pub tau_f: f64,
    pub sigma_f: f64,
    pub k_bond: Vec<f64>,
    pub k_angle: Vec<f64>,
    pub k_torsion: Vec<f64>,
}

fn displacement(x: &[Vec3], x0: &[Vec3]) -> Result<Vec<f64>> {
    if x.len() != x0.len() {
        return Err(Error::Shape(format!("{} atoms vs {} reference atoms", x.len(), x0.len())));
    }
    Ok(x.iter()
        .zip(x0)
        .flat_map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
        .collect())
}

/// `|x − x_0|² / (2τ²)`.
pub fn energy_coord(x: &[Vec3], x0: &[Vec3], tau_c: f64) -> Result<f64> {
    if !(tau_c > 0.0) {
        return Err(Error::InvalidArgument(format!("tau_c {tau_c} must be positive")));
    }
    let d = displacement(x, x0)?;
    Ok(d.iter().map(|v| v * v).sum::<f64>() / (2.0 * tau_c * tau_c))
}

/// `½ δᵀ Σ⁻¹ δ` with `Σ = τ_f² I + σ_f² C Cᵀ` and `δ = x − x_0`.
///
/// Uses the Woodbury identity, so only an `m × m` system
/// `(τ_f² I + σ_f² CᵀC) w = Cᵀδ` is factorized.
pub fn energy_frad(x: &[Vec3], x0: &[Vec3], c: &Tensor, tau_f: f64, sigma_f: f64) -> Result<f64> {
    if !(tau_f > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau_f {tau_f} must be positive (the covariance is singular otherwise)"
        )));
    }
    if !(sigma_f >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_f {sigma_f} must be >= 0")));
    }
    let d = displacement(x, x0)?;
    if c.shape().len() != 2 || c.rows() != d.len() {
        return Err(Error::Shape(format!(
            "torsion Jacobian {:?} does not have {} rows",
            c.shape(),
            d.len()
        )));
    }
    let (a, s) = (tau_f * tau_f, sigma_f * sigma_f);
    let dd: f64 = d.iter().map(|v| v * v).sum();
    let m = c.cols();
    if m == 0 || s == 0.0 {
        return Ok(dd / (2.0 * a));
    }
    let cm = DMatrix::from_row_slice(d.len(), m, c.data());
    let dv = DVector::from_vec(d);
    let u = cm.transpose() * &dv;
    let k = DMatrix::identity(m, m) * a + cm.transpose() * &cm * s;
    let chol = k
        .cholesky()
        .ok_or_else(|| Error::Geometry("torsion covariance is not positive definite".into()))?;
    let w = chol.solve(&u);
    Ok((dd - s * u.dot(&w)) / (2.0 * a))
}

/// Harmonic bond, angle and torsion energy around `eq`; torsion
/// differences are wrapped into `(−π, π]`.
pub fn energy_slide(
    ic: &InternalCoords,
    eq: &InternalCoords,
    k_bond: &[f64],
    k_angle: &[f64],
    k_torsion: &[f64],
) -> Result<f64> {
    let groups = [
        ("bond", &ic.lengths, &eq.lengths, k_bond),
        ("angle", &ic.angles, &eq.angles, k_angle),
        ("torsion", &ic.torsions, &eq.torsions, k_torsion),
    ];
    let mut e = 0.0;
    for (name, v, v0, k) in groups {
        if v.len() != v0.len() || v.len() != k.len() {
            return Err(Error::Shape(format!(
                "{name} terms: {} values, {} equilibrium values, {} stiffnesses",
                v.len(),
                v0.len(),
                k.len()
            )));
        }
        if let Some(bad) = k.iter().find(|&&k| !(k >= 0.0)) {
            return Err(Error::InvalidArgument(format!("{name} stiffness {bad} must be >= 0")));
        }
        for ((&x, &x0), &kk) in v.iter().zip(v0.iter()).zip(k) {
            let diff = if name == "torsion" { wrap_angle(x - x0) } else { x - x0 };
            e += 0.5 * kk * diff * diff;
        }
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coord_energy_examples() {
        let x0 = [[0.3, -1.0, 2.0], [1.0, 1.0, 1.0]];
        assert_eq!(energy_coord(&x0, &x0, 0.04).unwrap(), 0.0);
        let x = [[1.3, -1.0, 2.0], [1.0, 1.0, 1.0]];
        assert_eq!(energy_coord(&x, &x0, 1.0).unwrap(), 0.5);
        let e1 = energy_coord(&x, &x0, 0.5).unwrap();
        let e2 = energy_coord(&x, &x0, 1.0).unwrap();
        assert!((e2 - e1 / 4.0).abs() < 1e-15);
        assert!(energy_coord(&x, &x0, 0.0).is_err());
    }

    #[test]
    fn coord_energy_gradient() {
        let x0 = [[0.1, 0.2, 0.3], [1.0, -0.5, 0.2]];
        let x = [[0.15, 0.1, 0.35], [0.9, -0.45, 0.3]];
        let tau = 0.3;
        let h = 1e-6;
        for i in 0..2 {
            for a in 0..3 {
                let (mut p, mut m) = (x, x);
                p[i][a] += h;
                m[i][a] -= h;
                let fd = (energy_coord(&p, &x0, tau).unwrap() - energy_coord(&m, &x0, tau).unwrap()) / (2.0 * h);
                let exact = (x[i][a] - x0[i][a]) / (tau * tau);
                assert!((fd - exact).abs() < 1e-6, "{fd} vs {exact}");
            }
        }
    }

    #[test]
    fn frad_without_torsions_is_coord() {
        let x0 = [[0.0; 3], [1.0, 0.0, 0.0]];
        let x = [[0.1, -0.2, 0.05], [1.1, 0.3, 0.0]];
        let c = Tensor::zeros([6, 0]);
        assert_eq!(
            energy_frad(&x, &x0, &c, 0.7, 2.0).unwrap(),
            energy_coord(&x, &x0, 0.7).unwrap()
        );
    }

    #[test]
    fn frad_single_atom_case() {
        let c = Tensor::matrix(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let e = energy_frad(&[[1.0, 0.0, 0.0]], &[[0.0; 3]], &c, 1.0, 1.0).unwrap();
        assert!((e - 0.25).abs() < 1e-12);
        assert_eq!(energy_frad(&[[0.0; 3]], &[[0.0; 3]], &c, 1.0, 1.0).unwrap(), 0.0);
        assert!(energy_frad(&[[0.0; 3]], &[[0.0; 3]], &c, 0.0, 1.0).is_err());
    }

    #[test]
    fn slide_examples() {
        let ic = InternalCoords {
            lengths: vec![1.6],
            ..Default::default()
        };
        let eq = InternalCoords {
            lengths: vec![1.5],
            ..Default::default()
        };
        assert!((energy_slide(&ic, &eq, &[2.0], &[], &[]).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(energy_slide(&eq, &eq, &[2.0], &[], &[]).unwrap(), 0.0);
        assert!(energy_slide(&ic, &eq, &[-1.0], &[], &[]).is_err());

        let tors = |v: f64| InternalCoords {
            torsions: vec![v],
            ..Default::default()
        };
        let wrapped = energy_slide(&tors(0.4 + 2.0 * std::f64::consts::PI), &tors(0.4), &[], &[], &[3.0]).unwrap();
        assert!(wrapped < 1e-28);
        assert!(energy_slide(&tors(0.0), &tors(0.0), &[], &[], &[]).is_err());
    }
}
