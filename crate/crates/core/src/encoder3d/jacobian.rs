use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::geometry::{cross, dot, norm, sub, Vec3};

/// Finite-difference step (radians) for Jacobian columns.
pub const TORSION_STEP: f64 = 1e-4;

/// `C ∈ R^{3N×m}`: column `j` is the derivative of the flattened coordinates
/// with respect to a rotation about rotatable bond `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorsionJacobian {
    pub c: Tensor,
    pub rotatable: Vec<[usize; 2]>,
    /// Atoms moved by each bond rotation.
    pub moving: Vec<Vec<usize>>,
}

/// Atoms reachable from `start` without crossing the bond `(a, b)`.
fn side(adj: &[Vec<usize>], start: usize, a: usize, b: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            let crossing = (u == a && v == b) || (u == b && v == a);
            if !crossing && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// The atoms that move when bond `(j, k)` is rotated: the smaller of the two
/// sides, or on a tie the side without the lower-indexed bond atom.
pub fn moving_side(n: usize, bonds: &[[usize; 2]], bond: [usize; 2]) -> Result<Vec<usize>> {
    let [j, k] = bond;
    if j >= n || k >= n || j == k {
        return Err(Error::InvalidArgument(format!("rotatable bond {bond:?} invalid for {n} atoms")));
    }
    if !bonds.iter().any(|&[a, b]| (a == j && b == k) || (a == k && b == j)) {
        return Err(Error::InvalidArgument(format!("rotatable bond {bond:?} is not in the bond list")));
    }
    let mut adj = vec![Vec::new(); n];
    for &[a, b] in bonds {
        if a >= n || b >= n {
            return Err(Error::InvalidArgument(format!("bond {:?} out of range", [a, b])));
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    let from_j = side(&adj, j, j, k);
    if from_j[k] {
        return Err(Error::Geometry(format!("rotatable bond {bond:?} lies in a ring")));
    }
    let from_k = side(&adj, k, j, k);
    let size_j = from_j.iter().filter(|&&s| s).count();
    let size_k = from_k.iter().filter(|&&s| s).count();
    let lower = j.min(k);
    let rotate_k = match size_j.cmp(&size_k) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => lower == j,
    };
    let mask = if rotate_k { from_k } else { from_j };
    Ok((0..n).filter(|&i| mask[i]).collect())
}

/// Rotates `atoms` by `angle` about the axis through `x[j]` and `x[k]`
/// (right-handed about `k − j`).
pub fn rotate_about_bond(x: &[Vec3], bond: [usize; 2], atoms: &[usize], angle: f64) -> Vec<Vec3> {
    let [j, k] = bond;
    let origin = x[j];
    let axis = sub(x[k], origin);
    let len = norm(axis);
    let u = [axis[0] / len, axis[1] / len, axis[2] / len];
    let (s, c) = angle.sin_cos();
    let mut out = x.to_vec();
    for &i in atoms {
        let p = sub(x[i], origin);
        let uxp = cross(u, p);
        let udp = dot(u, p);
        for a in 0..3 {
            out[i][a] = origin[a] + p[a] * c + uxp[a] * s + u[a] * udp * (1.0 - c);
        }
    }
    out
}

/// Changes the dihedral about `bond = (j, k)` by `dpsi`, moving only
/// `atoms`. Turning the `k` side forward and the `j` side backward both
/// advance the dihedral of any quadruple `(i, j, k, l)`.
pub fn twist(x: &[Vec3], bond: [usize; 2], atoms: &[usize], dpsi: f64) -> Vec<Vec3> {
    let angle = if atoms.contains(&bond[1]) { dpsi } else { -dpsi };
    rotate_about_bond(x, bond, atoms, angle)
}

/// Central-difference Jacobian of the coordinates with respect to each
/// rotatable dihedral, using [`twist`] with step [`TORSION_STEP`].
pub fn compute_torsion_jacobian(x: &[Vec3], bonds: &[[usize; 2]], rotatable: &[[usize; 2]]) -> Result<TorsionJacobian> {
    let n = x.len();
    let m = rotatable.len();
    let mut c = Tensor::zeros([3 * n, m]);
    let mut moving = Vec::with_capacity(m);
    for (col, &bond) in rotatable.iter().enumerate() {
        if norm(sub(x[bond[1]], x[bond[0]])) == 0.0 {
            return Err(Error::Geometry(format!("rotatable bond {bond:?} has zero length")));
        }
        let atoms = moving_side(n, bonds, bond)?;
        let plus = twist(x, bond, &atoms, TORSION_STEP);
        let minus = twist(x, bond, &atoms, -TORSION_STEP);
        for i in 0..n {
            for a in 0..3 {
                let v = (plus[i][a] - minus[i][a]) / (2.0 * TORSION_STEP);
                c.data_mut()[(3 * i + a) * m + col] = v;
            }
        }
        moving.push(atoms);
    }
    Ok(TorsionJacobian {
        c,
        rotatable: rotatable.to_vec(),
        moving,
    })
}
