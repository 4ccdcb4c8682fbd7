use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Rng, rng_for};

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Bonded structure used by internal coordinates and torsion rotations.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Topology {
    pub bonds: Vec<[usize; 2]>,
    pub angles: Vec<[usize; 3]>,
    pub torsions: Vec<[usize; 4]>,
    pub rotatable: Vec<[usize; 2]>,
}

impl Topology {
    /// Checks every index against an `n`-atom molecule.
    pub fn validate(&self, n: usize) -> Result<()> {
        let check = |what: &str, idx: &[usize]| -> Result<()> {
            match idx.iter().find(|&&i| i >= n) {
                Some(i) => Err(Error::InvalidArgument(format!(
                    "{what} {idx:?} references atom {i} of a {n}-atom molecule"
                ))),
                None => Ok(()),
            }
        };
        self.bonds.iter().try_for_each(|b| check("bond", b))?;
        self.angles.iter().try_for_each(|a| check("angle", a))?;
        self.torsions.iter().try_for_each(|t| check("torsion", t))?;
        self.rotatable.iter().try_for_each(|r| check("rotatable bond", r))
    }
}

/// Atomic numbers and Cartesian coordinates (Å) in matching order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    pub atoms: Vec<u8>,
    pub coords: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Topology>,
}

impl Molecule {
    pub fn new(atoms: Vec<u8>, coords: Vec<Vec3>) -> Result<Self> {
        let m = Self {
            atoms,
            coords,
            topology: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_topology(mut self, topology: Topology) -> Result<Self> {
        topology.validate(self.len())?;
        self.topology = Some(topology);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::InvalidArgument("molecule has no atoms".into()));
        }
        if self.atoms.len() != self.coords.len() {
            return Err(Error::Shape(format!(
                "{} atomic numbers but {} coordinate rows",
                self.atoms.len(),
                self.coords.len()
            )));
        }
        if let Some(&z) = self.atoms.iter().find(|&&z| !(1..=118).contains(&z)) {
            return Err(Error::InvalidArgument(format!("atomic number {z} outside 1..=118")));
        }
        check_finite(&self.coords)?;
        if let Some(t) = &self.topology {
            t.validate(self.len())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

pub(crate) fn check_finite(coords: &[Vec3]) -> Result<()> {
    match coords.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        Some(i) => Err(Error::NonFinite(format!("coordinates of atom {i}"))),
        None => Ok(()),
    }
}

/// Directed edges `(u, v)` with `0 < |x_u − x_v| < cutoff`, ordered by `u`
/// then `v`.
pub fn build_radius_graph(coords: &[Vec3], cutoff: f64) -> Result<Vec<(usize, usize)>> {
    if !(cutoff > 0.0) {
        return Err(Error::InvalidArgument(format!("cutoff {cutoff} must be positive")));
    }
    let mut edges = Vec::new();
    for (u, &a) in coords.iter().enumerate() {
        for (v, &b) in coords.iter().enumerate() {
            let d = norm(sub(a, b));
            if u != v && d > 0.0 && d < cutoff {
                edges.push((u, v));
            }
        }
    }
    Ok(edges)
}

/// A perturbed structure and the exact perturbation that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisySample {
    pub clean: Vec<Vec3>,
    pub noisy: Vec<Vec3>,
    pub noise: Vec<Vec3>,
    pub tau: f64,
}

/// `x = x_0 + τ·ε` with `ε ~ N(0, I)`, drawn from the stream labelled
/// `"coord-noise"` under `seed`.
pub fn add_coord_noise(x0: &[Vec3], tau: f64, seed: u64) -> Result<NoisySample> {
    add_coord_noise_with(x0, tau, &mut rng_for(seed, "coord-noise"))
}

pub fn add_coord_noise_with(x0: &[Vec3], tau: f64, rng: &mut Rng) -> Result<NoisySample> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("noise scale {tau} must be finite and >= 0")));
    }
    let mut noisy = Vec::with_capacity(x0.len());
    let mut noise = Vec::with_capacity(x0.len());
    for p in x0 {
        let mut e = [0.0; 3];
        for v in &mut e {
            let z: f64 = StandardNormal.sample(rng);
            *v = tau * z;
        }
        noise.push(e);
        noisy.push([p[0] + e[0], p[1] + e[1], p[2] + e[2]]);
    }
    Ok(NoisySample {
        clean: x0.to_vec(),
        noisy,
        noise,
        tau,
    })
}

/// Bond lengths, bond angles and dihedrals with their defining indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InternalCoords {
    pub bonds: Vec<[usize; 2]>,
    pub lengths: Vec<f64>,
    pub angle_triples: Vec<[usize; 3]>,
    pub angles: Vec<f64>,
    pub torsion_quads: Vec<[usize; 4]>,
    pub torsions: Vec<f64>,
}

pub fn bond_length(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Angle at `b` between `b→a` and `b→c`, in `[0, π]`.
pub fn bond_angle(a: Vec3, b: Vec3, c: Vec3) -> Result<f64> {
    let (u, v) = (sub(a, b), sub(c, b));
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Geometry("zero-length bond in angle".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0).acos())
}

/// Dihedral of `a-b-c-d` in `(−π, π]`; eclipsed (cis) is 0, anti is π.
pub fn dihedral(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> Result<f64> {
    let (b1, b2, b3) = (sub(b, a), sub(c, b), sub(d, c));
    let (n1, n2) = (cross(b1, b2), cross(b2, b3));
    let scale = norm(b1).max(norm(b2)).max(norm(b3));
    let tol = 1e-10 * scale * scale;
    if norm(n1) <= tol || norm(n2) <= tol {
        return Err(Error::Geometry("collinear atoms leave the dihedral undefined".into()));
    }
    let y = norm(b2) * dot(b1, n2);
    let x = dot(n1, n2);
    let phi = y.atan2(x);
    Ok(if phi <= -PI { phi + 2.0 * PI } else { phi })
}

/// Wraps an angle difference into `(−π, π]`.
pub fn wrap_angle(d: f64) -> f64 {
    let r = d.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

pub fn internal_coords(x: &[Vec3], topology: &Topology) -> Result<InternalCoords> {
    topology.validate(x.len())?;
    let lengths = topology.bonds.iter().map(|&[i, j]| bond_length(x[i], x[j])).collect();
    let angles = topology
        .angles
        .iter()
        .map(|&[i, j, k]| bond_angle(x[i], x[j], x[k]))
        .collect::<Result<_>>()?;
    let torsions = topology
        .torsions
        .iter()
        .map(|&[i, j, k, l]| {
            dihedral(x[i], x[j], x[k], x[l])
                .map_err(|e| Error::Geometry(format!("torsion {:?}: {e}", [i, j, k, l])))
        })
        .collect::<Result<_>>()?;
    Ok(InternalCoords {
        bonds: topology.bonds.clone(),
        lengths,
        angle_triples: topology.angles.clone(),
        angles,
        torsion_quads: topology.torsions.clone(),
        torsions,
    })
}
