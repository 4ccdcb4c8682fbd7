use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder3d::{Topology, Vec3};
use crate::rng::rng_for;
use crate::spectra::{preprocess, GridSet, Spectrum, SpectrumKind};

use super::dataset::{MoleculeRecord, SpectraSet};

/// One Lorentzian line: center, half width at half maximum, height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub center: f64,
    pub hwhm: f64,
    pub height: f64,
}

const fn peak(center: f64, hwhm: f64, height: f64) -> Peak {
    Peak { center, hwhm, height }
}

/// An atom of a group motif, placed `bond_length` Å from the previous
/// motif atom (the anchor for the first). `angle` is the bond angle in
/// degrees at the previous atom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotifAtom {
    pub atomic_number: u8,
    pub bond_length: f64,
    pub angle: f64,
}

const fn atom(atomic_number: u8, bond_length: f64, angle: f64) -> MotifAtom {
    MotifAtom {
        atomic_number,
        bond_length,
        angle,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub code: String,
    pub motif: Vec<MotifAtom>,
    /// Out-of-plane tilt of the substituent, degrees.
    pub tilt: f64,
    /// Lines in [`SpectrumKind::ALL`] order.
    pub peaks: [Vec<Peak>; 3],
}

impl GroupSpec {
    pub fn peaks(&self, kind: SpectrumKind) -> &[Peak] {
        &self.peaks[kind.index()]
    }
}

/// Functional groups, their geometry motifs and the lines each one adds to
/// every spectrum. Every group emits lines in at least two spectra.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpecTable {
    pub groups: Vec<GroupSpec>,
    /// Carbon backbone bond length range, Å.
    pub spacing: (f64, f64),
    /// Backbone skeletal line center per Å of spacing away from 1.5 Å,
    /// applied to IR and Raman around 1000 cm⁻¹.
    pub skeletal_shift: f64,
    pub jitter: f64,
    pub noise: f64,
}

impl SyntheticSpecTable {
    pub fn standard() -> Self {
        let g = |code: &str, motif: Vec<MotifAtom>, tilt: f64, uv: Vec<Peak>, ir: Vec<Peak>, raman: Vec<Peak>| GroupSpec {
            code: code.into(),
            motif,
            tilt,
            peaks: [uv, ir, raman],
        };
        Self {
            groups: vec![
                g(
                    "hydroxyl",
                    vec![atom(8, 1.43, 0.0), atom(1, 0.96, 108.0)],
                    0.0,
                    vec![peak(7.0, 0.4, 20.0)],
                    vec![peak(3350.0, 60.0, 60.0), peak(1050.0, 25.0, 30.0)],
                    vec![peak(3350.0, 60.0, 10.0)],
                ),
                g(
                    "methyl",
                    vec![atom(6, 1.53, 0.0)],
                    30.0,
                    vec![peak(8.6, 0.4, 10.0)],
                    vec![peak(2950.0, 20.0, 30.0), peak(1450.0, 15.0, 15.0)],
                    vec![peak(2930.0, 20.0, 40.0)],
                ),
                g(
                    "carbonyl",
                    vec![atom(8, 1.22, 0.0)],
                    -20.0,
                    vec![peak(4.3, 0.3, 15.0)],
                    vec![peak(1715.0, 15.0, 80.0)],
                    vec![peak(1715.0, 15.0, 25.0)],
                ),
                g(
                    "amine",
                    vec![atom(7, 1.47, 0.0), atom(1, 1.01, 109.0)],
                    15.0,
                    vec![peak(6.0, 0.4, 20.0)],
                    vec![peak(3300.0, 40.0, 35.0), peak(1600.0, 20.0, 20.0)],
                    vec![peak(3300.0, 40.0, 10.0)],
                ),
                g(
                    "nitrile",
                    vec![atom(6, 1.47, 0.0), atom(7, 1.16, 180.0)],
                    -35.0,
                    vec![peak(9.5, 0.4, 15.0)],
                    vec![peak(2250.0, 10.0, 30.0)],
                    vec![peak(2250.0, 10.0, 70.0)],
                ),
                g(
                    "fluoro",
                    vec![atom(9, 1.35, 0.0)],
                    45.0,
                    vec![peak(10.5, 0.4, 10.0)],
                    vec![peak(1100.0, 20.0, 70.0)],
                    vec![peak(1100.0, 20.0, 10.0)],
                ),
                g(
                    "chloro",
                    vec![atom(17, 1.77, 0.0)],
                    -45.0,
                    vec![peak(7.5, 0.3, 15.0)],
                    vec![peak(750.0, 20.0, 50.0)],
                    vec![peak(700.0, 20.0, 45.0)],
                ),
                g(
                    "thiol",
                    vec![atom(16, 1.82, 0.0), atom(1, 1.34, 96.0)],
                    25.0,
                    vec![peak(5.5, 0.3, 20.0)],
                    vec![peak(2550.0, 15.0, 15.0)],
                    vec![peak(2570.0, 15.0, 60.0)],
                ),
                g(
                    "vinyl",
                    vec![atom(6, 1.50, 0.0), atom(6, 1.34, 122.0)],
                    -10.0,
                    vec![peak(6.5, 0.3, 30.0)],
                    vec![peak(1640.0, 15.0, 25.0), peak(3080.0, 15.0, 20.0)],
                    vec![peak(1640.0, 15.0, 70.0)],
                ),
                g(
                    "formyl",
                    vec![atom(6, 1.50, 0.0), atom(8, 1.21, 124.0)],
                    10.0,
                    vec![peak(4.1, 0.3, 12.0)],
                    vec![peak(2720.0, 15.0, 20.0), peak(1730.0, 15.0, 75.0)],
                    vec![peak(2720.0, 15.0, 15.0)],
                ),
            ],
            spacing: (1.45, 1.60),
            skeletal_shift: 1500.0,
            jitter: 0.02,
            noise: 0.1,
        }
    }

    pub fn group(&self, code: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.code == code)
    }
}

/// A generated record with the composition that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticMolecule {
    pub record: MoleculeRecord,
    /// Group index of each anchor.
    pub groups: Vec<usize>,
    pub spacing: f64,
}

fn lorentzian(x: f64, p: &Peak, hwhm: f64) -> f64 {
    let u = (x - p.center) / hwhm;
    p.height / (1.0 + u * u)
}

fn normalized(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn step(from: Vec3, dir: Vec3, len: f64) -> Vec3 {
    [from[0] + dir[0] * len, from[1] + dir[1] * len, from[2] + dir[2] * len]
}

/// Builds molecule `index` of the dataset generated under `seed`.
///
/// Anchors are carbons on a planar zigzag; each carries one group motif
/// pointing away from the chain. Atoms are ordered anchors first, then the
/// motif atoms group by group.
pub fn synthesize(index: usize, seed: u64, grids: &GridSet, table: &SyntheticSpecTable) -> SyntheticMolecule {
    let mut rng = rng_for(seed, &format!("synthetic/{index}"));
    let g = rng.random_range(2..=4usize);
    let groups: Vec<usize> = (0..g).map(|_| rng.random_range(0..table.groups.len())).collect();
    let spacing = rng.random_range(table.spacing.0..table.spacing.1);
    let half = (112.0f64 / 2.0).to_radians();

    let mut atoms = vec![6u8; g];
    let mut coords: Vec<Vec3> = (0..g)
        .map(|k| [k as f64 * spacing * half.sin(), (k % 2) as f64 * spacing * half.cos(), 0.0])
        .collect();
    let mut topo = Topology::default();
    for k in 1..g {
        topo.bonds.push([k - 1, k]);
        topo.rotatable.push([k - 1, k]);
    }
    for (k, &gi) in groups.iter().enumerate() {
        let spec = &table.groups[gi];
        let side = if k % 2 == 0 { -1.0 } else { 1.0 };
        let tilt = spec.tilt.to_radians();
        let mut dir = normalized([0.0, side * tilt.cos(), tilt.sin()]);
        let mut prev = k;
        for (m, ma) in spec.motif.iter().enumerate() {
            if m > 0 {
                // Bend toward +x, which is orthogonal to every first-atom direction.
                let beta = std::f64::consts::PI - ma.angle.to_radians();
                dir = normalized([beta.sin(), dir[1] * beta.cos(), dir[2] * beta.cos()]);
            }
            let pos = step(coords[prev], dir, ma.bond_length);
            let idx = atoms.len();
            atoms.push(ma.atomic_number);
            coords.push(pos);
            topo.bonds.push([prev, idx]);
            if m == 0 && spec.motif.len() > 1 && spec.motif[1].angle < 170.0 {
                topo.rotatable.push([prev, idx]);
            }
            prev = idx;
        }
    }
    let jitter = Normal::new(0.0, table.jitter).expect("jitter scale");
    for p in &mut coords {
        for v in p.iter_mut() {
            *v += jitter.sample(&mut rng);
        }
    }
    fill_angles_and_torsions(&mut topo, &coords);

    let mut spectra = SpectraSet::default();
    for kind in SpectrumKind::ALL {
        let grid = grids.get(kind);
        let floor = 1.5 * grid.step;
        let mut lines: Vec<Peak> = Vec::new();
        for &gi in &groups {
            for p in table.groups[gi].peaks(kind) {
                let amp = rng.random_range(0.9..1.1);
                lines.push(Peak {
                    height: p.height * amp,
                    ..*p
                });
            }
        }
        if kind != SpectrumKind::UvVis {
            let center = 1000.0 + table.skeletal_shift * (spacing - 1.5);
            let height = if kind == SpectrumKind::Raman { 20.0 } else { 5.0 };
            lines.push(peak(center, 15.0, height * (g - 1) as f64));
        }
        let raw: Vec<f64> = (0..grid.len)
            .map(|i| {
                let x = grid.point(i);
                let signal: f64 = lines.iter().map(|p| lorentzian(x, p, p.hwhm.max(floor))).sum();
                signal + table.noise * rng.random::<f64>()
            })
            .collect();
        let clean = preprocess(&Spectrum::new(kind, raw)).expect("synthetic intensities are finite and >= 0");
        spectra.set(kind, clean.intensities);
    }

    SyntheticMolecule {
        record: MoleculeRecord {
            id: format!("syn-{seed}-{index:06}"),
            atoms,
            coords,
            spectra: Some(spectra),
            topology: Some(topo),
        },
        groups,
        spacing,
    }
}

fn angle_deg(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    crate::encoder3d::bond_angle(a, b, c).map_or(180.0, f64::to_degrees)
}

fn fill_angles_and_torsions(topo: &mut Topology, x: &[Vec3]) {
    let n = x.len();
    let mut adj = vec![Vec::new(); n];
    for &[a, b] in &topo.bonds {
        adj[a].push(b);
        adj[b].push(a);
    }
    for nb in &mut adj {
        nb.sort_unstable();
    }
    for (j, nb) in adj.iter().enumerate() {
        for (p, &i) in nb.iter().enumerate() {
            for &k in &nb[p + 1..] {
                topo.angles.push([i, j, k]);
            }
        }
    }
    for &[j, k] in &topo.bonds {
        let i = adj[j].iter().copied().find(|&v| v != k);
        let l = adj[k].iter().copied().find(|&v| v != j);
        if let (Some(i), Some(l)) = (i, l) {
            if angle_deg(x[i], x[j], x[k]) < 170.0 && angle_deg(x[j], x[k], x[l]) < 170.0 {
                topo.torsions.push([i, j, k, l]);
            }
        }
    }
}

/// `n` molecules generated from `seed`. Molecule `i` depends only on
/// `(seed, i)`, so the output is identical for any worker count.
pub fn gen_synthetic(n: usize, seed: u64, grids: &GridSet, workers: usize) -> Vec<MoleculeRecord> {
    gen_synthetic_detailed(n, seed, grids, &SyntheticSpecTable::standard(), workers)
        .into_iter()
        .map(|m| m.record)
        .collect()
}

pub fn gen_synthetic_detailed(
    n: usize,
    seed: u64,
    grids: &GridSet,
    table: &SyntheticSpecTable,
    workers: usize,
) -> Vec<SyntheticMolecule> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(|i| synthesize(i, seed, grids, table)).collect();
    }
    let chunk = n.div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let range = (w * chunk).min(n)..((w + 1) * chunk).min(n);
                s.spawn(move || range.map(|i| synthesize(i, seed, grids, table)).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("generator thread panicked"))
            .collect()
    })
}
